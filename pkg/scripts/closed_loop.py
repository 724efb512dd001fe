"""Synthesize -> train -> held-out accuracy -> fall detection on freshly rendered sequences.

    python scripts/closed_loop.py /tmp/mf_closed_loop --epochs 100
"""
import argparse
import sys

from motionforge.closedloop import run

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("workdir")
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fall-videos", type=int, default=20)
    a = ap.parse_args()
    res = run(a.workdir, per_class=a.per_class, epochs=a.epochs, seed=a.seed,
              n_fall_videos=a.fall_videos)
    print(res.to_json())
    ok = res.heldout_accuracy >= 0.90 and res.fall_rate >= 0.80
    sys.exit(0 if ok else 1)

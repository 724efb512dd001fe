"""Write procedural person/mask pairs and empty backgrounds for trying the pipeline."""
import argparse

from motionforge.toy import write_toy_assets

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="output directory (persons/ and backgrounds/ are created inside)")
    ap.add_argument("--persons", type=int, default=24)
    ap.add_argument("--backgrounds", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    p, b = write_toy_assets(a.out, n_persons=a.persons, n_backgrounds=a.backgrounds, seed=a.seed)
    print(f"persons: {p}\nbackgrounds: {b}")

"""Window-length sweep on a labelled frame-directory corpus.

With the oracle detector this only exercises the seconds->frames table;
pass --checkpoint to score a trained model.
"""
import argparse

from motionforge.classifier import load_checkpoint
from motionforge.evaluation import ModelDetector, OracleDetector, format_sweep, interval_sweep, load_corpus
from motionforge.streaming import Classifier

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("corpus")
    ap.add_argument("--checkpoint")
    ap.add_argument("--fps", type=float, default=25.0)
    ap.add_argument("--seconds", default="0.4,0.6,0.8,1.0,1.2,1.4,1.6")
    a = ap.parse_args()
    videos = load_corpus(a.corpus)
    if a.checkpoint:
        detector = ModelDetector(Classifier(*load_checkpoint(a.checkpoint)))
    else:
        detector = OracleDetector()
    rows = interval_sweep(videos, detector, [float(s) for s in a.seconds.split(",")], a.fps)
    print(format_sweep(rows), end="")

"""Decode the transformation class (left, right, rotation) from context codes."""

import argparse

import numpy as np

from predenc.datagen import MovieSpec, sample_movie_dataset
from predenc.evaluation import confusion_matrix, train_decoder_classify
from predenc.model import EnergyConfig, NeighborhoodSpec
from predenc.training import ModelShape, TrainConfig, estimate_context, train

CLASSES = (
    ("left", dict(kind="translation", shift_set=((-1, 0),))),
    ("right", dict(kind="translation", shift_set=((1, 0),))),
    ("rotation", dict(kind="rotation", min_rotation=6.0)),
)


def make(seed, count):
    out = []
    for k, (name, kw) in enumerate(CLASSES):
        spec = MovieSpec(seed=seed * 10 + k, count=count, patch_size=8, num_frames=3, texture_size=64, **kw)
        out += [(s, name) for s, _ in sample_movie_dataset(spec)]
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=150, help="training sequences per class")
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    train_set, test_set = make(1, args.count), make(2, 100)
    params, _, _ = train([s for s, _ in train_set], ModelShape(3, 64, 32, 9),
                         TrainConfig(learning_rate=2e-4, momentum=0.9, epochs=args.epochs, seed=0))
    nb, ecfg = NeighborhoodSpec.full(3), EnergyConfig(0.1)
    codes = lambda data: np.array([estimate_context(params, s, nb, ecfg, 50) for s, _ in data])  # noqa: E731
    clf = train_decoder_classify(codes(train_set), [c for _, c in train_set])
    truth = [c for _, c in test_set]
    pred = clf.predict(codes(test_set))
    print(f"held-out accuracy {np.mean(np.array(pred) == np.array(truth)):.3f}")
    print("classes", clf.classes)
    print(confusion_matrix(truth, pred, clf.classes))


if __name__ == "__main__":
    main()

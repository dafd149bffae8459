"""Train on horizontally shifted texture patches and report prediction RMSE."""

import argparse
import time

import numpy as np

from predenc.datagen import MovieSpec, sample_movie_dataset
from predenc.evaluation import rmse
from predenc.inference import InferConfig, predict_next
from predenc.model import NeighborhoodSpec
from predenc.training import ModelShape, TrainConfig, train

SPEC = dict(kind="translation", patch_size=8, num_frames=3, texture_size=64, shift_set=((-1, 0), (1, 0)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--learning-rate", type=float, default=2e-4)
    ap.add_argument("--momentum", type=float, default=0.9)
    args = ap.parse_args()

    train_set = [s for s, _ in sample_movie_dataset(MovieSpec(count=args.count, seed=1, **SPEC))]
    test_set = [s for s, _ in sample_movie_dataset(MovieSpec(count=50, seed=99, **SPEC))]
    start = time.perf_counter()
    params, history, _ = train(train_set, ModelShape(3, 64, 32, 9),
                               TrainConfig(learning_rate=args.learning_rate, momentum=args.momentum,
                                           epochs=args.epochs, seed=0))
    print(f"trained in {time.perf_counter() - start:.1f}s, energy {history.energy[0]:.2f} -> {history.energy[-1]:.2f}")

    nb = NeighborhoodSpec.full(3)
    cfg = InferConfig(outer_iterations=20, tolerance=1e-6)
    pred = np.mean([rmse(predict_next(params, s.frames[:2], nb, cfg).frame, s.frames[2]) for s in test_set])
    copy = np.mean([rmse(s.frames[1], s.frames[2]) for s in test_set])
    print(f"held-out prediction RMSE {pred:.3f}, copy-last-frame baseline {copy:.3f}")


if __name__ == "__main__":
    main()

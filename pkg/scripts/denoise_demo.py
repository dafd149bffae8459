"""Denoise toy sequences at several prior weights."""

import numpy as np

from predenc.datagen import MovieSpec, add_gaussian_noise, sample_movie_dataset
from predenc.evaluation import rmse
from predenc.inference import DenoiseConfig, denoise_sequence
from predenc.model import NeighborhoodSpec
from predenc.training import ModelShape, TrainConfig, train

SPEC = dict(kind="translation", patch_size=8, num_frames=3, texture_size=64, shift_set=((-1, 0), (1, 0)))


def main():
    train_set = [s for s, _ in sample_movie_dataset(MovieSpec(count=200, seed=1, **SPEC))]
    test_set = [s for s, _ in sample_movie_dataset(MovieSpec(count=50, seed=99, **SPEC))]
    params, _, _ = train(train_set, ModelShape(3, 64, 32, 9),
                         TrainConfig(learning_rate=2e-4, momentum=0.9, epochs=50, seed=0))
    nb = NeighborhoodSpec.full(3)
    noisy = [add_gaussian_noise(s, 0.2, i) for i, s in enumerate(test_set)]
    print(f"input RMSE {np.mean([rmse(n, c) for n, c in zip(noisy, test_set)]):.4f}")
    for mu in (0.3, 1.0, 3.0, 10.0):
        cfg = DenoiseConfig(mu=mu, outer_iterations=20, tolerance=1e-6)
        out = [denoise_sequence(params, n, nb, cfg).sequence for n in noisy]
        print(f"mu={mu:<5} output RMSE {np.mean([rmse(o, c) for o, c in zip(out, test_set)]):.4f}")


if __name__ == "__main__":
    main()

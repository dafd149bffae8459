"""Roll a chirp model forward and compare against repeating the last frame."""

import argparse

import numpy as np

from predenc.datagen import make_chirp_dataset
from predenc.evaluation import rmse
from predenc.inference import InferConfig, rollout
from predenc.model import FrameSequence, NeighborhoodSpec
from predenc.training import ModelShape, TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train-count", type=int, default=2000)
    ap.add_argument("--test-count", type=int, default=30)
    ap.add_argument("--horizon", type=int, default=11)
    args = ap.parse_args()

    data = make_chirp_dataset(args.train_count, 0)
    # three-interval windows at staggered offsets
    windows = [FrameSequence(s.frames[i % 14:i % 14 + 3]) for i, (s, _) in enumerate(data)]
    params, history, _ = train(windows, ModelShape(3, 10, 20, 6),
                               TrainConfig(learning_rate=1e-3, momentum=0.9, epochs=30, seed=0))
    print(f"energy ratio {history.energy[-1] / history.energy[0]:.3f}")

    nb = NeighborhoodSpec.full(3)
    cfg = InferConfig(outer_iterations=30, tolerance=1e-6)
    model, persist = [], []
    for seq, _ in make_chirp_dataset(args.test_count, 1):
        out = rollout(params, seq.frames[:5], nb, cfg, args.horizon)
        model.append([rmse(f, seq.frames[5 + k]) for k, f in enumerate(out)])
        persist.append([rmse(seq.frames[4], seq.frames[5 + k]) for k in range(args.horizon)])
    print("step  rollout  persistence")
    for k, (m, p) in enumerate(zip(np.mean(model, axis=0), np.mean(persist, axis=0))):
        print(f"{k + 1:4d}  {m:7.3f}  {p:11.3f}")


if __name__ == "__main__":
    main()

"""Unsupervised learning: momentum SGD on the filters alternated with
per-sequence context estimation."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import EmptyDataset, InconsistentShapes, ShapeMismatch
from .fileio import atomic_write_text, csv_text
from .model import (
    EnergyConfig,
    FrameSequence,
    ModelParams,
    NeighborhoodSpec,
    context_quadratic,
    energy,
    energy_grad_params,
    energy_terms,
)
from .numerics import MinimizeOptions, lbfgs_minimize, smoothed_l1


@dataclass(frozen=True)
class Corruption:
    """Input corruption for denoising training: none, gaussian or mask."""

    mode: str = "none"
    sigma: float = 0.0
    probability: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "gaussian", "mask"):
            raise ValueError(f"unknown corruption mode {self.mode!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 <= self.probability <= 1:
            raise ValueError("probability must be in [0, 1]")


@dataclass(frozen=True)
class ModelShape:
    num_frames: int
    frame_dim: int
    num_hidden: int
    num_context: int


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.5
    batch_size: int = 10
    epochs: int = 50
    z_lbfgs_steps: int = 5
    lam: float = 0.1
    l1_eps: float = 1e-6
    corruption: Corruption = field(default_factory=Corruption)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # epochs == 0 is allowed and returns the initialization untouched
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.z_lbfgs_steps < 1:
            raise ValueError("z_lbfgs_steps must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def energy_config(self) -> EnergyConfig:
        return EnergyConfig(self.lam, self.l1_eps)


@dataclass
class TrainHistory:
    energy: List[float] = field(default_factory=list)
    data_term: List[float] = field(default_factory=list)
    sparsity_term: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.energy)

    def rows(self, timing: bool = True):
        cols = [self.energy, self.data_term, self.sparsity_term] + ([self.seconds] if timing else [])
        return [(i + 1,) + tuple(repr(float(v)) for v in vals) for i, vals in enumerate(zip(*cols))]

    def to_csv(self, timing: bool = True) -> str:
        """Per-epoch CSV; ``timing=False`` drops the wall-clock column so the
        file is reproducible byte for byte."""
        header = ("epoch", "energy", "data_term", "sparsity_term") + (("seconds",) if timing else ())
        return csv_text(header, self.rows(timing))

    def save_csv(self, path, timing: bool = True) -> None:
        atomic_write_text(path, self.to_csv(timing))


def estimate_context(
    params: ModelParams,
    seq: FrameSequence,
    nb: NeighborhoodSpec,
    cfg: EnergyConfig,
    budget: int,
    z0=None,
    analysis=None,
    gradient_tolerance: float = 1e-9,
) -> np.ndarray:
    """Minimize the energy over z with the parameters fixed.

    The data term is an exact quadratic in z, so it is assembled once and the
    L-BFGS iterations run on a K-dimensional problem. Starts from ``z0``
    (zeros by default) and never returns a z with higher energy than ``z0``.
    """
    K = params.num_context
    z0 = np.zeros(K) if z0 is None else np.array(z0, dtype=float)
    Q, c, const = context_quadratic(params, seq, nb, analysis)
    lam, eps = cfg.lam, cfg.l1_eps

    def objective(z):
        Qz = Q @ z
        value = z @ Qz - 2.0 * (c @ z) + const
        grad = 2.0 * (Qz - c)
        if lam:
            l1, l1_grad = smoothed_l1(z, eps)
            value += lam * l1
            grad += lam * l1_grad
        return value, grad

    opts = MinimizeOptions(max_iterations=budget, gradient_tolerance=gradient_tolerance)
    z = lbfgs_minimize(objective, z0, opts).x
    # the quadratic form is rounded differently from the direct energy
    if energy(params, seq, nb, z, cfg, analysis) > energy(params, seq, nb, z0, cfg, analysis):
        return z0
    return z


def _batch_gradient(params, batch, nb, cfg: EnergyConfig, analyses=None) -> ModelParams:
    dW = np.zeros_like(params.W)
    dWz = np.zeros_like(params.Wz)
    for i, (seq, z) in enumerate(batch):
        a = None if analyses is None else analyses[i]
        g = energy_grad_params(params, seq, nb, z, cfg, a)
        dW += g.W
        dWz += g.Wz
    return ModelParams(dW, dWz)


def sgd_step(params: ModelParams, batch, velocity: ModelParams, cfg: TrainConfig, nb: NeighborhoodSpec, analyses=None):
    """One momentum step on the summed batch energy.

    velocity <- nu * velocity - eta * grad;  params <- params + velocity.
    """
    if not params.same_shape(velocity):
        raise ShapeMismatch("velocity shape differs from params")
    grad = _batch_gradient(params, batch, nb, cfg.energy_config, analyses)
    vW = cfg.momentum * velocity.W - cfg.learning_rate * grad.W
    vWz = cfg.momentum * velocity.Wz - cfg.learning_rate * grad.Wz
    return ModelParams(params.W + vW, params.Wz + vWz), ModelParams(vW, vWz)


def corrupt(seq: FrameSequence, corruption: Corruption, rng: np.random.Generator) -> FrameSequence:
    """Return a corrupted copy of ``seq`` (observed frames only)."""
    frames = seq.frames.copy()
    obs = seq.observed
    if corruption.mode == "gaussian":
        frames[obs] += corruption.sigma * rng.standard_normal(frames[obs].shape)
    elif corruption.mode == "mask":
        keep = rng.random(frames[obs].shape) >= corruption.probability
        frames[obs] = frames[obs] * keep
    return FrameSequence(frames, obs)


def _check_dataset(dataset: Sequence[FrameSequence], shape: ModelShape):
    if not dataset:
        raise EmptyDataset("dataset is empty")
    for i, seq in enumerate(dataset):
        if len(seq) != shape.num_frames or seq.frame_dim != shape.frame_dim:
            raise InconsistentShapes(
                f"sequence {i} is {len(seq)}x{seq.frame_dim}, expected {shape.num_frames}x{shape.frame_dim}"
            )


def initial_params(shape: ModelShape, seed: int) -> ModelParams:
    rng = np.random.default_rng([seed, 0x1417])
    return ModelParams.initialize(shape.num_frames, shape.frame_dim, shape.num_hidden, shape.num_context, rng)


def train(
    dataset: Sequence[FrameSequence],
    shape: ModelShape,
    cfg: TrainConfig,
    nb: Optional[NeighborhoodSpec] = None,
    params: Optional[ModelParams] = None,
    on_epoch: Optional[Callable[[int, ModelParams, TrainHistory], None]] = None,
):
    """Fit filters and contexts; returns ``(params, history, contexts)``.

    Per minibatch: one SGD step with the current context estimates, then at
    most ``z_lbfgs_steps`` L-BFGS iterations per sequence, warm-started from
    that sequence's previous estimate. Reproducible given ``cfg.seed``.
    """
    _check_dataset(dataset, shape)
    nb = nb or NeighborhoodSpec.full(shape.num_frames)
    if params is None:
        params = initial_params(shape, cfg.seed)
    ecfg = cfg.energy_config
    m = len(dataset)
    contexts = np.zeros((m, shape.num_context))
    velocity = ModelParams.zeros_like(params)
    history = TrainHistory()
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def refit(job):
        i, seq, a = job
        z = estimate_context(params, seq, nb, ecfg, cfg.z_lbfgs_steps, contexts[i], a)
        terms = energy_terms(params, seq, nb, z, ecfg, a)
        return i, z, terms

    try:
        for epoch in range(cfg.epochs):
            start = time.perf_counter()
            order = np.random.default_rng([cfg.seed, epoch, 1]).permutation(m)
            noise_rng = np.random.default_rng([cfg.seed, epoch, 2])
            total = data = sparse = 0.0
            for b in range(0, m, cfg.batch_size):
                idx = order[b: b + cfg.batch_size]
                if cfg.corruption.mode == "none":
                    analyses = None
                else:
                    analyses = [corrupt(dataset[i], cfg.corruption, noise_rng).frames for i in idx]
                batch = [(dataset[i], contexts[i]) for i in idx]
                params, velocity = sgd_step(params, batch, velocity, cfg, nb, analyses)
                jobs = [(i, dataset[i], None if analyses is None else analyses[j]) for j, i in enumerate(idx)]
                results = pool.map(refit, jobs) if pool else map(refit, jobs)
                for i, z, terms in results:
                    contexts[i] = z
                    total += terms.total
                    sparse += terms.sparsity
                    data += terms.total - terms.sparsity
            history.energy.append(total / m)
            history.data_term.append(data / m)
            history.sparsity_term.append(sparse / m)
            history.seconds.append(time.perf_counter() - start)
            if on_epoch is not None:
                on_epoch(epoch + 1, params, history)
    finally:
        if pool:
            pool.shutdown()
    return params, history, contexts

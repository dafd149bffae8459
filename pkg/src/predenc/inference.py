"""Inference with partial observations: alternating context / frame
estimation for prediction and interpolation, rollout, and denoising."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Sequence

import numpy as np

from .errors import MultipleMissingFrames, NoMissingFrame
from .model import (
    EnergyConfig,
    FrameSequence,
    ModelParams,
    NeighborhoodSpec,
    _check_compatible,
    _forward,
    energy,
)
from .numerics import solve_quadratic
from .training import estimate_context


@dataclass(frozen=True)
class InferConfig:
    outer_iterations: int = 50
    z_budget: int = 50
    tolerance: float = 1e-7
    lam: float = 0.1
    l1_eps: float = 1e-6

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.z_budget < 1:
            raise ValueError("z_budget must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")

    @property
    def energy_config(self) -> EnergyConfig:
        return EnergyConfig(self.lam, self.l1_eps)


@dataclass(frozen=True)
class DenoiseConfig(InferConfig):
    mu: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not self.mu > 0:
            raise ValueError("mu must be > 0")


class InferenceResult(NamedTuple):
    frame: np.ndarray
    z: np.ndarray
    energy: float
    trace: List[float]      # objective after every half-step, starting value first


class DenoiseResult(NamedTuple):
    sequence: FrameSequence
    z: np.ndarray
    objective: float
    trace: List[float]


def _frame_system(params: ModelParams, seq: FrameSequence, nb: NeighborhoodSpec, z, u: int):
    """Normal equations A x_u = rhs for the energy terms involving frame u.

    Term u contributes |x_u - xhat_u|^2 with xhat_u independent of x_u.
    Each dependent t (u in N(t)) contributes |x_t - b_t - M_t x_u|^2 with
    M_t = W_t' diag(gain) W_u / |N(t)| and b_t the prediction without u.
    """
    work = seq.with_frame(u, np.zeros(seq.frame_dim))
    fw = _forward(params, work, nb, z)
    D = seq.frame_dim
    A = np.zeros((D, D))
    rhs = np.zeros(D)
    if fw.active[u]:
        A += np.eye(D)
        rhs += params.W[u].T @ fw.H[u]
    for t in nb.dependents(u):
        if not fw.active[t]:
            continue
        M = (params.W[t].T * fw.gain) @ params.W[u] / len(nb.neighbors[t])
        b = params.W[t].T @ fw.H[t]
        A += M.T @ M
        rhs += M.T @ (fw.X[t] - b)
    return A, rhs


def solve_for_frame(params, seq, nb, z, u: int, data_weight: float = 0.0, data_target=None) -> np.ndarray:
    """Exact minimizer over x_u of the energy terms that involve x_u.

    ``data_weight`` > 0 adds ``data_weight * |data_target - x_u|^2`` (the
    denoising data term).
    """
    _check_compatible(params, seq, nb)
    A, rhs = _frame_system(params, seq, nb, np.asarray(z, dtype=float), u)
    if data_weight:
        A = A + data_weight * np.eye(A.shape[0])
        rhs = rhs + data_weight * np.asarray(data_target, dtype=float)
    return solve_quadratic(A, -rhs)


def _neighbor_mean(seq: FrameSequence, nb: NeighborhoodSpec, u: int) -> np.ndarray:
    idx = [i for i in nb.neighbors[u] if seq.observed[i]]
    if not idx:
        return np.zeros(seq.frame_dim)
    return seq.frames[idx].mean(axis=0)


def infer_missing_frame(params, seq: FrameSequence, nb: NeighborhoodSpec, cfg: InferConfig) -> InferenceResult:
    """Jointly estimate the single missing frame and the context.

    x_u starts at the mean of its observed neighbours and z at zero; then
    alternate an L-BFGS z-step with the exact x_u solve until the relative
    energy improvement over one round falls below ``cfg.tolerance``.
    The tracked objective is the full energy, which neither step increases.
    """
    missing = seq.missing
    if not missing:
        raise NoMissingFrame("sequence has no unobserved frame")
    if len(missing) > 1:
        raise MultipleMissingFrames(f"frames {missing} are unobserved; fill them one at a time")
    u = missing[0]
    ecfg = cfg.energy_config
    work = seq.with_frame(u, _neighbor_mean(seq, nb, u))
    z = np.zeros(params.num_context)
    current = energy(params, work, nb, z, ecfg)
    trace = [current]
    for _ in range(cfg.outer_iterations):
        start = current
        z = estimate_context(params, work, nb, ecfg, cfg.z_budget, z)
        trace.append(energy(params, work, nb, z, ecfg))
        work = work.with_frame(u, solve_for_frame(params, work, nb, z, u))
        current = energy(params, work, nb, z, ecfg)
        trace.append(current)
        if start - current <= cfg.tolerance * max(abs(start), 1e-300):
            break
    return InferenceResult(work.frames[u].copy(), z, current, trace)


def predict_next(params, observed: Sequence, nb, cfg: InferConfig) -> InferenceResult:
    """Predict frame N from the N-1 frames before it."""
    observed = np.asarray(observed, dtype=float)
    N = params.num_frames
    frames = np.vstack([observed, np.zeros((1, observed.shape[1]))])
    mask = np.arange(N) < N - 1
    return infer_missing_frame(params, FrameSequence(frames, mask), nb, cfg)


def interpolate(params, before: Sequence, after: Sequence, nb, cfg: InferConfig) -> InferenceResult:
    """Fill the frame between ``before`` and ``after``."""
    before = np.asarray(before, dtype=float).reshape(-1, params.frame_dim)
    after = np.asarray(after, dtype=float).reshape(-1, params.frame_dim)
    u = len(before)
    frames = np.vstack([before, np.zeros((1, params.frame_dim)), after])
    mask = np.arange(len(frames)) != u
    return infer_missing_frame(params, FrameSequence(frames, mask), nb, cfg)


def rollout(params, seed_frames: Sequence, nb, cfg: InferConfig, horizon: int) -> List[np.ndarray]:
    """Autoregressive prediction of ``horizon`` further frames.

    The context is re-estimated from scratch at every step.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    history = [np.asarray(f, dtype=float) for f in seed_frames]
    if len(history) < params.num_frames - 1:
        raise ValueError(f"need at least {params.num_frames - 1} seed frames")
    out = []
    for _ in range(horizon):
        frame = predict_next(params, history[-(params.num_frames - 1):], nb, cfg).frame
        history.append(frame)
        out.append(frame)
    return out


def denoise_objective(params, seq, nb, z, cfg: DenoiseConfig, noisy: FrameSequence) -> float:
    diff = seq.frames - noisy.frames
    return energy(params, seq, nb, z, cfg.energy_config) + cfg.mu * float(np.sum(diff * diff))


def denoise_sequence(params, noisy: FrameSequence, nb, cfg: DenoiseConfig) -> DenoiseResult:
    """Minimize energy(x, z) + mu * sum_t |noisy_t - x_t|^2 over all frames and z.

    Block-coordinate descent: a z-step, then one exact solve per frame in
    order, repeated until the relative improvement is below tolerance.
    """
    if noisy.missing:
        raise ValueError("denoising needs every frame observed")
    ecfg = cfg.energy_config
    work = noisy
    z = np.zeros(params.num_context)
    current = denoise_objective(params, work, nb, z, cfg, noisy)
    trace = [current]
    for _ in range(cfg.outer_iterations):
        start = current
        z = estimate_context(params, work, nb, ecfg, cfg.z_budget, z)
        trace.append(denoise_objective(params, work, nb, z, cfg, noisy))
        for u in range(len(work)):
            x = solve_for_frame(params, work, nb, z, u, cfg.mu, noisy.frames[u])
            work = work.with_frame(u, x)
            trace.append(denoise_objective(params, work, nb, z, cfg, noisy))
        current = trace[-1]
        if start - current <= cfg.tolerance * max(abs(start), 1e-300):
            break
    return DenoiseResult(work, z, current, trace)

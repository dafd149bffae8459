"""The context-gated predictive encoder.

For a sequence of frames ``x_0 .. x_{N-1}`` (each a flattened D-vector) the
model predicts every frame from its neighbours only::

    y_t    = mean over tau in N(t) of W[tau] @ x[tau]        (B,)
    gain   = Wz @ z                                          (B,)
    xhat_t = W[t].T @ (y_t * gain)                           (D,)

and scores a sequence by the energy ``sum_t |x_t - xhat_t|^2 + lam * |z|_1``
(with a smoothed absolute value). Frame indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    IndexOutOfRange,
    MissingNeighbor,
    ShapeMismatch,
)
from .fileio import atomic_write_bytes, read_container, write_container
from .numerics import smoothed_l1


@dataclass(frozen=True)
class ModelParams:
    """Per-frame filters ``W`` with shape (N, B, D) and feedback ``Wz`` (B, K).

    The same container holds gradients and momentum buffers.
    """

    W: np.ndarray
    Wz: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        Wz = np.array(self.Wz, dtype=float)
        if W.ndim != 3 or W.shape[0] < 2:
            raise ShapeMismatch(f"W must have shape (N>=2, B, D), got {W.shape}")
        if Wz.ndim != 2 or Wz.shape[0] != W.shape[1]:
            raise ShapeMismatch(f"Wz must have shape ({W.shape[1]}, K), got {Wz.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(Wz))):
            raise ValueError("parameters must be finite")
        W.setflags(write=False)
        Wz.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Wz", Wz)

    @property
    def num_frames(self) -> int:
        return self.W.shape[0]

    @property
    def num_hidden(self) -> int:
        return self.W.shape[1]

    @property
    def frame_dim(self) -> int:
        return self.W.shape[2]

    @property
    def num_context(self) -> int:
        return self.Wz.shape[1]

    @classmethod
    def initialize(cls, num_frames, frame_dim, num_hidden, num_context, rng) -> "ModelParams":
        """Uniform fan-scaled initialization, a = sqrt(6 / (fan_in + fan_out))."""
        a = np.sqrt(6.0 / (num_hidden + frame_dim))
        az = np.sqrt(6.0 / (num_hidden + num_context))
        W = rng.uniform(-a, a, size=(num_frames, num_hidden, frame_dim))
        Wz = rng.uniform(-az, az, size=(num_hidden, num_context))
        return cls(W, Wz)

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls(np.zeros_like(other.W), np.zeros_like(other.Wz))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.Wz.ravel()])

    def from_vector(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        n = self.W.size
        if vec.shape != (n + self.Wz.size,):
            raise ShapeMismatch(f"vector has shape {vec.shape}")
        return ModelParams(vec[:n].reshape(self.W.shape), vec[n:].reshape(self.Wz.shape))

    def same_shape(self, other: "ModelParams") -> bool:
        return self.W.shape == other.W.shape and self.Wz.shape == other.Wz.shape


@dataclass(frozen=True)
class NeighborhoodSpec:
    """For each frame t, the ordered index set N(t) that supports y_t."""

    neighbors: tuple

    def __post_init__(self):
        nb = tuple(tuple(int(i) for i in n) for n in self.neighbors)
        size = len(nb)
        for t, n in enumerate(nb):
            if not n:
                raise ValueError(f"neighbourhood of frame {t} is empty")
            if t in n:
                raise ValueError(f"frame {t} may not be its own neighbour")
            if any(i < 0 or i >= size for i in n) or len(set(n)) != len(n):
                raise ValueError(f"invalid neighbourhood {n} for frame {t}")
        object.__setattr__(self, "neighbors", nb)

    def __len__(self):
        return len(self.neighbors)

    @classmethod
    def full(cls, num_frames: int) -> "NeighborhoodSpec":
        return cls(tuple(tuple(i for i in range(num_frames) if i != t) for t in range(num_frames)))

    @classmethod
    def window(cls, num_frames: int, radius: int) -> "NeighborhoodSpec":
        if radius < 1:
            raise ValueError("radius must be >= 1")
        return cls(tuple(
            tuple(i for i in range(max(0, t - radius), min(num_frames, t + radius + 1)) if i != t)
            for t in range(num_frames)
        ))

    @classmethod
    def causal(cls, num_frames: int, order: Optional[int] = None) -> "NeighborhoodSpec":
        """N(t) = the ``order`` most recent past frames.

        Frame 0 has no past; it is supported by frame 1 so that every
        neighbourhood stays non-empty.
        """
        order = order or num_frames - 1
        nb = [(1,)]
        for t in range(1, num_frames):
            nb.append(tuple(range(max(0, t - order), t)))
        return cls(tuple(nb))

    def dependents(self, u: int) -> tuple:
        """Frames t whose prediction uses frame u (u in N(t))."""
        return tuple(t for t, n in enumerate(self.neighbors) if u in n)

    def averaging_matrix(self) -> np.ndarray:
        size = len(self.neighbors)
        A = np.zeros((size, size))
        for t, n in enumerate(self.neighbors):
            A[t, list(n)] = 1.0 / len(n)
        return A

    def to_json(self):
        return [list(n) for n in self.neighbors]


@dataclass(frozen=True)
class FrameSequence:
    """N frames of dimension D plus an observed mask.

    Values stored at unobserved positions are ignored.
    """

    frames: np.ndarray
    observed: np.ndarray = field(default=None)

    def __post_init__(self):
        frames = np.array(self.frames, dtype=float)
        if frames.ndim != 2:
            raise ShapeMismatch(f"frames must be (N, D), got {frames.shape}")
        if self.observed is None:
            observed = np.ones(frames.shape[0], dtype=bool)
        else:
            observed = np.array(self.observed, dtype=bool)
        if observed.shape != (frames.shape[0],):
            raise ShapeMismatch("observed mask length differs from frame count")
        if not np.all(np.isfinite(frames[observed])):
            raise ValueError("observed frames must be finite")
        frames[~observed] = 0.0
        frames.setflags(write=False)
        observed.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "observed", observed)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def frame_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def missing(self) -> list:
        return [int(i) for i in np.flatnonzero(~self.observed)]

    def with_frame(self, u: int, value) -> "FrameSequence":
        frames = self.frames.copy()
        frames[u] = value
        observed = self.observed.copy()
        observed[u] = True
        return FrameSequence(frames, observed)

    def without_frame(self, u: int) -> "FrameSequence":
        observed = self.observed.copy()
        observed[u] = False
        return FrameSequence(self.frames, observed)


@dataclass(frozen=True)
class EnergyConfig:
    lam: float = 0.1
    l1_eps: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.l1_eps > 0:
            raise ValueError("l1_eps must be > 0")


class EnergyTerms(NamedTuple):
    total: float
    residuals: np.ndarray  # per-frame squared error, 0 for dropped terms
    sparsity: float        # lam * smoothed |z|_1
    active: np.ndarray     # frames whose residual is counted


def _check_compatible(params: ModelParams, seq: FrameSequence, nb: NeighborhoodSpec):
    if len(seq) != params.num_frames or len(nb) != params.num_frames:
        raise DimensionMismatch(
            f"model has {params.num_frames} frames, sequence {len(seq)}, neighbourhood {len(nb)}"
        )
    if seq.frame_dim != params.frame_dim:
        raise DimensionMismatch(f"frame dim {seq.frame_dim} != model dim {params.frame_dim}")


def _check_z(params: ModelParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (params.num_context,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({params.num_context},)")
    return z


def active_terms(seq: FrameSequence, nb: NeighborhoodSpec) -> np.ndarray:
    """Boolean mask of frames whose residual enters the energy."""
    obs = seq.observed
    return np.array([obs[t] and all(obs[i] for i in n) for t, n in enumerate(nb.neighbors)])


def hidden_activation(params: ModelParams, seq: FrameSequence, nb: NeighborhoodSpec, t: int) -> np.ndarray:
    _check_compatible(params, seq, nb)
    if not 0 <= t < len(seq):
        raise IndexOutOfRange(f"frame index {t} out of range")
    idx = list(nb.neighbors[t])
    if not all(seq.observed[idx]):
        raise MissingNeighbor(f"a neighbour of frame {t} is unobserved")
    return np.einsum("nbd,nd->b", params.W[idx], seq.frames[idx]) / len(idx)


def modulation(params: ModelParams, z) -> np.ndarray:
    return params.Wz @ _check_z(params, z)


def predict_frame(params, seq, nb, z, t) -> np.ndarray:
    y = hidden_activation(params, seq, nb, t)
    return params.W[t].T @ (y * modulation(params, z))


class _Forward(NamedTuple):
    X: np.ndarray       # targets (N, D)
    A: np.ndarray       # analysis inputs (N, D)
    Y: np.ndarray       # hidden activations (N, B)
    gain: np.ndarray    # Wz z (B,)
    H: np.ndarray       # gated activations (N, B)
    R: np.ndarray       # residuals, zero on inactive rows (N, D)
    active: np.ndarray


def _forward(params, seq, nb, z, analysis=None) -> _Forward:
    _check_compatible(params, seq, nb)
    z = _check_z(params, z)
    active = active_terms(seq, nb)
    if not active.any():
        raise MissingNeighbor("no frame has a fully observed neighbourhood")
    X = seq.frames
    if analysis is None:
        A = X
    else:
        A = np.where(seq.observed[:, None], np.asarray(analysis, dtype=float), 0.0)
        if A.shape != X.shape:
            raise ShapeMismatch("analysis frames must match the sequence shape")
    P = np.einsum("nbd,nd->nb", params.W, A)
    Y = nb.averaging_matrix() @ P
    gain = params.Wz @ z
    H = Y * gain
    Xhat = np.einsum("nbd,nb->nd", params.W, H)
    R = np.where(active[:, None], X - Xhat, 0.0)
    return _Forward(X, A, Y, gain, H, R, active)


def energy_terms(params, seq, nb, z, cfg: EnergyConfig, analysis=None) -> EnergyTerms:
    fw = _forward(params, seq, nb, z, analysis)
    residuals = np.einsum("nd,nd->n", fw.R, fw.R)
    sparsity = cfg.lam * smoothed_l1(z, cfg.l1_eps)[0] if cfg.lam else 0.0
    return EnergyTerms(float(residuals.sum() + sparsity), residuals, float(sparsity), fw.active)


def energy(params, seq, nb, z, cfg: EnergyConfig, analysis=None) -> float:
    """Sum of squared prediction errors over active frames plus lam * |z|_1.

    ``analysis`` optionally replaces the frames fed into the hidden layer
    (corrupted inputs during denoising training); targets stay ``seq``.
    """
    return energy_terms(params, seq, nb, z, cfg, analysis).total


def _backward(params, nb, fw):
    """Gradients of the data term w.r.t. hidden quantities."""
    E = -2.0 * fw.R                                   # dL/dxhat
    Q = np.einsum("nbd,nd->nb", params.W, E)          # dL/dH
    dgain = np.einsum("nb,nb->b", Q, fw.Y)
    dY = Q * fw.gain
    dP = nb.averaging_matrix().T @ dY                 # dL/d(W_tau a_tau)
    return E, dgain, dP


def energy_grad_z(params, seq, nb, z, cfg: EnergyConfig, analysis=None) -> np.ndarray:
    fw = _forward(params, seq, nb, z, analysis)
    _, dgain, _ = _backward(params, nb, fw)
    grad = params.Wz.T @ dgain
    if cfg.lam:
        grad = grad + cfg.lam * smoothed_l1(z, cfg.l1_eps)[1]
    return grad


def energy_grad_params(params, seq, nb, z, cfg: EnergyConfig, analysis=None) -> ModelParams:
    """Gradient w.r.t. every W_t and Wz.

    W_t enters twice: as the synthesis basis of xhat_t and as the analysis
    filter of every y_s with t in N(s). Both paths are accumulated.
    """
    z = np.asarray(z, dtype=float)
    fw = _forward(params, seq, nb, z, analysis)
    E, dgain, dP = _backward(params, nb, fw)
    dW = np.einsum("nb,nd->nbd", fw.H, E) + np.einsum("nb,nd->nbd", dP, fw.A)
    dWz = np.outer(dgain, z)
    return ModelParams(dW, dWz)


def energy_grad_frame(params, seq, nb, z, cfg: EnergyConfig, u: int) -> np.ndarray:
    """Gradient of the energy w.r.t. frame u.

    Frame u is treated as present (its stored value is the current estimate)
    even if the sequence marks it unobserved.
    """
    if not 0 <= u < len(seq):
        raise IndexOutOfRange(f"frame index {u} out of range")
    if not seq.observed[u]:
        seq = seq.with_frame(u, seq.frames[u])
    fw = _forward(params, seq, nb, z)
    E, _, dP = _backward(params, nb, fw)
    return -E[u] + params.W[u].T @ dP[u]


def context_quadratic(params, seq, nb, analysis=None):
    """Data term as a quadratic in z: z'Qz - 2c'z + const.

    With frames and filters fixed every prediction is linear in z,
    xhat_t = M_t z with M_t = W_t' diag(y_t) Wz.
    """
    fw = _forward(params, seq, nb, np.zeros(params.num_context), analysis)
    act = fw.active
    M = np.einsum("nbd,nb,bk->ndk", params.W[act], fw.Y[act], params.Wz)
    X = fw.X[act]
    Q = np.einsum("ndk,ndj->kj", M, M)
    c = np.einsum("ndk,nd->k", M, X)
    const = float(np.einsum("nd,nd->", X, X))
    return Q, c, const


# --- checkpoint file -------------------------------------------------------

CHECKPOINT_MAGIC = b"PENC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, nb: NeighborhoodSpec, cfg: EnergyConfig) -> None:
    """Write a "PENC" checkpoint atomically."""
    header = {
        "N": params.num_frames,
        "B": params.num_hidden,
        "D": params.frame_dim,
        "K": params.num_context,
        "neighborhood": nb.to_json(),
        "energy": {"lam": cfg.lam, "l1_eps": cfg.l1_eps},
    }
    payload = params.W.astype("<f8").tobytes() + params.Wz.astype("<f8").tobytes()
    atomic_write_bytes(path, write_container(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, payload))


def load_checkpoint(path):
    """Return ``(params, neighborhood, energy_config)`` from a "PENC" file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = read_container(blob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        N, B, D, K = (int(header[k]) for k in ("N", "B", "D", "K"))
        nb = NeighborhoodSpec(tuple(tuple(n) for n in header["neighborhood"]))
        cfg = EnergyConfig(**header["energy"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from exc
    expected = 8 * (N * B * D + B * K)
    if len(payload) != expected:
        raise FormatError(f"checkpoint payload has {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f8").astype(float)
    W = data[: N * B * D].reshape(N, B, D)
    Wz = data[N * B * D:].reshape(B, K)
    return ModelParams(W, Wz), nb, cfg

"""Evaluation: RMSE, histogram matching, linear decoders on context codes,
and exports for external visualization tools."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateDesign, ShapeMismatch, SingleClass, SingularSystem
from .fileio import csv_text, pgm_bytes, read_csv
from .model import FrameSequence, ModelParams
from .numerics import MinimizeOptions, lbfgs_minimize, solve_quadratic


def _as_array(a) -> np.ndarray:
    if isinstance(a, FrameSequence):
        return a.frames
    return np.asarray(a, dtype=float)


def rmse(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def histogram_match(output, reference) -> np.ndarray:
    """Give ``output`` exactly the value multiset of ``reference``.

    Pixels keep their rank order; ties go by original index.
    """
    output = np.asarray(output, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if output.shape != reference.shape:
        raise ShapeMismatch(f"shapes {output.shape} and {reference.shape} differ")
    if output.size == 0:
        raise ShapeMismatch("empty image")
    flat = output.ravel()
    order = np.argsort(flat, kind="stable")
    matched = np.empty_like(flat)
    matched[order] = np.sort(reference.ravel(), kind="stable")
    return matched.reshape(output.shape)


# --- classification --------------------------------------------------------

@dataclass(frozen=True)
class ClassifierModel:
    """Multinomial logistic regression on standardized codes.

    ``weights`` is (classes, K+1) with the bias in the last column.
    """

    weights: np.ndarray
    classes: tuple
    mean: np.ndarray
    scale: np.ndarray
    objective: float

    def _design(self, codes):
        X = (np.asarray(codes, dtype=float) - self.mean) / self.scale
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def probabilities(self, codes) -> np.ndarray:
        logits = self._design(codes) @ self.weights.T
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, codes) -> list:
        idx = np.argmax(self.probabilities(codes), axis=1)
        return [self.classes[i] for i in idx]


def _standardizer(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


def _softmax_objective(X1, Y, l2):
    n, d = X1.shape
    c = Y.shape[1]

    def objective(w):
        W = w.reshape(c, d)
        logits = X1 @ W.T
        top = logits.max(axis=1, keepdims=True)
        logsum = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
        value = float(np.sum(logsum) - np.sum(logits * Y))
        P = np.exp(logits - logsum[:, None])
        grad = (P - Y).T @ X1
        reg = W[:, :-1]
        value += 0.5 * l2 * float(np.sum(reg * reg))
        grad[:, :-1] += l2 * reg
        return value, grad.ravel()

    return objective


def train_decoder_classify(codes, labels, l2: float = 1e-4, init=None, max_iterations: int = 1000) -> ClassifierModel:
    """Fit a linear softmax decoder by L-BFGS on the penalized NLL (convex)."""
    X = np.asarray(codes, dtype=float)
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise SingleClass("need at least two classes")
    mean, scale = _standardizer(X)
    X1 = np.hstack([(X - mean) / scale, np.ones((X.shape[0], 1))])
    Y = np.zeros((X.shape[0], len(classes)))
    Y[np.arange(X.shape[0]), [classes.index(l) for l in labels]] = 1.0
    objective = _softmax_objective(X1, Y, l2)
    w0 = np.zeros(len(classes) * X1.shape[1]) if init is None else np.asarray(init, dtype=float).ravel()
    opts = MinimizeOptions(max_iterations=max_iterations, gradient_tolerance=1e-9, history_size=20)
    res = lbfgs_minimize(objective, w0, opts)
    return ClassifierModel(res.x.reshape(len(classes), -1), classes, mean, scale, res.value)


def confusion_matrix(truth, predicted, classes) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    classes = list(classes)
    M = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(truth, predicted):
        M[classes.index(t), classes.index(p)] += 1
    return M


# --- regression ------------------------------------------------------------

@dataclass(frozen=True)
class RegressionModel:
    weights: np.ndarray   # (K+1,), bias last

    def predict(self, codes) -> np.ndarray:
        X = np.asarray(codes, dtype=float)
        return X @ self.weights[:-1] + self.weights[-1]


def train_decoder_regress(codes, targets) -> RegressionModel:
    """Ordinary least squares with bias via the normal equations."""
    X = np.asarray(codes, dtype=float)
    y = np.asarray(targets, dtype=float)
    X1 = np.hstack([X, np.ones((X.shape[0], 1))])
    try:
        w = solve_quadratic(X1.T @ X1, -(X1.T @ y))
    except SingularSystem as exc:
        raise DegenerateDesign(str(exc)) from exc
    return RegressionModel(w)


def relative_error(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if np.any(truth == 0):
        raise ValueError("relative error undefined for zero ground truth")
    return np.abs(truth - pred) / np.abs(truth)


def error_cdf(errors):
    """Sorted errors and their empirical CDF levels."""
    e = np.sort(np.asarray(errors, dtype=float))
    return e, np.arange(1, e.size + 1) / e.size


@dataclass
class EvalReport:
    rmse: dict = field(default_factory=dict)
    confusion: Optional[np.ndarray] = None
    classes: tuple = ()
    accuracy: Optional[float] = None
    relative_errors: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rmse": self.rmse,
            "classes": list(self.classes),
            "confusion": None if self.confusion is None else self.confusion.tolist(),
            "accuracy": self.accuracy,
            "relative_error_median": {k: float(np.median(v)) for k, v in self.relative_errors.items()},
        }

    def cdf_csv(self) -> str:
        rows = []
        for kind, errs in sorted(self.relative_errors.items()):
            e, level = error_cdf(errs)
            rows.extend((kind, repr(float(a)), repr(float(b))) for a, b in zip(e, level))
        return csv_text(("kind", "relative_error", "cdf"), rows)


# --- exports ---------------------------------------------------------------

def filter_grid(params: ModelParams, patch_shape=None, max_filters: Optional[int] = None, gap: int = 1) -> np.ndarray:
    """Lay out filters as an image: one row per hidden unit, one column per frame.

    Each filter is min-max scaled to [0, 255] on its own; zero-range
    filters render as 128. Gaps are 0-valued. The grid is
    ``F*h + (F+1)*gap`` by ``N*w + (N+1)*gap`` for F filters of shape (h, w).
    """
    N, B, D = params.W.shape
    if patch_shape is None:
        side = math.isqrt(D)
        if side * side != D:
            raise ShapeMismatch(f"frame dim {D} is not square; pass patch_shape")
        patch_shape = (side, side)
    h, w = patch_shape
    F = B if max_filters is None else min(B, max_filters)
    grid = np.zeros((F * h + (F + 1) * gap, N * w + (N + 1) * gap))
    for f in range(F):
        for t in range(N):
            v = params.W[t, f]
            lo, hi = v.min(), v.max()
            cell = np.full(D, 128.0) if hi - lo <= 0 else 255.0 * (v - lo) / (hi - lo)
            r0 = gap + f * (h + gap)
            c0 = gap + t * (w + gap)
            grid[r0:r0 + h, c0:c0 + w] = cell.reshape(h, w)
    return grid


def export_filters(params: ModelParams, patch_shape=None, max_filters=None) -> bytes:
    return pgm_bytes(filter_grid(params, patch_shape, max_filters))


def export_codes(codes, labels: Sequence[dict]) -> str:
    """CSV with columns z1..zK followed by one column per label key."""
    codes = np.asarray(codes, dtype=float)
    keys = sorted({k for l in labels for k in l}) if labels else []
    header = [f"z{i + 1}" for i in range(codes.shape[1])] + keys
    rows = []
    for z, l in zip(codes, labels or [{}] * len(codes)):
        rows.append([repr(float(v)) for v in z] + [_label_cell(l.get(k)) for k in keys])
    return csv_text(header, rows)


def _label_cell(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return " ".join(repr(float(x)) for x in v)
    return str(v)


def read_codes(path):
    """Parse an exported codes CSV back into (codes, label columns)."""
    header, rows = read_csv(path)
    k = sum(1 for h in header if h.startswith("z") and h[1:].isdigit())
    codes = np.array([[float(v) for v in r[:k]] for r in rows]).reshape(len(rows), k)
    labels = [dict(zip(header[k:], r[k:])) for r in rows]
    return codes, labels

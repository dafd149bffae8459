"""Synthetic training data: transformed image-patch movies and chirps.

Every generator is a pure function of its arguments and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import EmptyImageBank, FormatError, PatchOutOfBounds
from .fileio import atomic_write_bytes, read_container, read_pgm, write_container
from .model import FrameSequence

KINDS = ("translation", "rotation", "scaling")


@dataclass(frozen=True)
class TransformLabel:
    """Constant per-frame transform plus where the patch came from.

    ``params`` is (dx, dy) in pixels/frame for translation, (dtheta,) in
    degrees/frame for rotation, (ratio,) per frame for scaling. ``source``
    and ``position`` locate the source patch so the sequence can be
    regenerated exactly.
    """

    kind: str
    params: Tuple[float, ...]
    position: Optional[Tuple[float, float]] = None
    source: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != (2 if self.kind == "translation" else 1):
            raise ValueError(f"wrong parameter count for {self.kind}: {params}")
        if self.kind == "scaling" and params[0] <= 0:
            raise ValueError("scaling ratio must be > 0")
        object.__setattr__(self, "params", params)
        if self.position is not None:
            object.__setattr__(self, "position", tuple(float(p) for p in self.position))

    @property
    def magnitude(self) -> float:
        """Scalar transform parameter used for regression."""
        if self.kind == "translation":
            return float(np.hypot(*self.params))
        return self.params[0]

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": list(self.params),
                "position": None if self.position is None else list(self.position),
                "source": self.source}

    @classmethod
    def from_json(cls, d: dict) -> "TransformLabel":
        pos = d.get("position")
        return cls(d["kind"], tuple(d["params"]), None if pos is None else tuple(pos), d.get("source"))


@dataclass(frozen=True)
class MovieSpec:
    kind: str = "translation"          # or rotation, scaling, mixture
    patch_size: int = 13
    num_frames: int = 3
    count: int = 100
    seed: int = 0
    shift_range: Tuple[float, float] = (-3.0, 3.0)
    integer_shifts: bool = False
    shift_set: Optional[Tuple[Tuple[float, float], ...]] = None   # discrete (dx, dy) choices
    min_shift: float = 0.0             # reject |step| below this (per axis norm)
    rotation_range: Tuple[float, float] = (-21.0, 21.0)
    rotation_step: float = 3.0
    min_rotation: float = 0.0
    scale_range: Tuple[float, float] = (0.6, 1.8)
    scale_exclude: Tuple[float, float] = (1.0, 1.0)
    image_bank: Optional[str] = None
    texture_size: int = 128
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in KINDS + ("mixture",):
            raise ValueError(f"unknown movie kind {self.kind!r}")
        if self.patch_size < 5:
            raise ValueError("patch_size must be >= 5")
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if self.count < 0:
            raise ValueError("count must be >= 0")


def procedural_texture(size: int, seed: int, low: float = 0.04, high: float = 0.22) -> np.ndarray:
    """Band-pass filtered white noise, zero mean and unit variance.

    The isotropic kernel is a difference of Gaussians in frequency with
    scales ``low`` and ``high`` (cycles per pixel), applied by FFT.
    """
    if size < 8:
        raise ValueError("size must be >= 8")
    rng = np.random.default_rng([seed, 0x7E47])
    noise = rng.standard_normal((size, size))
    f = np.hypot(*np.meshgrid(np.fft.fftfreq(size), np.fft.fftfreq(size), indexing="ij"))
    kernel = np.exp(-0.5 * (f / high) ** 2) - np.exp(-0.5 * (f / low) ** 2)
    img = np.real(np.fft.ifft2(np.fft.fft2(noise) * kernel))
    img -= img.mean()
    return img / img.std()


def _standardize(frame: np.ndarray) -> np.ndarray:
    frame = frame - frame.mean()
    std = frame.std()
    return frame / std if std > 1e-12 else frame


def _inverse_offsets(label: TransformLabel, t: int, offsets: np.ndarray) -> np.ndarray:
    """Map patch offsets (2, P) in frame t back to source offsets."""
    if label.kind == "translation":
        dx, dy = label.params
        return offsets - t * np.array([[dy], [dx]])
    if label.kind == "rotation":
        theta = np.deg2rad(label.params[0] * t)
        c, s = np.cos(theta), np.sin(theta)
        # rows are (row, col); content rotates counter-clockwise on screen
        rot = np.array([[c, s], [-s, c]])
        return rot @ offsets
    return offsets / label.params[0] ** t


def footprint(label: TransformLabel, num_frames: int, patch_size: int) -> float:
    """Largest source offset from the patch centre touched by any frame."""
    half = (patch_size - 1) / 2.0
    corners = np.array([[-half, -half, half, half], [-half, half, -half, half]])
    return max(float(np.max(np.abs(_inverse_offsets(label, t, corners)))) for t in range(num_frames))


def make_sequence(
    source: np.ndarray,
    label: TransformLabel,
    num_frames: int,
    patch_size: int,
    position=None,
    circular: bool = False,
    standardize: bool = True,
) -> Tuple[FrameSequence, TransformLabel]:
    """Render ``num_frames`` frames of ``source`` under a constant transform.

    Frame t samples the source under the t-fold composed transform about the
    patch centre (bilinear, reflect padding), then is cropped to
    ``patch_size`` squared and flattened. ``circular`` wraps the source
    instead, so an integer translation is an exact np.roll of a source the
    size of the patch.
    """
    source = np.asarray(source, dtype=float)
    if position is None:
        position = ((source.shape[0] - 1) / 2.0, (source.shape[1] - 1) / 2.0)
    position = tuple(float(p) for p in position)
    if not circular:
        reach = footprint(label, num_frames, patch_size)
        lo = min(position) - reach
        hi_r = position[0] + reach
        hi_c = position[1] + reach
        if lo < 0 or hi_r > source.shape[0] - 1 or hi_c > source.shape[1] - 1:
            raise PatchOutOfBounds(
                f"transform reaches {reach:.1f}px from {position}, source is {source.shape}"
            )
    half = (patch_size - 1) / 2.0
    grid = np.mgrid[0:patch_size, 0:patch_size].reshape(2, -1) - half
    frames = []
    for t in range(num_frames):
        coords = _inverse_offsets(label, t, grid) + np.array(position)[:, None]
        if circular and label.kind == "translation":
            coords = np.mod(coords, np.array(source.shape)[:, None])
        frame = ndimage.map_coordinates(source, coords, order=1, mode="grid-wrap" if circular else "reflect")
        frames.append(_standardize(frame) if standardize else frame)
    return FrameSequence(np.stack(frames)), label


def load_image_bank(directory) -> List[np.ndarray]:
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise EmptyImageBank(f"no .pgm files in {directory}")
    return [_standardize(read_pgm(p)) for p in paths]


def _sample_label(kind: str, spec: MovieSpec, rng: np.random.Generator) -> TransformLabel:
    if kind == "translation":
        if spec.shift_set:
            dx, dy = spec.shift_set[int(rng.integers(len(spec.shift_set)))]
            return TransformLabel(kind, (float(dx), float(dy)))
        lo, hi = spec.shift_range
        while True:
            if spec.integer_shifts:
                d = rng.integers(int(np.ceil(lo)), int(np.floor(hi)) + 1, size=2)
            else:
                d = rng.uniform(lo, hi, size=2)
            if np.hypot(*d) >= spec.min_shift:
                return TransformLabel(kind, tuple(float(v) for v in d))
    if kind == "rotation":
        lo, hi = spec.rotation_range
        angles = np.arange(np.ceil(lo / spec.rotation_step), np.floor(hi / spec.rotation_step) + 1) * spec.rotation_step
        angles = angles[np.abs(angles) >= spec.min_rotation]
        return TransformLabel(kind, (float(rng.choice(angles)),))
    lo, hi = spec.scale_range
    ex_lo, ex_hi = spec.scale_exclude
    while True:
        r = rng.uniform(lo, hi)
        if not ex_lo < r < ex_hi:
            return TransformLabel(kind, (float(r),))


def _source_image(spec: MovieSpec, bank, index: int, rng):
    if bank is not None:
        j = int(rng.integers(len(bank)))
        return bank[j], {"bank_index": j}
    tex_seed = int(rng.integers(2**31))
    return procedural_texture(spec.texture_size, tex_seed), {"texture_seed": tex_seed, "texture_size": spec.texture_size}


def _sample_single(kind: str, spec: MovieSpec, bank, seed_key) -> list:
    out = []
    for i in range(spec.count):
        # per-sequence stream so parallel and serial generation agree
        rng = np.random.default_rng([spec.seed, seed_key, i])
        label = _sample_label(kind, spec, rng)
        image, source = _source_image(spec, bank, i, rng)
        reach = footprint(label, spec.num_frames, spec.patch_size)
        lo, hi_r, hi_c = reach, image.shape[0] - 1 - reach, image.shape[1] - 1 - reach
        if hi_r < lo or hi_c < lo:
            raise PatchOutOfBounds(f"source image {image.shape} too small for {label}")
        position = (float(rng.uniform(lo, hi_r)), float(rng.uniform(lo, hi_c)))
        label = TransformLabel(label.kind, label.params, position, source)
        out.append(make_sequence(image, label, spec.num_frames, spec.patch_size, position,
                                 standardize=spec.standardize))
    return out


def sample_movie_dataset(spec: MovieSpec) -> List[Tuple[FrameSequence, TransformLabel]]:
    """Draw ``count`` labelled movies (per kind, for a mixture)."""
    bank = load_image_bank(spec.image_bank) if spec.image_bank else None
    kinds = KINDS if spec.kind == "mixture" else (spec.kind,)
    out = []
    for kind in kinds:
        out.extend(_sample_single(kind, spec, bank, KINDS.index(kind)))
    return out


def regenerate(label: TransformLabel, num_frames: int, patch_size: int, image_bank=None, standardize=True) -> FrameSequence:
    """Rebuild a sequence from its stored label."""
    src = label.source or {}
    if "texture_seed" in src:
        image = procedural_texture(src["texture_size"], src["texture_seed"])
    else:
        image = load_image_bank(image_bank)[src["bank_index"]]
    return make_sequence(image, label, num_frames, patch_size, label.position, standardize=standardize)[0]


def make_chirp_dataset(count: int, seed: int, f_range=(15.0, 20.0), rate: int = 160, intervals: int = 16):
    """Linear chirps sin(2 pi (f0 s + (f1 - f0) s^2 / 2) + phi) over one second.

    Returns a list of ``(FrameSequence, {"f0", "f1", "phase"})`` with each
    sequence cut into ``intervals`` consecutive frames.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, 0xC41, i])
        f0, f1 = rng.uniform(*f_range, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        signal = chirp(f0, f1, phase, rate)
        out.append((FrameSequence(signal.reshape(intervals, -1)), {"f0": float(f0), "f1": float(f1), "phase": float(phase)}))
    return out


def chirp(f0: float, f1: float, phase: float = 0.0, rate: int = 160) -> np.ndarray:
    s = np.arange(rate) / rate
    return np.sin(2.0 * np.pi * (f0 * s + 0.5 * (f1 - f0) * s * s) + phase)


def add_gaussian_noise(seq: FrameSequence, sigma: float, seed: int) -> FrameSequence:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng([seed, 0x401])
    noisy = seq.frames + sigma * rng.standard_normal(seq.frames.shape)
    return FrameSequence(noisy, seq.observed)


# --- dataset container -----------------------------------------------------

DATASET_MAGIC = b"PSEQ"
DATASET_VERSION = 1


def dataset_bytes(sequences: Sequence[FrameSequence], labels: Sequence[dict], extra: Optional[dict] = None) -> bytes:
    if len(labels) != len(sequences):
        raise ValueError("one label per sequence required")
    m = len(sequences)
    N, D = (sequences[0].frames.shape if m else (0, 0))
    header = {"m": m, "N": N, "D": D, "labels": "json-lines", **(extra or {})}
    data = b"".join(np.ascontiguousarray(s.frames, dtype="<f8").tobytes() for s in sequences)
    lines = "".join(json.dumps(l, sort_keys=True, separators=(",", ":")) + "\n" for l in labels)
    return write_container(DATASET_MAGIC, DATASET_VERSION, header, data + lines.encode("utf-8"))


def save_dataset(path, sequences, labels, extra=None) -> None:
    """Write a "PSEQ" dataset; ``labels`` are JSON-serializable dicts."""
    atomic_write_bytes(path, dataset_bytes(sequences, labels, extra))


def load_dataset(path):
    """Return ``(sequences, labels, header)`` from a "PSEQ" file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = read_container(blob, DATASET_MAGIC, DATASET_VERSION)
    try:
        m, N, D = int(header["m"]), int(header["N"]), int(header["D"])
    except (KeyError, ValueError) as exc:
        raise FormatError("bad PSEQ header") from exc
    n = 8 * m * N * D
    if len(payload) < n:
        raise FormatError("truncated PSEQ data")
    data = np.frombuffer(payload[:n], dtype="<f8").astype(float).reshape(m, N, D)
    try:
        labels = [json.loads(l) for l in payload[n:].decode("utf-8").splitlines() if l.strip()]
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("corrupt PSEQ labels") from exc
    if len(labels) != m:
        raise FormatError(f"PSEQ has {len(labels)} labels for {m} sequences")
    return [FrameSequence(x) for x in data], labels, header

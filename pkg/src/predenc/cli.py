"""Command-line front end.

    predenc <command> --config run.json [--set section.key=value ...]

Commands: generate, train, infer, denoise, eval, export. Each reads the
top-level ``seed`` and its own section of the JSON config. Exit codes:
0 success, 1 bad config, 2 I/O or format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy

from . import __version__
from .datagen import (
    DATASET_MAGIC,
    MovieSpec,
    TransformLabel,
    add_gaussian_noise,
    load_dataset,
    make_chirp_dataset,
    sample_movie_dataset,
    save_dataset,
)
from .errors import NonFiniteObjective, PredEncError
from .evaluation import (
    EvalReport,
    confusion_matrix,
    export_codes,
    export_filters,
    histogram_match,
    relative_error,
    rmse,
    train_decoder_classify,
    train_decoder_regress,
)
from .fileio import atomic_write_bytes, atomic_write_text, check_magic, csv_text
from .inference import DenoiseConfig, InferConfig, denoise_sequence, infer_missing_frame, rollout
from .model import CHECKPOINT_MAGIC, FrameSequence, NeighborhoodSpec, load_checkpoint, save_checkpoint
from .training import Corruption, ModelShape, TrainConfig, estimate_context, train


class ConfigError(PredEncError, ValueError):
    pass


# --- config sections -------------------------------------------------------

@dataclass(frozen=True)
class GenerateSection:
    output: str
    kind: str = "translation"          # translation | rotation | scaling | mixture | chirp
    count: int = 100
    patch_size: int = 13
    num_frames: int = 3
    shift_range: Tuple[float, float] = (-3.0, 3.0)
    integer_shifts: bool = False
    shift_set: Optional[Tuple[Tuple[float, float], ...]] = None
    min_shift: float = 0.0
    rotation_range: Tuple[float, float] = (-21.0, 21.0)
    rotation_step: float = 3.0
    min_rotation: float = 0.0
    scale_range: Tuple[float, float] = (0.6, 1.8)
    scale_exclude: Tuple[float, float] = (1.0, 1.0)
    image_bank: Optional[str] = None
    texture_size: int = 128


@dataclass(frozen=True)
class TrainSection:
    dataset: str
    output: str
    history: str
    num_hidden: int = 32
    num_context: int = 9
    neighborhood: str = "full"          # full | causal | window:R
    window: Optional[Tuple[int, int]] = None   # train on frames [a, b) of each sequence
    learning_rate: float = 0.05
    momentum: float = 0.5
    batch_size: int = 10
    epochs: int = 50
    z_lbfgs_steps: int = 5
    lam: float = 0.1
    l1_eps: float = 1e-6
    corruption: str = "none"
    sigma: float = 0.0
    probability: float = 0.0
    checkpoint_every: int = 0


@dataclass(frozen=True)
class InferSection:
    model: str
    dataset: str
    output: str
    report: str
    mode: str = "predict"               # predict | interpolate | rollout
    index: Optional[int] = None         # hole position for interpolate
    horizon: int = 1
    seed_frames: Optional[int] = None   # rollout context length
    outer_iterations: int = 50
    z_budget: int = 50
    tolerance: float = 1e-7
    match_histogram: bool = False


@dataclass(frozen=True)
class DenoiseSection:
    model: str
    dataset: str
    output: str
    report: str
    mu: float = 1.0
    noise_sigma: float = 0.0            # > 0: corrupt the dataset first and score against it
    outer_iterations: int = 50
    z_budget: int = 50
    tolerance: float = 1e-7


@dataclass(frozen=True)
class EvalSection:
    model: str
    dataset: str
    output: str                         # prefix for .json / _confusion.csv / _cdf.csv
    test_fraction: float = 0.5
    z_budget: int = 50
    outer_iterations: int = 50
    tolerance: float = 1e-7
    match_histogram: bool = True


@dataclass(frozen=True)
class ExportSection:
    model: str
    filters: str
    dataset: Optional[str] = None
    codes: Optional[str] = None
    max_filters: Optional[int] = None
    z_budget: int = 50


SECTIONS = {
    "generate": GenerateSection,
    "train": TrainSection,
    "infer": InferSection,
    "denoise": DenoiseSection,
    "eval": EvalSection,
    "export": ExportSection,
}
INPUT_KEYS = ("dataset", "model", "image_bank")
OUTPUT_KEYS = ("output", "history", "report", "filters", "codes")


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def build_section(name: str, data: dict):
    cls = SECTIONS[name]
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: section must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
    for f in dataclasses.fields(cls):
        if f.default is dataclasses.MISSING and f.name not in data:
            raise ConfigError(f"{name}.{f.name}: required key missing")
    return cls(**{k: _tupleize(v) for k, v in data.items()})


def load_config(path, overrides=()) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item}: expected section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        target = config
        for p in parts[:-1]:
            target = target.setdefault(p, {})
            if not isinstance(target, dict):
                raise ConfigError(f"{key}: not a section")
        target[parts[-1]] = value
    for key in config:
        if key not in SECTIONS and key != "seed":
            raise ConfigError(f"{key}: unknown key")
    if not isinstance(config.get("seed", 0), int):
        raise ConfigError("seed: must be an integer")
    return config


def _validate_paths(section):
    for key in INPUT_KEYS:
        value = getattr(section, key, None)
        if value is not None and not os.path.exists(value):
            raise FileNotFoundError(f"{key}: {value} does not exist")
    for key in OUTPUT_KEYS:
        value = getattr(section, key, None)
        if value is not None:
            parent = Path(value).resolve().parent
            if parent.exists() and not parent.is_dir():
                raise NotADirectoryError(f"{key}: {parent} is not a directory")
    if getattr(section, "dataset", None):
        check_magic(section.dataset, DATASET_MAGIC)
    if getattr(section, "model", None):
        check_magic(section.model, CHECKPOINT_MAGIC)


# --- manifest --------------------------------------------------------------

_RUN_EXTRAS: dict = {}


def _manifest(command, config, outputs, started, wall) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": config.get("seed", 0),
        "outputs": sorted(str(o) for o in outputs),
        "versions": {
            "predenc": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "started_at": started,
        "wall_time_seconds": wall,
        **_RUN_EXTRAS,
    }
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _neighborhood(spec: str, n: int) -> NeighborhoodSpec:
    if spec == "full":
        return NeighborhoodSpec.full(n)
    if spec == "causal":
        return NeighborhoodSpec.causal(n)
    if spec.startswith("window:"):
        return NeighborhoodSpec.window(n, int(spec.split(":", 1)[1]))
    raise ConfigError(f"train.neighborhood: unknown neighbourhood {spec!r}")


# --- commands --------------------------------------------------------------

def cmd_generate(sec: GenerateSection, seed: int):
    if sec.kind == "chirp":
        data = make_chirp_dataset(sec.count, seed)
        save_dataset(sec.output, [s for s, _ in data], [m for _, m in data], {"kind": "chirp"})
        return [sec.output]
    fields = {f.name for f in dataclasses.fields(MovieSpec)}
    spec = MovieSpec(seed=seed, **{k: v for k, v in dataclasses.asdict(sec).items() if k in fields})
    data = sample_movie_dataset(spec) if sec.count else []
    save_dataset(sec.output, [s for s, _ in data], [l.to_json() for _, l in data],
                 {"kind": sec.kind, "patch_size": sec.patch_size})
    return [sec.output]


def _windowed(seqs, window):
    if window is None:
        return seqs
    a, b = window
    return [FrameSequence(s.frames[a:b]) for s in seqs]


def cmd_train(sec: TrainSection, seed: int):
    seqs, _, header = load_dataset(sec.dataset)
    seqs = _windowed(seqs, sec.window)
    if not seqs:
        raise ConfigError("train.dataset: dataset is empty")
    N, D = seqs[0].frames.shape
    nb = _neighborhood(sec.neighborhood, N)
    cfg = TrainConfig(
        learning_rate=sec.learning_rate, momentum=sec.momentum, batch_size=sec.batch_size,
        epochs=sec.epochs, z_lbfgs_steps=sec.z_lbfgs_steps, lam=sec.lam, l1_eps=sec.l1_eps,
        corruption=Corruption(sec.corruption, sec.sigma, sec.probability), seed=seed,
        threads=_THREADS,
    )
    shape = ModelShape(N, D, sec.num_hidden, sec.num_context)
    outputs = [sec.output, sec.history]

    def on_epoch(epoch, params, history):
        if not all(np.isfinite(history.energy)):
            raise NonFiniteObjective(f"energy became non-finite at epoch {epoch}")
        if sec.checkpoint_every and epoch % sec.checkpoint_every == 0:
            path = f"{sec.output}.epoch{epoch}"
            save_checkpoint(path, params, nb, cfg.energy_config)
            outputs.append(path)

    params, history, _ = train(seqs, shape, cfg, nb, on_epoch=on_epoch)
    save_checkpoint(sec.output, params, nb, cfg.energy_config)
    history.save_csv(sec.history, timing=False)
    _RUN_EXTRAS["epoch_seconds"] = list(history.seconds)
    return outputs


def _nearest_other(u: int, n: int) -> int:
    """Closest other frame index, preferring the earlier one."""
    return u - 1 if u > 0 else 1


def _infer_config(sec, ecfg) -> InferConfig:
    return InferConfig(sec.outer_iterations, sec.z_budget, sec.tolerance, ecfg.lam, ecfg.l1_eps)


def cmd_infer(sec: InferSection, seed: int):
    params, nb, ecfg = load_checkpoint(sec.model)
    seqs, labels, header = load_dataset(sec.dataset)
    cfg = _infer_config(sec, ecfg)
    N = params.num_frames
    _outputs, report = [], {"mode": sec.mode, "count": len(seqs)}
    if sec.mode in ("predict", "interpolate"):
        u = N - 1 if sec.mode == "predict" else (N // 2 if sec.index is None else sec.index)
        if not 0 <= u < N:
            raise ConfigError(f"infer.index: {u} outside 0..{N - 1}")
        filled, errs, base, energies = [], [], [], []
        for s in seqs:
            window = FrameSequence(s.frames[:N])
            res = infer_missing_frame(params, window.without_frame(u), nb, cfg)
            frame = res.frame
            if sec.match_histogram:
                frame = histogram_match(frame, window.frames[_nearest_other(u, N)])
            filled.append(window.with_frame(u, frame))
            errs.append(rmse(frame, window.frames[u]))
            base.append(rmse(window.frames[_nearest_other(u, N)], window.frames[u]))
            energies.append(res.energy)
        report.update(index=u, rmse=float(np.mean(errs)) if errs else None,
                      baseline_rmse=float(np.mean(base)) if base else None,
                      mean_energy=float(np.mean(energies)) if energies else None)
        if energies and not np.all(np.isfinite(energies)):
            raise NonFiniteObjective("inference produced a non-finite energy")
        save_dataset(sec.output, filled, labels, {"mode": sec.mode, "index": u})
    elif sec.mode == "rollout":
        k = sec.seed_frames or N - 1
        out, per_step, persist = [], [], []
        for s in seqs:
            frames = rollout(params, s.frames[:k], nb, cfg, sec.horizon)
            out.append(FrameSequence(np.array(frames)))
            truth = s.frames[k:k + sec.horizon]
            if len(truth) == sec.horizon:
                per_step.append([rmse(f, t) for f, t in zip(frames, truth)])
                persist.append([rmse(s.frames[k - 1], t) for t in truth])
        if per_step:
            report.update(rmse_per_step=np.mean(per_step, axis=0).tolist(),
                          persistence_rmse_per_step=np.mean(persist, axis=0).tolist())
            if not np.all(np.isfinite(per_step)):
                raise NonFiniteObjective("rollout produced non-finite frames")
        report.update(seed_frames=k, horizon=sec.horizon)
        save_dataset(sec.output, out, labels, {"mode": "rollout"})
    else:
        raise ConfigError(f"infer.mode: unknown mode {sec.mode!r}")
    atomic_write_text(sec.report, _json_text(report))
    return [sec.output, sec.report]


def cmd_denoise(sec: DenoiseSection, seed: int):
    params, nb, ecfg = load_checkpoint(sec.model)
    seqs, labels, _ = load_dataset(sec.dataset)
    cfg = DenoiseConfig(sec.outer_iterations, sec.z_budget, sec.tolerance, ecfg.lam, ecfg.l1_eps, mu=sec.mu)
    cleaned, report = [], {"count": len(seqs), "mu": sec.mu}
    before, after = [], []
    for i, s in enumerate(seqs):
        noisy = add_gaussian_noise(s, sec.noise_sigma, seed * 1_000_003 + i) if sec.noise_sigma else s
        res = denoise_sequence(params, noisy, nb, cfg)
        if not np.isfinite(res.objective):
            raise NonFiniteObjective("denoising produced a non-finite objective")
        cleaned.append(res.sequence)
        if sec.noise_sigma:
            before.append(rmse(noisy, s))
            after.append(rmse(res.sequence, s))
    if before:
        report.update(input_rmse=float(np.mean(before)), output_rmse=float(np.mean(after)))
    save_dataset(sec.output, cleaned, labels, {"mode": "denoise"})
    atomic_write_text(sec.report, _json_text(report))
    return [sec.output, sec.report]


def _label_kind(label) -> Optional[str]:
    return label.get("kind") if isinstance(label, dict) else None


def cmd_eval(sec: EvalSection, seed: int):
    params, nb, ecfg = load_checkpoint(sec.model)
    seqs, labels, _ = load_dataset(sec.dataset)
    N = params.num_frames
    cfg = _infer_config(sec, ecfg)
    report = EvalReport()
    pred, interp, copy = [], [], []
    codes = []
    for s in seqs:
        window = FrameSequence(s.frames[:N])
        codes.append(estimate_context(params, window, nb, ecfg, sec.z_budget))
        for u, bucket in ((N - 1, pred), (N // 2, interp)):
            if u == N - 1 and bucket is interp:
                continue
            frame = infer_missing_frame(params, window.without_frame(u), nb, cfg).frame
            if sec.match_histogram:
                frame = histogram_match(frame, window.frames[_nearest_other(u, N)])
            bucket.append(rmse(frame, window.frames[u]))
        copy.append(rmse(window.frames[N - 2], window.frames[N - 1]))
    if pred:
        report.rmse = {"prediction": float(np.mean(pred)), "copy_baseline": float(np.mean(copy))}
        if interp:
            report.rmse["interpolation"] = float(np.mean(interp))
    if not np.all(np.isfinite(pred + interp)):
        raise NonFiniteObjective("evaluation produced non-finite predictions")
    codes = np.array(codes)
    kinds = [_label_kind(l) for l in labels]
    outputs = [sec.output + ".json", sec.output + "_cdf.csv"]
    if codes.size and None not in kinds:
        perm = np.random.default_rng([seed, 0xE7A1]).permutation(len(seqs))
        n_test = int(round(sec.test_fraction * len(seqs)))
        test, train_idx = perm[:n_test], perm[n_test:]
        train_kinds = {kinds[i] for i in train_idx}
        if len(train_kinds) >= 2 and len(test):
            clf = train_decoder_classify(codes[train_idx], [kinds[i] for i in train_idx])
            predicted = clf.predict(codes[test])
            truth = [kinds[i] for i in test]
            report.classes = clf.classes
            report.confusion = confusion_matrix(truth, predicted, clf.classes)
            report.accuracy = float(np.mean([a == b for a, b in zip(truth, predicted)]))
            rows = [[c] + list(map(int, r)) for c, r in zip(clf.classes, report.confusion)]
            atomic_write_text(sec.output + "_confusion.csv", csv_text(("true",) + clf.classes, rows))
            outputs.append(sec.output + "_confusion.csv")
        for kind in sorted(set(kinds)):
            idx_tr = [i for i in train_idx if kinds[i] == kind]
            idx_te = [i for i in test if kinds[i] == kind]
            mags = {i: TransformLabel.from_json(labels[i]).magnitude for i in idx_tr + idx_te}
            idx_te = [i for i in idx_te if mags[i] != 0]
            if len(idx_tr) > codes.shape[1] + 1 and idx_te:
                reg = train_decoder_regress(codes[idx_tr], [mags[i] for i in idx_tr])
                report.relative_errors[kind] = relative_error(reg.predict(codes[idx_te]), [mags[i] for i in idx_te])
    atomic_write_text(sec.output + ".json", _json_text(report.to_json()))
    atomic_write_text(sec.output + "_cdf.csv", report.cdf_csv())
    return outputs


def cmd_export(sec: ExportSection, seed: int):
    params, nb, ecfg = load_checkpoint(sec.model)
    atomic_write_bytes(sec.filters, export_filters(params, max_filters=sec.max_filters))
    outputs = [sec.filters]
    if sec.codes:
        if not sec.dataset:
            raise ConfigError("export.dataset: required when export.codes is set")
        seqs, labels, _ = load_dataset(sec.dataset)
        N = params.num_frames
        codes = [estimate_context(params, FrameSequence(s.frames[:N]), nb, ecfg, sec.z_budget) for s in seqs]
        flat = [{k: v for k, v in l.items() if k != "source"} if isinstance(l, dict) else {} for l in labels]
        atomic_write_text(sec.codes, export_codes(np.array(codes).reshape(len(codes), params.num_context), flat))
        outputs.append(sec.codes)
    return outputs


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "infer": cmd_infer,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "export": cmd_export,
}
_THREADS = 1


def run(command: str, config: dict) -> list:
    """Validate the config section, execute ``command`` and write manifests."""
    if command not in config:
        raise ConfigError(f"{command}: section missing from config")
    section = build_section(command, config[command])
    _validate_paths(section)
    _RUN_EXTRAS.clear()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    outputs = COMMANDS[command](section, int(config.get("seed", 0)))
    manifest = _manifest(command, config, outputs, started, time.perf_counter() - t0)
    for out in outputs:
        atomic_write_text(f"{out}.manifest.json", manifest)
    return outputs


def main(argv=None) -> int:
    global _THREADS
    parser = argparse.ArgumentParser(prog="predenc", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (JSON-parsed)")
    parser.add_argument("--threads", type=int, default=1, help="parallel context estimation in training")
    args = parser.parse_args(argv)
    _THREADS = max(1, args.threads)
    try:
        config = load_config(args.config, args.set)
        # non-finite values surface as exit 3, not as warnings on stderr
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore", RuntimeWarning)
            outputs = run(args.command, config)
    except ConfigError as exc:
        return _fail(1, "config", exc)
    except ArithmeticError as exc:
        # NonFiniteObjective, SingularSystem
        return _fail(3, "numerical", exc)
    except (OSError, PredEncError) as exc:
        # FormatError, missing files, data incompatible with the model
        return _fail(2, "io", exc)
    except (ValueError, TypeError) as exc:
        return _fail(1, "config", ConfigError(f"{args.command}: {exc}"))
    for out in outputs:
        print(out)
    return 0


def _fail(code: int, kind: str, exc: BaseException) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"predenc: error: {kind}: {type(exc).__name__}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``spdpool {pool,train,eval,gradcheck,synth}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import gradcheck as G
from . import network as N
from . import pooling as P
from .config import ConfigError, load_config, merge
from .fileio import (
    DatasetManifest,
    FeatureFileError,
    ManifestEntry,
    ManifestError,
    load_samples,
    read_feature_file,
    read_manifest,
    write_descriptor,
    write_manifest,
)
from .layers import DEFAULT_EPSILON, NotPositiveDefiniteError
from .optim import RetractionError
from .rng import make_rng
from .synthetic import SyntheticSpec, write_synthetic
from .training import NumericalError, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

log = logging.getLogger("spdpool")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MAX_GRADCHECK_DIMS = 16


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def threads() -> int:
    value = os.environ.get("SPDPOOL_THREADS")
    if value is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(value))
    except ValueError:
        raise UsageError(f"SPDPOOL_THREADS must be an integer, got {value!r}") from None


def _settings(args, **flags) -> dict:
    file_values = load_config(args.config) if args.config else {}
    return merge(file_values, {"seed": args.seed, **flags})


def _load_manifest(path) -> DatasetManifest:
    try:
        return read_manifest(path)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None


# --- pool


def _pool_one(data: np.ndarray, mode: str, lam: float) -> np.ndarray:
    feats = P.flatten_spatial(data) if data.ndim == 3 else data
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", P.RegularizationWarning)
        out = P.gaussian_embed(feats, lam) if mode == "gauss" else P.pool_temporal(feats, lam)
    for w in caught:
        log.warning("%s", w.message)
    return out


def cmd_pool(args) -> int:
    cfg = _settings(args, **{"lambda": args.lam})
    lam = cfg.get("lambda", P.DEFAULT_LAMBDA)
    manifest = _load_manifest(args.manifest)
    if not manifest.entries:
        raise DataError("empty manifest")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def job(entry: ManifestEntry):
        if entry.failed and entry.path == "-":
            return None
        rec = read_feature_file(manifest.resolve(entry))
        if rec.is_descriptor:
            raise FeatureFileError(f"{entry.path} is already a pooled descriptor")
        return rec, _pool_one(rec.data, args.mode, lam)

    def safe(entry):
        try:
            return job(entry), None
        except (OSError, ValueError) as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        results = list(pool.map(safe, manifest.entries))

    out_manifest = DatasetManifest(classes=manifest.classes, split=manifest.split)
    failures = 0
    for i, (entry, (result, exc)) in enumerate(zip(manifest.entries, results)):
        if exc is not None:
            failures += 1
            log.error("%s: %s", entry.path, exc)
            continue
        if result is None:
            out_manifest.entries.append(ManifestEntry("-", entry.label, True))
            continue
        rec, desc = result
        name = f"{i:05d}.spdf"
        write_descriptor(out_dir / name, desc, label=entry.label, failed=entry.failed or rec.failed)
        out_manifest.entries.append(ManifestEntry(name, entry.label, entry.failed or rec.failed))
    write_manifest(out_dir / "manifest.tsv", out_manifest)
    print(f"pooled {len(manifest.entries) - failures} of {len(manifest.entries)} samples into {out_dir}")
    return EXIT_DATA if failures else EXIT_OK


# --- train / eval


def _input_dim(samples) -> tuple[int, bool]:
    kinds = {(s.pooled, s.data.shape[-1] if not s.pooled else s.data.shape[0]) for s in samples if not s.failed}
    if len(kinds) != 1:
        raise DataError(f"inconsistent sample shapes or kinds in training data: {sorted(kinds)}")
    pooled, dim = kinds.pop()
    return dim, pooled


def cmd_train(args) -> int:
    cfg = _settings(args, preset=args.preset, **{"lambda": args.lam}, epsilon=args.epsilon, lr=args.lr,
                    epochs=args.epochs, batch=args.batch, classes=args.classes, input_dim=args.input_dim)
    train_m = _load_manifest(args.train)
    val_m = _load_manifest(args.val) if args.val else None
    train_s = load_samples(train_m)
    val_s = load_samples(val_m) if val_m else []
    if not any(not s.failed for s in train_s):
        raise DataError("training manifest has no usable samples")
    dim, pooled = _input_dim(train_s)
    if "input_dim" in cfg and cfg["input_dim"] != dim:
        raise DataError(f"config input_dim={cfg['input_dim']} but data has dimension {dim}")
    classes = cfg.get("classes") or train_m.classes or 1 + max(s.label for s in train_s + val_s)
    hidden = tuple(args.hidden) if args.hidden is not None else None
    spec = N.build_preset(cfg.get("preset", "model1"), dim, classes,
                          lam=cfg.get("lambda", P.DEFAULT_LAMBDA), eps=cfg.get("epsilon", DEFAULT_EPSILON),
                          seed=cfg.get("seed", 0), hidden=hidden)
    config = TrainConfig(learning_rate=cfg.get("lr", 1e-2), epochs=cfg.get("epochs", 50),
                         batch_size=cfg.get("batch", 16), shuffle=not args.no_shuffle)
    log.info("network: %s (pooled input: %s)", spec, pooled)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    state, history = train(spec, config, train_s, val_s)
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(rec.to_json() + "\n")
    save_checkpoint(out_dir / "checkpoint.npz", spec, state,
                    extra={"final_train_loss": history[-1].train_loss if history else None})
    if val_s:
        print(f"final val_accuracy {evaluate(spec, state.params, val_s, threads=threads()):.6f}")
    if history:
        print(f"final train_loss {history[-1].train_loss:.6f}")
    return EXIT_OK


def _check_compat(spec: N.NetworkSpec, samples) -> None:
    for s in samples:
        if s.failed:
            continue
        if s.pooled:
            ok = s.data.shape == (spec.spd_input_dim, spec.spd_input_dim)
        else:
            ok = s.data.shape[-1] == spec.input_dim
        if not ok:
            raise DataError(f"sample of shape {s.data.shape} does not match checkpoint input_dim {spec.input_dim}")


def cmd_eval(args) -> int:
    try:
        spec, state, _ = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    manifest = _load_manifest(args.manifest)
    samples = load_samples(manifest)
    if not samples:
        raise DataError("empty manifest")
    _check_compat(spec, samples)
    for s in samples:
        if not 0 <= s.label < spec.classes:
            raise DataError(f"label {s.label} out of range for {spec.classes} classes")
    acc = evaluate(spec, state.params, samples, threads=threads())
    print(f"accuracy {acc:.6f}")
    return EXIT_OK


# --- gradcheck


def cmd_gradcheck(args) -> int:
    if not 1 <= args.dims <= MAX_GRADCHECK_DIMS:
        raise UsageError(f"--dims must be between 1 and {MAX_GRADCHECK_DIMS}, got {args.dims}")
    cfg = _settings(args, preset=args.preset)
    rng = make_rng(cfg.get("seed", 0))
    errors = {}
    suite_dims = max(args.dims, 2)
    errors.update(G.layer_suite(rng, instances=args.instances, dims=suite_dims, corrupt=args.corrupt))
    spec = N.build_preset(cfg.get("preset", "model1"), args.dims, args.classes)
    net = G.check_network(spec, rng, corrupt=args.corrupt)
    errors.update({f"network[{k}]": v for k, v in net.errors.items()})
    width = max(len(k) for k in errors)
    bad = []
    for name, err in errors.items():
        status = "ok" if err < G.THRESHOLD else "FAIL"
        print(f"{name:<{width}}  max_rel_err {err:.6e}  {status}")
        if err >= G.THRESHOLD:
            bad.append(name)
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --- synth


def cmd_synth(args) -> int:
    cfg = _settings(args, classes=args.classes, input_dim=args.dim)
    try:
        spec = SyntheticSpec(classes=cfg.get("classes", 3), dim=cfg.get("input_dim", 16),
                             samples_per_class=args.samples, frames=args.frames,
                             seed=cfg.get("seed", 0), kind=args.kind)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_path, val_path = write_synthetic(spec, args.out, width=args.width // 8)
    n_train = spec.classes * spec.train_per_class
    n_val = spec.classes * spec.val_per_class
    print(f"wrote {n_train} train and {n_val} val samples: {train_path}, {val_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="spdpool", description="Covariance pooling and SPD manifold networks.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser(
        "pool", parents=[common], help="pool feature files into SPD descriptors",
        description="Each descriptor is written as a feature file of kind spatial-map with "
                    "dims (1, 1, d*d, d): a 1x1 map whose d*d channels hold the matrix row by row, "
                    "the fourth dim recording d. A manifest.tsv is written next to the descriptors.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("cov", "gauss"), default="cov")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("train", parents=[common], help="train a preset network")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--val", help="validation manifest")
    p.add_argument("--out", required=True, help="directory for checkpoint.npz and metrics.jsonl")
    p.add_argument("--preset", choices=sorted(N.PRESETS))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--input-dim", dest="input_dim", type=int)
    p.add_argument("--hidden", type=int, nargs="*", help="override the preset's hidden Dense widths")
    p.add_argument("--no-shuffle", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--preset", choices=sorted(N.PRESETS))
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic covariance-separable dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--samples", type=int, default=100, help="samples per class")
    p.add_argument("--frames", type=int, default=64, help="feature vectors per sample")
    p.add_argument("--kind", choices=("temporal", "spatial"), default="temporal")
    p.add_argument("--width", type=int, choices=(32, 64), default=64, help="stored float width in bits")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # global flags may sit before or after the subcommand; the shared actions default to SUPPRESS
    for name, default in (("config", None), ("seed", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, N.SpecError) as exc:
        print(f"spdpool: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ManifestError, FeatureFileError, OSError) as exc:
        print(f"spdpool: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, RetractionError, NotPositiveDefiniteError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"spdpool: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"spdpool: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()

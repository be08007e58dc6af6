"""Command-line entry point.

Subcommands::

    stats        exact kept-ratio PMF (+ Monte-Carlo histogram) as CSV
    mask-demo    one block mask as a 0/1 grid CSV, with its scale for a ones input
    gradcheck    finite-difference checks of the backward passes
    train        train one model from a config file
    compare      compare dropout variants over several seeds

Config files are JSON objects or flat ``key = value`` text (``#`` comments,
values parsed as JSON when possible, bare strings otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gradcheck
from .dropout import DropoutConfig, PartitionDims, dynamic_scale, make_block_mask
from .harness import (
    TrainConfig,
    compare_variants,
    parse_variant,
    run_experiment,
    save_model,
    variant_label,
    write_config_json,
)
from .stats import kept_ratio_moments, kept_ratio_pmf, monte_carlo_kept_ratio, write_pmf_csv
from .tasks import TaskKind, TaskSpec
from .tensor import Rng

log = logging.getLogger("macroblock_dropout")


class ConfigError(ValueError):
    pass


# -- config files ----------------------------------------------------------------


def _int_list(v):
    if isinstance(v, str):
        v = [s for s in v.replace("x", ",").split(",") if s.strip()]
    if isinstance(v, int):
        v = [v]
    out = [int(s) for s in v]
    if not out or min(out) < 1:
        raise ValueError("need positive integers")
    return out


def _str_list(v):
    if isinstance(v, str):
        return [s.strip() for s in v.split(",") if s.strip()]
    return [str(s) for s in v]


def _opt_float(v):
    return None if v in (None, "none", "null", "") else float(v)


# key -> converter; anything else in a config file is rejected
CONFIG_KEYS = {
    "task": lambda v: TaskKind(str(v)),
    "seq_len": int,
    "train_size": int,
    "val_size": int,
    "task_seed": int,
    "n_symbols": int,
    "delay": int,
    "target_noise": float,
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "optimizer": str,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "grad_clip": _opt_float,
    "lr_decay": float,
    "lr_decay_start": int,
    "hidden": _int_list,
    "apply_dropout_from_layer": int,
    "seed": int,
    "dropout": str,
    "dropout_seed": int,
    "variants": _str_list,
    "repeats": int,
    "workers": int,
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip().strip("'\"")


def read_config(path) -> dict:
    """Read and type-check a config file; raises ConfigError naming the bad key."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            raw[key.strip()] = _parse_value(value.strip())
    cfg = {}
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            cfg[key] = CONFIG_KEYS[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key!r}: {value!r} ({exc})") from exc
    return cfg


@dataclass
class ResolvedConfig:
    task: TaskSpec
    train: TrainConfig
    variants: list[DropoutConfig | None]
    repeats: int
    workers: int


def resolve_config(cfg: dict, seed: int | None = None) -> ResolvedConfig:
    if "learning_rate" not in cfg:
        raise ConfigError("missing required key 'learning_rate'")
    if seed is not None:
        cfg = {**cfg, "seed": seed}
    train_seed = cfg.get("seed", 0)
    dropout_seed = cfg.get("dropout_seed", train_seed)
    try:
        task = TaskSpec(
            kind=cfg.get("task", TaskKind.ADDING),
            seq_len=cfg.get("seq_len", 50),
            train_size=cfg.get("train_size", 2000),
            val_size=cfg.get("val_size", 500),
            seed=cfg.get("task_seed", 0),
            n_symbols=cfg.get("n_symbols", 8),
            delay=cfg.get("delay", 0),
            target_noise=cfg.get("target_noise", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"task: {exc}") from exc
    try:
        dropout = parse_variant(cfg.get("dropout", "none"), seed=dropout_seed)
    except ValueError as exc:
        raise ConfigError(f"dropout: {exc}") from exc
    try:
        train = TrainConfig(
            learning_rate=cfg["learning_rate"],
            epochs=cfg.get("epochs", 50),
            batch_size=cfg.get("batch_size", 32),
            optimizer=cfg.get("optimizer", "adam"),
            beta1=cfg.get("beta1", 0.9),
            beta2=cfg.get("beta2", 0.999),
            eps=cfg.get("eps", 1e-8),
            grad_clip_global_norm=cfg.get("grad_clip", None),
            lr_decay=cfg.get("lr_decay", 1.0),
            lr_decay_start=cfg.get("lr_decay_start", 1),
            hidden_sizes=tuple(cfg.get("hidden", (32, 32))),
            apply_dropout_from_layer=cfg.get("apply_dropout_from_layer", 1),
            dropout=dropout,
            seed=train_seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        variants = [parse_variant(v, seed=dropout_seed) for v in cfg.get("variants", [])]
    except ValueError as exc:
        raise ConfigError(f"variants: {exc}") from exc
    return ResolvedConfig(task, train, variants, cfg.get("repeats", 3), cfg.get("workers", 1))


# -- subcommands -----------------------------------------------------------------


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_stats(n_blocks: int, q: float, trials: int, out_path, seed: int = 0) -> int:
    pmf = kept_ratio_pmf(n_blocks, q)
    mean, std = kept_ratio_moments(n_blocks, q)
    out = _out_dir(out_path)
    write_pmf_csv(out / "pmf.csv", pmf)
    print(f"N={n_blocks} q={q:g}")
    print(f"P(no drop)={pmf.prob_kept(n_blocks):.6g}")
    if n_blocks % 2 == 0:
        print(f"P(half dropped)={pmf.prob_kept(n_blocks // 2):.6g}")
    print(f"kept ratio mean={mean:.6g} std={std:.6g}")
    if trials > 0:
        hist = monte_carlo_kept_ratio(Rng(seed), n_blocks, q, trials)
        write_pmf_csv(out / "histogram.csv", pmf, hist)
        print(f"Monte Carlo ({trials} trials): P(no drop)={hist.probs[-1]:.6g}")
    return 0


def cmd_mask_demo(partition: PartitionDims, q: float, shape, seed: int, out_path) -> int:
    T, D = shape
    trace = make_block_mask(Rng(seed), partition, q, (T, D))
    scale = dynamic_scale(np.ones((T, D)), trace.mask)
    out = _out_dir(out_path)
    np.savetxt(out / "mask.csv", trace.mask.astype(int), fmt="%d", delimiter=",")
    meta = {
        "partition": str(partition),
        "q": q,
        "shape": [T, D],
        "seed": seed,
        "block_draws": trace.block_draws.astype(int).tolist(),
        "scale_ones_input": scale,
    }
    (out / "mask.json").write_text(json.dumps(meta, indent=2) + "\n")
    for row in trace.mask.astype(int):
        print("".join("#" if v else "." for v in row))
    print(f"scale={scale:.6g}")
    return 0


def cmd_gradcheck(seed: int = 0, corrupt: bool = False) -> int:
    results = gradcheck.run_all(seed, corrupt=corrupt)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_train(config_path, out_path, seed: int | None = None) -> int:
    rc = resolve_config(read_config(config_path), seed)
    out = _out_dir(out_path)
    write_config_json(out / "config.json", rc.task, rc.train)
    print(json.dumps({"task": rc.task.kind.value, "dropout": variant_label(rc.train.dropout),
                      "epochs": rc.train.epochs, "learning_rate": rc.train.learning_rate}))
    metrics, model = run_experiment(rc.task, rc.train)
    metrics.write_csv(out / "metrics.csv")
    save_model(out / "model.npz", model)
    print(json.dumps(metrics.summary()))
    return 0


def cmd_compare(config_path, out_path, seed: int | None = None) -> int:
    rc = resolve_config(read_config(config_path), seed)
    if not rc.variants:
        raise ConfigError("missing required key 'variants'")
    out = _out_dir(out_path)
    write_config_json(out / "config.json", rc.task, rc.train,
                      {"variants": [variant_label(v) for v in rc.variants], "repeats": rc.repeats})
    table = compare_variants(rc.task, rc.train, rc.variants, rc.repeats, rc.workers)
    table.write_csv(out / "comparison.csv")
    print(table.format())
    return 0


# -- argument parsing ------------------------------------------------------------


def _shape(text: str):
    try:
        t, d = (int(s) for s in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like TxD, got {text!r}")
    if t < 1 or d < 1:
        raise argparse.ArgumentTypeError(f"shape extents must be positive, got {text!r}")
    return t, d


def _partition(text: str):
    try:
        return PartitionDims.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=None, help="seed override")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="macroblock-dropout", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", parents=[common], help="kept-ratio PMF and Monte-Carlo histogram")
    s.add_argument("--blocks", type=int, default=4)
    s.add_argument("--q", type=float, default=0.2)
    s.add_argument("--trials", type=int, default=100_000)

    m = sub.add_parser("mask-demo", parents=[common], help="draw and print one block mask")
    m.add_argument("--partition", type=_partition, default=PartitionDims(1, 4))
    m.add_argument("--q", type=float, default=0.2)
    m.add_argument("--shape", type=_shape, default=(6, 8))

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    for name, text in (("train", "train one model"), ("compare", "compare dropout variants")):
        t = sub.add_parser(name, parents=[common], help=text)
        t.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    seed = args.seed
    try:
        if args.command == "stats":
            return cmd_stats(args.blocks, args.q, args.trials, args.out, seed or 0)
        if args.command == "mask-demo":
            return cmd_mask_demo(args.partition, args.q, args.shape, seed or 0, args.out)
        if args.command == "gradcheck":
            return cmd_gradcheck(seed or 0, args.corrupt)
        if args.command == "train":
            return cmd_train(args.config, args.out, seed)
        return cmd_compare(args.config, args.out, seed)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

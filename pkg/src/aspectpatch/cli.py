"""Command-line entry point: ``synth``, ``train``, ``eval`` and ``predict``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then command-line flags (highest priority). Unknown
keys are rejected. ``train`` and ``eval`` write the resolved settings to
``config.resolved`` in their output directory.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import errors
from .dataio import decode_image, load_dataset, synth_generate
from .loss import COLLECTIVE, INDIVIDUAL, VARIANTS, LossSpec
from .metrics import ae_bin_labels, evaluate, predict_distribution, sweep, sweep_plans, sweep_rows
from .patchgrid import MP_GLOBAL_LOCAL, MP_LOCAL, MP_RANDOM, STRATEGIES, PatchPlan
from .ratings import EmdParams, mean_score
from .scorer import OptimizerConfig, ScorerConfig, init_scorer, load_checkpoint
from .trainer import TrainPlan, pretrain_square, train_collective, train_individual

log = logging.getLogger("aspectpatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text):
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default, help). ``None`` defaults are filled per loss variant.
KEYS = {
    "data": (str, None, "dataset directory holding manifest.jsonl"),
    "out": (str, None, "output directory"),
    "checkpoint": (str, None, "checkpoint file"),
    "loss": (str, None, "loss variant: " + ", ".join(VARIANTS)),
    "strategy": (str, None, "training: collective|individual; eval/predict: " + "|".join(STRATEGIES)),
    "k": (float, 1.2, "certainty expansion coefficient"),
    "beta": (float, 0.4, "patch-weight exponent"),
    "epsilon": (float, 1e-6, "certainty floor"),
    "stop_weight_gradient": (_bool, False, "treat the patch weight as a constant when differentiating"),
    "S": (int, 342, "shorter-edge rescale target"),
    "P": (int, 299, "local patch side"),
    "G": (int, 342, "global patch side"),
    "m": (str, "3", "grid patches per side (N, N,M or A..B)"),
    "n": (str, "1", "random patch counts (N, N,M or A..B)"),
    "batch_images": (int, 32, "images per mini-batch"),
    "epochs": (int, None, "training epochs (default: per loss variant)"),
    "init_lr": (float, None, "initial learning rate (default: per loss variant)"),
    "decay_factor": (float, None, "learning-rate decay factor (default: per loss variant)"),
    "decay_interval": (int, None, "epochs between decays (default: per loss variant)"),
    "momentum": (float, 0.9, "SGD momentum"),
    "weight_decay": (float, 1e-4, "SGD weight decay"),
    "pretrain_epochs": (int, 100, "square-resize pre-training epochs before collective training (0 skips)"),
    "pretrain_lr": (float, 1e-3, "pre-training initial learning rate"),
    "validation_interval": (int, 1, "epochs between validation passes"),
    "channels": (_int_list, (8, 16, 32), "conv channels, comma separated"),
    "input_min_side": (int, 32, "smallest accepted patch side"),
    "seed": (int, 0, "training / random-crop seed"),
    "split_seed": (int, 0, "dataset split seed"),
    "split": (str, "test", "split to evaluate"),
    "sweep": (_bool, False, "also run the full strategy sweep"),
    "image": (str, None, "image to score"),
    "n_images": (int, 500, "number of synthetic images"),
    "size_min": (int, 64, "smallest synthetic image size (geometric mean of sides)"),
    "size_max": (int, 128, "largest synthetic image size"),
    "aspect_min": (float, 0.4, "smallest synthetic aspect ratio (height/width)"),
    "aspect_max": (float, 2.5, "largest synthetic aspect ratio"),
}

COMMAND_KEYS = {
    "synth": ("out", "n_images", "seed", "size_min", "size_max", "aspect_min", "aspect_max"),
    "train": ("data", "out", "loss", "strategy", "k", "beta", "epsilon", "stop_weight_gradient", "S", "P", "G",
              "batch_images", "epochs", "init_lr", "decay_factor", "decay_interval", "momentum", "weight_decay",
              "pretrain_epochs", "pretrain_lr", "validation_interval", "channels", "input_min_side", "seed",
              "split_seed"),
    "eval": ("data", "out", "checkpoint", "strategy", "S", "P", "G", "m", "n", "seed", "split_seed", "split",
             "sweep"),
    "predict": ("checkpoint", "image", "strategy", "S", "P", "G", "m", "n", "seed"),
}

FLAG_ALIASES = {"n_images": ["--n"]}


def parse_range(text) -> list[int]:
    """``"3"`` -> [3]; ``"1,4,9"`` -> [1, 4, 9]; ``"1..10"`` -> [1, ..., 10]."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"bad count range {text!r}") from None
    if not values or min(values) < 1:
        raise UsageError(f"bad count range {text!r}")
    return values


def read_config_file(path) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, flags: dict, config_path=None) -> dict:
    allowed = COMMAND_KEYS[command]
    file_values = read_config_file(config_path) if config_path else {}
    unknown = sorted(set(file_values) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {}
    for key in allowed:
        parse, default, _ = KEYS[key]
        value = flags.get(key)
        if value is None:
            value = file_values.get(key)
        if value is None:
            cfg[key] = default
            continue
        try:
            cfg[key] = parse(value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from None
    return cfg


def echo_config(cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {'' if v is None else v}")
    (out_dir / "config.resolved").write_text("\n".join(lines) + "\n")


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise UsageError(f"--{key.replace('_', '-')} is required")


# ------------------------------------------------------------------ commands


def cmd_synth(cfg) -> int:
    _require(cfg, "out")
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        synth_generate(cfg["n_images"], (cfg["size_min"], cfg["size_max"]), (cfg["aspect_min"], cfg["aspect_max"]),
                       seed=cfg["seed"], out_dir=out)
    except OSError as exc:
        log.error("cannot write dataset to %s: %s", out, exc)
        return EXIT_RUNTIME
    log.info("wrote %d images to %s", cfg["n_images"], out)
    return EXIT_OK


def resolve_training(cfg) -> dict:
    """Fill loss-dependent defaults and check the loss/strategy pair."""
    loss, strategy = cfg["loss"], cfg["strategy"]
    if loss is None:
        loss = "col-emd" if strategy == COLLECTIVE else "ind-emd"
    if loss not in VARIANTS:
        raise UsageError(f"unknown loss {loss!r}; valid variants: {', '.join(VARIANTS)}")
    if strategy is not None and strategy not in (COLLECTIVE, INDIVIDUAL):
        raise UsageError(f"training strategy must be collective or individual, got {strategy!r}")
    if strategy is not None and VARIANTS[loss][0] != strategy:
        raise UsageError(f"loss {loss} belongs to the {VARIANTS[loss][0]} strategy, not {strategy}")
    cfg = dict(cfg, loss=loss, strategy=VARIANTS[loss][0])
    sched = LossSpec.from_slug(loss).schedule
    for key, value in (("epochs", sched.epochs), ("init_lr", sched.init_lr),
                       ("decay_factor", sched.decay_factor), ("decay_interval", sched.decay_interval)):
        if cfg[key] is None:
            cfg[key] = value
    return cfg


def cmd_train(cfg) -> int:
    _require(cfg, "data", "out")
    cfg = resolve_training(cfg)
    try:
        params = EmdParams(k=cfg["k"], beta=cfg["beta"], epsilon=cfg["epsilon"])
        spec = LossSpec.from_slug(cfg["loss"], params, stop_weight_gradient=cfg["stop_weight_gradient"])
        scorer_cfg = ScorerConfig(conv_channels=cfg["channels"], input_min_side=cfg["input_min_side"])
        val_plan = PatchPlan(MP_GLOBAL_LOCAL, m=2, P=cfg["P"], S=cfg["S"], G=cfg["G"])
        common = dict(batch_images=cfg["batch_images"], S=cfg["S"], P=cfg["P"], seed=cfg["seed"],
                      validation_interval=cfg["validation_interval"], val_plan=val_plan)
        opt = OptimizerConfig(cfg["init_lr"], cfg["decay_factor"], cfg["decay_interval"], cfg["momentum"],
                              cfg["weight_decay"])
        plan = TrainPlan(phase=spec.strategy, loss=spec, epochs=cfg["epochs"], optimizer=opt, **common)
        pre_plan = None
        if spec.strategy == COLLECTIVE and cfg["pretrain_epochs"] > 0:
            pre_opt = OptimizerConfig(cfg["pretrain_lr"], 0.95, 10, cfg["momentum"], cfg["weight_decay"])
            pre_plan = TrainPlan.pretrain(epochs=cfg["pretrain_epochs"], optimizer=pre_opt, **common)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    out = Path(cfg["out"])
    echo_config(cfg, out)
    data = load_dataset(cfg["data"], seed=cfg["split_seed"])
    scorer = init_scorer(scorer_cfg, seed=cfg["seed"])
    if pre_plan is not None:
        log.info("pre-training on square-resized images for %d epochs", pre_plan.epochs)
        scorer = pretrain_square(data, scorer, pre_plan, out / "pretrain").scorer
    fit = train_collective if spec.strategy == COLLECTIVE else train_individual
    log.info("training %s for %d epochs", spec.slug, plan.epochs)
    result = fit(data, scorer, plan, out)
    log.info("best epoch %d; checkpoint %s", result.best_epoch, out / "best.mpak")
    return EXIT_OK


def _eval_plans(cfg) -> list[PatchPlan]:
    strategy = cfg["strategy"] or MP_GLOBAL_LOCAL
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown test strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
    geo = dict(P=cfg["P"], S=cfg["S"], G=cfg["G"])
    try:
        if strategy == MP_RANDOM:
            return [PatchPlan(strategy, n_random=n, **geo) for n in parse_range(cfg["n"])]
        return [PatchPlan(strategy, m=m, **geo) for m in parse_range(cfg["m"])]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v):
    return "" if v is None else repr(float(v))


def write_eval_outputs(out: Path, report, table):
    out.mkdir(parents=True, exist_ok=True)
    report.sweep = table
    (out / "report.json").write_text(report.to_json())
    cols = ("lcc", "srcc", "mse", "rmse", "mean_emd", "binary_accuracy")
    _write_csv(out / "sweep.csv", ("strategy", "patch_count") + cols,
               [(s, c) + tuple(_num(m[k]) for k in cols) for s, c, m in sweep_rows(table)])
    _write_csv(out / "ae_histogram.csv", ("bin", "count"),
               [(label, report.ae_histogram[label]) for label in ae_bin_labels()])
    _write_csv(out / "bucket_mse.csv", ("aspect_bucket", "count", "mse"),
               [(k, report.aspect_bucket_counts[k], _num(v)) for k, v in report.mse_by_aspect_bucket.items()])


def cmd_eval(cfg) -> int:
    _require(cfg, "data", "out", "checkpoint")
    plans = _eval_plans(cfg)
    if cfg["split"] not in ("train", "validation", "test"):
        raise UsageError(f"unknown split {cfg['split']!r}")
    ckpt_path = Path(cfg["checkpoint"])
    if not ckpt_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    out = Path(cfg["out"])
    echo_config(cfg, out)
    scorer = load_checkpoint(ckpt_path).scorer()
    data = load_dataset(cfg["data"], seed=cfg["split_seed"])
    samples = data.samples(cfg["split"])
    table = sweep(scorer, samples, plans, seed=cfg["seed"])
    if cfg["sweep"]:
        extra = sweep(scorer, samples, sweep_plans(cfg["P"], cfg["S"], cfg["G"]), seed=cfg["seed"])
        for strategy, rows in extra.items():
            table.setdefault(strategy, {}).update(rows)
    report = evaluate(scorer, samples, plans[-1], seed=cfg["seed"])
    write_eval_outputs(out, report, table)
    m = report.metrics()
    log.info("%s with %d patches: %s", report.strategy, report.patch_count,
             ", ".join(f"{k}={'n/a' if v is None else f'{v:.4f}'}" for k, v in m.items()))
    return EXIT_OK


def cmd_predict(cfg) -> int:
    _require(cfg, "checkpoint", "image")
    plan = _eval_plans(cfg)[-1]
    ckpt_path = Path(cfg["checkpoint"])
    if not ckpt_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    scorer = load_checkpoint(ckpt_path).scorer()
    image = decode_image(cfg["image"])
    dist = predict_distribution(scorer, image, plan, np.random.default_rng(cfg["seed"]))
    print(json.dumps({"image": cfg["image"], "strategy": plan.strategy, "patch_count": plan.patch_count,
                      "distribution": [float(v) for v in dist], "score": mean_score(dist)}))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}
DESCRIPTIONS = {
    "synth": "generate a teacher-labeled synthetic dataset",
    "train": "train a scorer (pre-training + collective, or individual)",
    "eval": "evaluate a checkpoint and write report.json plus plot-ready CSVs",
    "predict": "print the predicted distribution and score of one image",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aspectpatch", description=__doc__.split("\n\n")[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name])
        p.add_argument("--config", help="file of key = value lines (overridden by flags)")
        for key in keys:
            _, default, help_text = KEYS[key]
            shown = "" if default is None else f" (default: {','.join(map(str, default)) if isinstance(default, tuple) else default})"
            flags = FLAG_ALIASES.get(key, [f"--{key.replace('_', '-')}"])
            p.add_argument(*flags, dest=key, default=None, metavar=key.upper(), help=help_text + shown)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "quiet")}
    try:
        cfg = resolve(args.command, flags, args.config)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"aspectpatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (errors.ParseError, errors.DecodeError, errors.EmptyDataset, errors.InvalidHistogram,
            errors.PatchTooLarge, FileNotFoundError) as exc:
        print(f"aspectpatch {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print(f"aspectpatch {args.command}: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"aspectpatch {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

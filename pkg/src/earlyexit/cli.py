"""Command-line entry point: ``earlyexit {train,sweep,infer,viz,synth}``.

Runs are configured by a flat ``key=value`` file (``#`` starts a comment);
command-line flags override file values.  Exit codes: 0 success, 2 bad
usage or configuration, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from . import attnviz, bench, checkpoint
from .data import (
    SynthSpec,
    Vocab,
    atomic_write_text,
    build_vocab,
    encode,
    encode_dataset,
    generate_synthetic,
    load_tsv,
    tokenize,
    write_tsv,
)
from .errors import ConfigError, InputError, NumericError
from .exit_policy import Criterion, ExitConfig, puzzlement
from .model import ModelConfig, forward_adaptive, init_params
from .training import TrainConfig, metrics_header, train

log = logging.getLogger("earlyexit")

STAGES = {
    "s1s2": (True, True),
    "s1": (True, False),
    "s2": (False, True),
    "none": (False, False),
}
_EXIT_KEYS = {"delta": float, "window": int, "criterion": str, "range_epsilon": float, "stages": str}
_RUN_KEYS = {"train_data": str, "test_data": str, "out": str, "seed": int, "deltas": str}
_TRAIN_KEYS = {"learning_rate": float, "batch_size": int, "epochs": int, "t_init": float}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    exit: ExitConfig = field(default_factory=ExitConfig)
    sweep: bench.SweepConfig = field(default_factory=bench.SweepConfig)
    train_data: Optional[Path] = None
    test_data: Optional[Path] = None
    out: Path = Path("runs")
    seed: int = 0


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key=value")
        values[key.strip()] = value.strip()
    return values


def _exit_config(values: dict, base: ExitConfig = ExitConfig()) -> ExitConfig:
    changes = {}
    if "delta" in values:
        changes["delta"] = float(values["delta"])
    if "window" in values:
        changes["window_size"] = int(values["window"])
    if "criterion" in values:
        try:
            changes["criterion"] = Criterion(values["criterion"])
        except ValueError:
            raise ConfigError(f"unknown criterion {values['criterion']!r}") from None
    if "range_epsilon" in values:
        changes["range_epsilon"] = float(values["range_epsilon"])
    if "stages" in values:
        if values["stages"] not in STAGES:
            raise ConfigError(f"stages must be one of {sorted(STAGES)}")
        changes["stage1_enabled"], changes["stage2_enabled"] = STAGES[values["stages"]]
    return replace(base, **changes)


def build_run_config(values: dict, base_dir: Path = Path(".")) -> RunConfig:
    model_kinds = {f.name: type(getattr(ModelConfig(), f.name)) for f in fields(ModelConfig)}
    known = set(model_kinds) | set(_EXIT_KEYS) | set(_RUN_KEYS) | set(_TRAIN_KEYS)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        model = ModelConfig(**{k: model_kinds[k](v) for k, v in values.items() if k in model_kinds})
        seed = int(values.get("seed", 0))
        train_cfg = TrainConfig(seed=seed, **{k: kind(values[k]) for k, kind in _TRAIN_KEYS.items() if k in values})
        exit_cfg = _exit_config(values)
        sweep = bench.SweepConfig(exit_template=exit_cfg)
        if "deltas" in values:
            sweep = bench.SweepConfig(tuple(float(d) for d in values["deltas"].split(",")), exit_cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    def path(key):
        if key not in values:
            return None
        p = Path(values[key])
        return p if p.is_absolute() else base_dir / p

    return RunConfig(model, train_cfg, exit_cfg, sweep, path("train_data"), path("test_data"),
                     path("out") or Path("runs"), seed)


def _collect_values(args) -> tuple[dict, Path]:
    values, base_dir = {}, Path(".")
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        try:
            values = parse_config_text(cfg_path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        base_dir = cfg_path.parent
    for key in ("seed", "delta", "window", "criterion", "range_epsilon", "stages"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    return values, base_dir


def _load_model(args):
    ckpt = Path(args.checkpoint)
    try:
        params = checkpoint.load_checkpoint(ckpt)
        vocab = Vocab.load(Path(args.vocab) if args.vocab else ckpt.with_name("vocab.txt"))
    except OSError as e:
        raise ConfigError(f"cannot load model: {e}") from None
    return params, vocab


def cmd_train(args) -> int:
    values, base_dir = _collect_values(args)
    run = build_run_config(values, base_dir)
    out = Path(args.out) if args.out else run.out
    if run.train_data is None:
        raise ConfigError("train_data is not set")
    try:
        examples = load_tsv(run.train_data)
    except OSError as e:
        raise ConfigError(f"cannot read dataset: {e}") from None
    if not examples:
        raise ConfigError("training set is empty")
    if max(ex.label for ex in examples) >= run.model.num_classes:
        raise ConfigError(f"dataset labels exceed num_classes={run.model.num_classes}")
    vocab = build_vocab([ex.text for ex in examples], run.model.vocab_size)
    data = encode_dataset(examples, vocab, run.model.max_seq_len, run.model.num_classes)
    params = init_params(run.model, seed=run.seed, t_init=run.train.t_init)
    result = train(data, params, run.train)

    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_checkpoint(params, out / "checkpoint.bin")
    vocab.save(out / "vocab.txt")
    lines = [metrics_header(run.model.depth)] + [m.csv_line() for m in result.history]
    atomic_write_text(out / "metrics.csv", "\n".join(lines) + "\n")
    summary = {"checkpoint": str(out / "checkpoint.bin"), "epochs": len(result.history),
               "losses": result.losses}
    if run.test_data is not None:
        test = encode_dataset(load_tsv(run.test_data), vocab, run.model.max_seq_len, run.model.num_classes)
        summary["test_accuracy"] = bench.evaluate(params, test, ExitConfig.disabled()).accuracy
    _emit(args, summary, f"wrote {out / 'checkpoint.bin'}; final loss {result.losses[-1] if result.losses else float('nan'):.5f}")
    return 0


def cmd_sweep(args) -> int:
    values, base_dir = _collect_values(args)
    run = build_run_config(values, base_dir)
    params, vocab = _load_model(args)
    data_path = Path(args.data) if args.data else run.test_data
    if data_path is None:
        raise ConfigError("no evaluation data given")
    try:
        examples = load_tsv(data_path)
    except OSError as e:
        raise ConfigError(f"cannot read dataset: {e}") from None
    if examples and max(ex.label for ex in examples) >= params.cfg.num_classes:
        raise ConfigError("dataset labels exceed the checkpoint's class count")
    data = encode_dataset(examples, vocab, params.cfg.max_seq_len, params.cfg.num_classes)
    points = bench.sweep(params, data, run.sweep)
    out = Path(args.out) if args.out else run.out
    out.mkdir(parents=True, exist_ok=True)
    bench.export_curves(points, out / "curves.csv")
    bench.export_curves(points, out / "curves.json")
    if args.json:
        print(json.dumps([bench._point_to_json(p) for p in points]))
    else:
        print(bench.format_table(points))
    return 0


def _text_ids(args, vocab, params):
    if not args.text or not tokenize(args.text):
        raise InputError("text is empty")
    return encode(args.text, vocab, params.cfg.max_seq_len)


def cmd_infer(args) -> int:
    values, _ = _collect_values(args)
    exit_cfg = _exit_config(values)
    params, vocab = _load_model(args)
    ids = _text_ids(args, vocab, params)
    label, decision, trace = forward_adaptive(ids, params, exit_cfg)
    report = {
        "label": label,
        "exit_layer": decision.layer,
        "reason": decision.reason.value,
        "depth": params.cfg.depth,
        "puzzlement": [puzzlement(p) for p in trace.dists],
        "probs": trace.dists[-1].probs.tolist(),
    }
    _emit(args, report, "\n".join([
        f"label      {label}",
        f"exit layer {decision.layer}/{params.cfg.depth} ({decision.reason.value})",
        "puzzlement " + " ".join(f"{v:.4f}" for v in report["puzzlement"]),
    ]))
    return 0


def cmd_viz(args) -> int:
    values, _ = _collect_values(args)
    exit_cfg = _exit_config(values)
    params, vocab = _load_model(args)
    ids = _text_ids(args, vocab, params)
    n = 1 + len(tokenize(args.text))
    ids = ids[: min(n, len(ids))]  # padding carries no attention mass
    _, decision, trace = forward_adaptive(ids, params, exit_cfg)
    profile = attnviz.cumulative_attention(trace, [vocab.token(i) for i in ids], decision)
    out = Path(args.out)
    attnviz.export_profile(profile, out)
    if args.svg:
        attnviz.render_svg(profile, args.svg)
    _emit(args, {"profile": str(out), "exit_layer": decision.layer, "reason": decision.reason.value},
          f"wrote {out} (exit at layer {decision.layer}, {decision.reason.value})")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(negation_rate=args.negation_rate, seed=args.seed if args.seed is not None else 0)
    examples = generate_synthetic(spec, args.n)
    write_tsv(examples, args.out)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def _emit(args, payload, text):
    print(json.dumps(payload) if getattr(args, "json", False) else text)


def _add_exit_flags(p):
    p.add_argument("--delta", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--criterion", choices=[c.value for c in Criterion])
    p.add_argument("--range-epsilon", dest="range_epsilon", type=float)
    p.add_argument("--stages", choices=list(STAGES))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="earlyexit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--json", action="store_true")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="accuracy/cost curve over the delta grid")
    common(p)
    _add_exit_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--data")
    p.set_defaults(func=cmd_sweep)

    for name, func, help_ in (("infer", cmd_infer, "classify one text adaptively"),
                              ("viz", cmd_viz, "export the [cls] attention profile of one text")):
        p = sub.add_parser(name, help=help_)
        common(p)
        _add_exit_flags(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--vocab")
        p.add_argument("--text", required=True)
        if name == "viz":
            p.add_argument("--svg")
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="write a synthetic sentiment TSV")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--negation-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "viz" and not args.out:
        print("error: viz needs --out", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

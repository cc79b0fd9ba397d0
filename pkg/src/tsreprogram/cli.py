"""Command-line interface: data synthesis, preprocessing, training, runs.

Exit codes: 0 on success, 2 for usage errors (argparse), 1 for categorized
runtime failures (config, data, shape, format, numeric).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .dataio import (DEFAULT_PLANTS, chronological_split, load_series,
                     preprocess, write_series_csv)
from .errors import ConfigError, TsrError
from .harness import (DEFAULT_FRACTIONS, ExperimentConfig, _default_strides,
                      build_train_config, input_len_for, load_manifests,
                      load_plants, resolve_context, resolve_out_dir,
                      run_experiment, summarize, synth_fixture_series,
                      write_manifests)
from .dataio import make_windows
from .trainer import (ModelState, evaluate, load_checkpoint, save_checkpoint,
                      train)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsreprogram",
        description="Patch-reprogramming PV power forecaster and experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic plant CSVs and a manifest")
    p_synth.add_argument("--out", help="output directory (default: <out root>/synth-data)")
    p_synth.add_argument("--days", type=int, default=60)
    p_synth.add_argument("--seed", type=int, default=100, help="base seed; plant index is added")
    p_synth.add_argument("--cloud", type=float, default=0.35)
    p_synth.add_argument("--plants", default="A,B,C", help="comma-separated plant ids")
    p_synth.set_defaults(func=_cmd_synth)

    p_prep = sub.add_parser("prep", help="clean and normalize one plant's raw CSV")
    p_prep.add_argument("--data", required=True, help="directory with <plant>.csv and manifest.yaml")
    p_prep.add_argument("--plant", required=True)
    p_prep.add_argument("--out", help="output directory (default: <data>/prepped)")
    p_prep.set_defaults(func=_cmd_prep)

    p_train = sub.add_parser("train", help="train the forecaster for one plant/horizon/seed")
    p_train.add_argument("--config", required=True, help="experiment config YAML")
    p_train.add_argument("--plant")
    p_train.add_argument("--horizon", type=int)
    p_train.add_argument("--input-len", type=int)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", help="checkpoint path (default: <out root>/checkpoints/...)")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one plant split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True, help="experiment config YAML (data source)")
    p_eval.add_argument("--plant")
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_eval.set_defaults(func=_cmd_eval)

    p_exp = sub.add_parser("experiment", help="run a full protocol and write report CSVs")
    p_exp.add_argument("--config", help="experiment config YAML; flags override")
    p_exp.add_argument("--protocol", choices=("short", "long", "fewshot", "zeroshot"))
    p_exp.add_argument("--horizon", type=int, help="restrict to a single horizon")
    p_exp.add_argument("--input-len", type=int)
    p_exp.add_argument("--fraction", type=float, help="restrict few-shot to one fraction")
    p_exp.add_argument("--source", help="zero-shot source plant")
    p_exp.add_argument("--target", help="zero-shot target plant")
    p_exp.add_argument("--seed", type=int, help="restrict to a single seed")
    p_exp.add_argument("--data", help="plant data directory (default: synthetic fixture)")
    p_exp.add_argument("--out", help="output root directory")
    p_exp.set_defaults(func=_cmd_experiment)

    p_sum = sub.add_parser("summarize", help="aggregate a report CSV across plants and seeds")
    p_sum.add_argument("--report", required=True)
    p_sum.add_argument("--out", help="summary CSV path (default: alongside the report)")
    p_sum.set_defaults(func=_cmd_summarize)
    return parser


def _cmd_synth(args) -> int:
    out_dir = Path(args.out) if args.out else resolve_out_dir(None, None) / "synth-data"
    wanted = [p.strip() for p in args.plants.split(",") if p.strip()]
    cfg = ExperimentConfig(protocol="short", plants=tuple(wanted), days=args.days,
                           cloud_level=args.cloud, synth_seed_base=args.seed)
    by_id = {m.plant_id: m for m in DEFAULT_PLANTS}
    manifests = []
    for pid, series in synth_fixture_series(cfg).items():
        manifest = by_id[pid]
        manifests.append(manifest)
        path = out_dir / f"{pid}.csv"
        write_series_csv(path, series, capacity_mw=manifest.capacity_mw)
        print(f"wrote {path} ({len(series)} points)")
    write_manifests(out_dir / "manifest.yaml", manifests)
    print(f"wrote {out_dir / 'manifest.yaml'}")
    return 0


def _cmd_prep(args) -> int:
    data_dir = Path(args.data)
    manifests = load_manifests(data_dir / "manifest.yaml")
    if args.plant not in manifests:
        raise ConfigError(f"plant {args.plant!r} missing from {data_dir / 'manifest.yaml'}")
    manifest = manifests[args.plant]
    raw = load_series(data_dir / f"{args.plant}.csv", manifest)
    series = preprocess(raw, manifest)
    out_dir = Path(args.out) if args.out else data_dir / "prepped"
    out_path = out_dir / f"{args.plant}.csv"
    write_series_csv(out_path, series, capacity_mw=manifest.capacity_mw)
    bundle = chronological_split(series)
    n_train, n_val, n_test = bundle.lengths()
    print(f"wrote {out_path}: {len(raw)} raw points, {raw.gap_count} gaps filled")
    print(f"split sizes: train={n_train} val={n_val} test={n_test}")
    return 0


def _load_experiment_config(config_path: str | None, overrides: dict) -> ExperimentConfig:
    raw = {}
    if config_path:
        with open(config_path) as fh:
            loaded = yaml.safe_load(fh)
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_path}: expected a mapping at top level")
        raw = loaded
    raw.update({k: v for k, v in overrides.items() if v is not None})
    raw.setdefault("protocol", "short")
    return ExperimentConfig.from_dict(raw)


def _cmd_train(args) -> int:
    cfg = _load_experiment_config(args.config, {"input_len": args.input_len})
    plants = load_plants(cfg)
    plant = args.plant or cfg.plants[0]
    if plant not in plants:
        raise ConfigError(f"plant {plant!r} not in config plants {cfg.plants}")
    horizon = args.horizon or cfg.horizons[0]
    input_len = input_len_for(cfg.protocol, horizon, cfg.input_len)
    train_stride, val_stride, _ = _resolved_strides(cfg, horizon)
    bundle = plants[plant].bundle
    train_w = make_windows(bundle.train, input_len, horizon, train_stride)
    val_w = make_windows(bundle.val, input_len, horizon, val_stride)
    tc = build_train_config(cfg, horizon, input_len, args.seed, resolve_context(cfg))
    state = ModelState(tc)
    print(f"training on {plant}: {len(train_w)} windows, horizon {horizon}, "
          f"input {input_len}, {state.census()} trainable parameters")
    history = train(state, train_w, val_w, tc)
    out = Path(args.out) if args.out else (
        resolve_out_dir(None, cfg.out_dir) / "checkpoints"
        / f"{cfg.protocol}_{plant}_h{horizon}_s{args.seed}.tsrp")
    save_checkpoint(state, out)
    final_val = history.val_loss[-1] if history.val_loss else float("nan")
    print(f"wrote {out} after {history.steps} steps "
          f"(train loss {history.train_loss[-1]:.6f}, val loss {final_val:.6f})")
    return 0


def _resolved_strides(cfg: ExperimentConfig, horizon: int) -> tuple[int, int, int]:
    d_train, d_val, d_test = _default_strides(cfg.protocol, horizon)
    return (cfg.train_stride or d_train, cfg.val_stride or d_val,
            cfg.test_stride or d_test)


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = _load_experiment_config(args.config, {})
    plants = load_plants(cfg)
    plant = args.plant or cfg.plants[0]
    if plant not in plants:
        raise ConfigError(f"plant {plant!r} not in config plants {cfg.plants}")
    bundle = plants[plant].bundle
    segment = getattr(bundle, args.split)
    _, _, test_stride = _resolved_strides(cfg, state.cfg.horizon)
    windows = make_windows(segment, state.cfg.input_len, state.cfg.horizon, test_stride)
    report = evaluate(state, windows, state.cfg)
    print(f"plant={plant} split={args.split} n={report.n} "
          f"mse={report.mse:.6f} mae={report.mae:.6f} "
          f"r2_raw={report.r2_raw:.4f} r2_reported={report.r2_reported:.4f} "
          f"smape={report.smape:.2f}")
    return 0


def _cmd_experiment(args) -> int:
    overrides: dict = {
        "protocol": args.protocol,
        "input_len": args.input_len,
        "data_dir": args.data,
    }
    if args.horizon is not None:
        overrides["horizons"] = [args.horizon]
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.fraction is not None:
        if not any(abs(args.fraction - f) < 1e-12 for f in DEFAULT_FRACTIONS):
            print(f"warning: fraction {args.fraction} is outside the default set "
                  f"{DEFAULT_FRACTIONS}", file=sys.stderr)
        overrides["fractions"] = [args.fraction]
    if (args.source is None) != (args.target is None):
        raise ConfigError("--source and --target must be given together")
    if args.source is not None:
        overrides["pairs"] = [(args.source, args.target)]
        if (args.protocol or "zeroshot") != "zeroshot":
            raise ConfigError("--source/--target apply only to the zeroshot protocol")
        overrides["protocol"] = "zeroshot"
    cfg = _load_experiment_config(args.config, overrides)
    report_path = run_experiment(cfg, out_dir=args.out, log=print)
    print(f"report: {report_path}")
    return 0


def _cmd_summarize(args) -> int:
    report_path = Path(args.report)
    out_path = Path(args.out) if args.out else report_path.parent / "summary.csv"
    entries = summarize(report_path, out_path)
    header = f"{'protocol':<9} {'h':>4} {'frac':>5} {'model':<12} " \
             f"{'mse':>10} {'mae':>10} {'r2':>7} {'smape':>8}  best"
    print(header)
    for e in entries:
        print(f"{e['protocol']:<9} {e['horizon']:>4} {e['fraction'] or '-':>5} "
              f"{e['model']:<12} {e['mse']:>10.6f} {e['mae']:>10.6f} "
              f"{e['r2_reported']:>7.4f} {e['smape']:>8.2f}  {e['best'] or '-'}")
    print(f"summary: {out_path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TsrError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

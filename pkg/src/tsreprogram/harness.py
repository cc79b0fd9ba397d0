"""Experiment orchestration: protocols, report CSVs, and aggregation.

Four protocols are supported: `short` (input = twice the horizon), `long`
(input fixed at 336 steps), `fewshot` (training limited to a chronological
prefix fraction of windows), and `zeroshot` (train on a source plant,
evaluate on an unseen target plant with zero parameter updates).  Each
(case, seed, model) cell appends one report row and one forecast trace
file; rerunning a config reproduces the report byte for byte.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .backbone import BackboneConfig
from .baselines import (DLinearConfig, DLinearState, dlinear_forecasts,
                        persistence_forecasts, train_dlinear)
from .dataio import (DEFAULT_PLANTS, PlantManifest, SplitBundle, TimeSeries,
                     WindowSet, chronological_split, limit_fraction,
                     load_series, make_windows, preprocess, synth_plant,
                     windows_within)
from .errors import ConfigError, DataError
from .metrics import MetricsReport
from .patcher import PatchConfig
from .promptgen import (DEFAULT_DATASET_CONTEXT, PromptStats, render_prompt,
                        tokenize)
from .reprogrammer import AttentionConfig
from .trainer import (ModelState, TrainConfig, evaluate_with_forecasts, train)

PROTOCOLS = ("short", "long", "fewshot", "zeroshot")
MODELS = ("persistence", "dlinear", "tsreprogram")
DEFAULT_FRACTIONS = (0.05, 0.10, 0.20, 0.50)
LONG_INPUT_LEN = 336
OUT_DIR_ENV = "TSRP_OUT_DIR"

REPORT_COLUMNS = ("protocol", "model", "plant", "horizon", "seed", "fraction",
                  "mse", "mae", "r2_raw", "r2_reported", "smape")

# kept short: prompt tokens dominate backbone cost, so the fixture uses a
# one-line description instead of the full default context
SYNTH_DATASET_CONTEXT = (
    "Synthetic capacity-normalized solar power at five-minute resolution.")

_DEFAULT_HORIZONS = {
    "short": (12, 24),
    "long": (192, 336),
    "fewshot": (12,),
    "zeroshot": (12,),
}

# Keys accepted in the `train` override table of an experiment config.
_TRAIN_KEYS = {"max_epochs", "batch_size", "lr", "patience", "standardize",
               "use_prompt", "v_prime", "max_steps", "grad_clip"}
_PATCH_KEYS = {"m", "s_d", "d_model"}
_ATTN_KEYS = {"heads", "d_h"}
_BACKBONE_KEYS = {"layers", "backbone_heads", "d_llm", "d_ff", "max_seq",
                  "backbone_seed"}
_DLINEAR_KEYS = {"kernel", "lr", "batch_size", "max_epochs", "patience",
                 "max_steps"}


@dataclass
class ExperimentConfig:
    protocol: str
    plants: tuple[str, ...] = ("A", "B", "C")
    horizons: tuple[int, ...] | None = None
    seeds: tuple[int, ...] = (0, 1, 2)
    models: tuple[str, ...] = MODELS
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    pairs: tuple[tuple[str, str], ...] | None = None
    data_dir: str | None = None
    out_dir: str | None = None
    days: int = 60
    cloud_level: float = 0.35
    synth_seed_base: int = 100
    dataset_context: str | None = None
    input_len: int | None = None
    train_stride: int | None = None
    val_stride: int | None = None
    test_stride: int | None = None
    train: dict = field(default_factory=dict)
    dlinear: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if not self.plants:
            raise ConfigError("at least one plant required")
        unknown_models = set(self.models) - set(MODELS)
        if unknown_models:
            raise ConfigError(f"unknown models {sorted(unknown_models)}; choose from {MODELS}")
        if self.horizons is None:
            self.horizons = _DEFAULT_HORIZONS[self.protocol]
        self.horizons = tuple(int(h) for h in self.horizons)
        if any(h < 1 for h in self.horizons):
            raise ConfigError(f"horizons must be >= 1, got {self.horizons}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed required")
        self.fractions = tuple(float(f) for f in self.fractions)
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"fractions must be in (0, 1], got {f}")
        if self.protocol == "zeroshot":
            if self.pairs is None:
                self.pairs = tuple((a, b) for a in self.plants for b in self.plants if a != b)
            self.pairs = tuple((str(a), str(b)) for a, b in self.pairs)
            for a, b in self.pairs:
                if a == b:
                    raise ConfigError(f"zero-shot pair must use distinct plants, got {a}->{b}")
                if a not in self.plants or b not in self.plants:
                    raise ConfigError(f"pair {a}->{b} references unlisted plants {self.plants}")
        for table, allowed in ((self.train, _TRAIN_KEYS | _PATCH_KEYS | _ATTN_KEYS | _BACKBONE_KEYS),
                               (self.dlinear, _DLINEAR_KEYS)):
            unknown = set(table) - allowed
            if unknown:
                raise ConfigError(f"unknown override keys {sorted(unknown)}; allowed: {sorted(allowed)}")

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        if "pairs" in raw and raw["pairs"] is not None:
            pairs = []
            for item in raw["pairs"]:
                if isinstance(item, str):
                    if "->" not in item:
                        raise ConfigError(f"pair {item!r} must look like 'A->B'")
                    a, b = item.split("->", 1)
                    pairs.append((a.strip(), b.strip()))
                else:
                    a, b = item
                    pairs.append((str(a), str(b)))
            raw["pairs"] = tuple(pairs)
        for key in ("plants", "horizons", "seeds", "models", "fractions"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(raw[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None


def resolve_out_dir(explicit: str | None, cfg_out: str | None) -> Path:
    """Output root priority: CLI flag, config, TSRP_OUT_DIR, ./runs."""
    for candidate in (explicit, cfg_out, os.environ.get(OUT_DIR_ENV)):
        if candidate:
            return Path(candidate)
    return Path("runs")


def resolve_context(cfg: "ExperimentConfig") -> str:
    if cfg.dataset_context is not None:
        return cfg.dataset_context
    return SYNTH_DATASET_CONTEXT if cfg.data_dir is None else DEFAULT_DATASET_CONTEXT


def input_len_for(protocol: str, horizon: int, override: int | None) -> int:
    if protocol == "long":
        return LONG_INPUT_LEN  # fixed by the protocol regardless of horizon
    if override is not None:
        return int(override)
    return 2 * horizon


def _default_strides(protocol: str, horizon: int) -> tuple[int, int, int]:
    # strides co-prime with the 288-slot day so window origins sweep every
    # time of day instead of locking onto a few phases
    if protocol == "long":
        return 283, 571, 331
    return 97, 53, 37


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class PlantData:
    manifest: PlantManifest
    series: TimeSeries
    bundle: SplitBundle


def load_manifests(path) -> dict[str, PlantManifest]:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a list of plant entries")
    manifests = {}
    for entry in raw:
        try:
            m = PlantManifest(plant_id=str(entry["plant_id"]),
                              capacity_mw=float(entry["capacity_mw"]),
                              lon=float(entry["lon"]), lat=float(entry["lat"]),
                              timezone=str(entry.get("timezone", "local")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: bad plant entry {entry!r}: {exc}") from None
        manifests[m.plant_id] = m
    return manifests


def write_manifests(path, manifests) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = [
        {"plant_id": m.plant_id, "capacity_mw": m.capacity_mw,
         "lon": m.lon, "lat": m.lat, "timezone": m.timezone}
        for m in manifests
    ]
    with open(path, "w") as fh:
        yaml.safe_dump(entries, fh, sort_keys=True)


def synth_fixture_series(cfg: ExperimentConfig) -> dict[str, TimeSeries]:
    """Deterministic multi-plant fixture; capacities mirror the defaults."""
    by_id = {m.plant_id: (i, m) for i, m in enumerate(DEFAULT_PLANTS)}
    out = {}
    for pid in cfg.plants:
        if pid not in by_id:
            raise ConfigError(f"synthetic fixture defines plants {sorted(by_id)}, not {pid!r}")
        idx, manifest = by_id[pid]
        out[pid] = synth_plant(seed=cfg.synth_seed_base + idx, days=cfg.days,
                               capacity_mw=manifest.capacity_mw,
                               cloud_level=cfg.cloud_level, plant_id=pid)
    return out


def load_plants(cfg: ExperimentConfig) -> dict[str, PlantData]:
    plants: dict[str, PlantData] = {}
    if cfg.data_dir is None:
        by_id = {m.plant_id: m for m in DEFAULT_PLANTS}
        for pid, series in synth_fixture_series(cfg).items():
            plants[pid] = PlantData(by_id[pid], series, chronological_split(series))
        return plants
    data_dir = Path(cfg.data_dir)
    manifests = load_manifests(data_dir / "manifest.yaml")
    for pid in cfg.plants:
        if pid not in manifests:
            raise ConfigError(f"plant {pid!r} missing from {data_dir / 'manifest.yaml'}")
        csv_path = data_dir / f"{pid}.csv"
        if not csv_path.exists():
            raise ConfigError(f"missing data file {csv_path}")
        raw = load_series(csv_path, manifests[pid])
        series = preprocess(raw, manifests[pid])
        plants[pid] = PlantData(manifests[pid], series, chronological_split(series))
    return plants


def _assert_no_leakage(bundle: SplitBundle, train_w: WindowSet | None,
                       val_w: WindowSet | None, test_w: WindowSet):
    n_train, n_val, n_test = bundle.lengths()
    lo_val, lo_test = n_train, n_train + n_val
    hi = lo_test + n_test
    if train_w is not None and not windows_within(train_w, 0, n_train):
        raise DataError("training window escapes the training index range")
    if val_w is not None and not windows_within(val_w, lo_val, lo_test):
        raise DataError("validation window escapes the validation index range")
    if not windows_within(test_w, lo_test, hi):
        raise DataError("test window escapes the test index range")


# ---------------------------------------------------------------------------
# per-cell model construction


def build_train_config(cfg: ExperimentConfig, horizon: int, input_len: int,
                       seed: int, context: str) -> TrainConfig:
    over = dict(cfg.train)
    patch = PatchConfig(m=int(over.pop("m", 16)), s_d=int(over.pop("s_d", 8)),
                        d_model=int(over.pop("d_model", 16)))
    d_llm = int(over.pop("d_llm", 32))
    attention = AttentionConfig(heads=int(over.pop("heads", 4)),
                                d_h=int(over.pop("d_h", 8)),
                                d_llm=d_llm, d_model=patch.d_model)
    k = patch.patch_count(input_len)
    max_seq = over.pop("max_seq", None)
    if max_seq is None:
        # stats values render at fixed width, so the longest possible prompt
        # is the one with maximal trend word and lag digits
        worst = PromptStats(min_val=0.8888, max_val=0.9999, median_val=0.9999,
                            trend="downward",
                            top_lags=tuple(range(max(1, input_len - 5), input_len)))
        longest = render_prompt(context, horizon, input_len, worst)
        max_seq = int(np.ceil((len(tokenize(longest)) + k + 16) / 64.0)) * 64
    backbone = BackboneConfig(layers=int(over.pop("layers", 2)),
                              heads=int(over.pop("backbone_heads", 4)),
                              d_llm=d_llm, d_ff=int(over.pop("d_ff", 64)),
                              max_seq=int(max_seq),
                              seed=int(over.pop("backbone_seed", 0)))
    return TrainConfig(horizon=horizon, input_len=input_len,
                       max_epochs=int(over.pop("max_epochs", 12)),
                       batch_size=int(over.pop("batch_size", 16)),
                       lr=float(over.pop("lr", 3e-3)),
                       patience=int(over.pop("patience", 6)),
                       seed=seed,
                       standardize=bool(over.pop("standardize", True)),
                       use_prompt=bool(over.pop("use_prompt", True)),
                       dataset_context=context,
                       v_prime=int(over.pop("v_prime", 32)),
                       max_steps=over.pop("max_steps", None),
                       grad_clip=float(over.pop("grad_clip", 0.0)),
                       patch=patch, attention=attention, backbone=backbone)


def build_dlinear_config(cfg: ExperimentConfig, horizon: int, input_len: int,
                         seed: int) -> DLinearConfig:
    over = dict(cfg.dlinear)
    return DLinearConfig(horizon=horizon, input_len=input_len,
                         kernel=int(over.pop("kernel", 25)),
                         lr=float(over.pop("lr", 1e-2)),
                         batch_size=int(over.pop("batch_size", 32)),
                         max_epochs=int(over.pop("max_epochs", 60)),
                         patience=int(over.pop("patience", 5)),
                         seed=seed, max_steps=over.pop("max_steps", None))


# ---------------------------------------------------------------------------
# experiment run


@dataclass(frozen=True)
class Case:
    """One report cell before seed/model expansion."""

    label: str          # plant id, or "SRC->TGT" for transfer
    source: str         # plant providing train/val windows
    target: str         # plant providing test windows
    horizon: int
    fraction: float | None


def iter_cases(cfg: ExperimentConfig) -> list[Case]:
    cases = []
    if cfg.protocol == "zeroshot":
        for src, tgt in cfg.pairs:
            for h in cfg.horizons:
                cases.append(Case(f"{src}->{tgt}", src, tgt, h, None))
    elif cfg.protocol == "fewshot":
        for pid in cfg.plants:
            for h in cfg.horizons:
                for frac in sorted(cfg.fractions):
                    cases.append(Case(pid, pid, pid, h, frac))
    else:
        for pid in cfg.plants:
            for h in cfg.horizons:
                cases.append(Case(pid, pid, pid, h, None))
    return cases


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _trace_name(protocol: str, model: str, label: str, horizon: int,
                seed: int, fraction: float | None) -> str:
    safe_label = label.replace("->", "-")
    frac_part = f"_f{int(round(fraction * 100)):03d}" if fraction is not None else ""
    return f"trace_{protocol}_{model}_{safe_label}_h{horizon}{frac_part}_s{seed}.csv"


def _write_trace(path: Path, windows: WindowSet, forecasts: np.ndarray, model: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("timestamp", "truth", "forecast", "model"))
        for i in range(len(windows)):
            stamps = windows.target_timestamps(i)
            for j in range(windows.horizon):
                writer.writerow((stamps[j].isoformat(), _fmt(windows.targets[i, j]),
                                 _fmt(forecasts[i, j]), model))


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   log=None) -> Path:
    """Run every (case, seed, model) cell; returns the report CSV path."""
    say = log if log is not None else (lambda msg: None)
    plants = load_plants(cfg)
    root = resolve_out_dir(out_dir, cfg.out_dir)
    run_dir = root / cfg.protocol
    trace_dir = run_dir / "traces"
    run_dir.mkdir(parents=True, exist_ok=True)
    context = resolve_context(cfg)

    trained_cache: dict[tuple, object] = {}
    rows: list[dict] = []
    for case in iter_cases(cfg):
        input_len = input_len_for(cfg.protocol, case.horizon, cfg.input_len)
        d_train, d_val, d_test = _default_strides(cfg.protocol, case.horizon)
        train_stride = cfg.train_stride or d_train
        val_stride = cfg.val_stride or d_val
        test_stride = cfg.test_stride or d_test

        src_bundle = plants[case.source].bundle
        tgt_bundle = plants[case.target].bundle
        tgt_counts_before = dict(tgt_bundle.access_counts)
        test_w = make_windows(tgt_bundle.test, input_len, case.horizon, test_stride)

        for seed in cfg.seeds:
            trainable_w = None
            val_w = None
            for model in cfg.models:
                if model == "persistence":
                    forecasts = persistence_forecasts(test_w)
                else:
                    if trainable_w is None:
                        trainable_w = make_windows(src_bundle.train, input_len,
                                                   case.horizon, train_stride)
                        val_w = make_windows(src_bundle.val, input_len,
                                             case.horizon, val_stride)
                        if case.fraction is not None:
                            total = len(trainable_w)
                            trainable_w = limit_fraction(trainable_w, case.fraction)
                            say(f"fewshot {case.label} h={case.horizon} "
                                f"fraction={case.fraction}: using "
                                f"{len(trainable_w)} of {total} training windows")
                        _assert_no_leakage(src_bundle, trainable_w, val_w,
                                           make_windows(src_bundle.test, input_len,
                                                        case.horizon, test_stride))
                    key = (model, case.source, case.horizon, input_len, seed, case.fraction)
                    if key not in trained_cache:
                        say(f"training {model} on {case.source} h={case.horizon} "
                            f"seed={seed} ({len(trainable_w)} windows)")
                        if model == "dlinear":
                            state = DLinearState(build_dlinear_config(
                                cfg, case.horizon, input_len, seed))
                            train_dlinear(state, trainable_w, val_w)
                        else:
                            tc = build_train_config(cfg, case.horizon, input_len,
                                                    seed, context)
                            state = ModelState(tc)
                            train(state, trainable_w, val_w, tc)
                        trained_cache[key] = state
                    state = trained_cache[key]
                    if model == "dlinear":
                        forecasts = dlinear_forecasts(state, test_w)
                    else:
                        before = state.trainable_hash()
                        report, forecasts = evaluate_with_forecasts(state, test_w, state.cfg)
                        if state.trainable_hash() != before:
                            raise DataError("evaluation mutated trainable parameters")
                if cfg.protocol == "zeroshot":
                    after = tgt_bundle.access_counts
                    if (after["train"] != tgt_counts_before["train"]
                            or after["val"] != tgt_counts_before["val"]):
                        raise DataError(
                            f"zero-shot cell {case.label} read the target plant's "
                            "train or validation split")
                report = MetricsReport.compute(test_w.targets.ravel(), forecasts.ravel())
                rows.append({
                    "protocol": cfg.protocol, "model": model, "plant": case.label,
                    "horizon": case.horizon, "seed": seed,
                    "fraction": "" if case.fraction is None else f"{case.fraction:.2f}",
                    "mse": report.mse, "mae": report.mae, "r2_raw": report.r2_raw,
                    "r2_reported": report.r2_reported, "smape": report.smape,
                })
                _write_trace(trace_dir / _trace_name(cfg.protocol, model, case.label,
                                                     case.horizon, seed, case.fraction),
                             test_w, forecasts, model)

    report_path = run_dir / "report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([
                row["protocol"], row["model"], row["plant"], row["horizon"],
                row["seed"], row["fraction"], _fmt(row["mse"]), _fmt(row["mae"]),
                _fmt(row["r2_raw"]), _fmt(row["r2_reported"]), _fmt(row["smape"]),
            ])
    say(f"wrote {report_path} ({len(rows)} rows)")
    return report_path


# ---------------------------------------------------------------------------
# aggregation


_LOWER_BETTER = ("mse", "mae", "smape")
_HIGHER_BETTER = ("r2_reported",)
SUMMARY_COLUMNS = ("protocol", "horizon", "fraction", "model", "cells",
                   "mse", "mae", "r2_raw", "r2_reported", "smape",
                   "best", "second")


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != REPORT_COLUMNS:
            raise ConfigError(f"{path}: unexpected report header {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: report has no data rows")
    return rows


def summarize(report_path, out_path=None) -> list[dict]:
    """Group rows by (protocol, horizon, fraction, model), average over
    plants and seeds, and flag the best and second-best model per metric."""
    rows = read_report(report_path)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["protocol"], int(row["horizon"]), row["fraction"], row["model"])
        groups.setdefault(key, []).append(row)
    summary = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3])):
        members = groups[key]
        entry = {"protocol": key[0], "horizon": key[1], "fraction": key[2],
                 "model": key[3], "cells": len(members)}
        for metric in ("mse", "mae", "r2_raw", "r2_reported", "smape"):
            entry[metric] = float(np.mean([float(m[metric]) for m in members]))
        entry["best"] = []
        entry["second"] = []
        summary.append(entry)

    by_cell: dict[tuple, list[dict]] = {}
    for entry in summary:
        by_cell.setdefault((entry["protocol"], entry["horizon"], entry["fraction"]),
                           []).append(entry)
    for entries in by_cell.values():
        if len(entries) < 2:
            continue
        for metric in _LOWER_BETTER + _HIGHER_BETTER:
            reverse = metric in _HIGHER_BETTER
            ranked = sorted(entries, key=lambda e: e[metric], reverse=reverse)
            ranked[0]["best"].append(metric)
            if len(ranked) > 1:
                ranked[1]["second"].append(metric)

    for entry in summary:
        entry["best"] = ";".join(entry["best"])
        entry["second"] = ";".join(entry["second"])

    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SUMMARY_COLUMNS)
            for entry in summary:
                writer.writerow([
                    entry["protocol"], entry["horizon"], entry["fraction"],
                    entry["model"], entry["cells"], _fmt(entry["mse"]),
                    _fmt(entry["mae"]), _fmt(entry["r2_raw"]),
                    _fmt(entry["r2_reported"]), _fmt(entry["smape"]),
                    entry["best"], entry["second"],
                ])
    return summary

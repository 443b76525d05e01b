"""Batch experiment driver: data generation, training, evaluation, kernel
spectra, ablation grids, and capacity bound tables.

Configs are strict JSON: unknown keys anywhere are fatal, so a saved config
says exactly what ran.  Every command is deterministic given the config and
seeds, and all CSV artifacts are byte-identical across reruns.  Exit codes:
0 success, 1 config or input error, 2 numerical divergence.

--seed replaces the model and train seeds (data seeds stay config-bound so a
seed sweep varies the run, not the signal).  --out overrides the config's
output directory; a relative output directory is placed under $DYNINR_OUT
when that is set.  Artifact image formats and CSV layouts are owned by the
metrics and training modules; this file only arranges calls.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, fields
from multiprocessing import Pool

import numpy as np

from . import __version__
from .analysis import (
    BOUND_VARIANTS,
    BoundInputs,
    ntk_report,
    ntk_reports_to_csv,
    rademacher_bound,
)
from .autodiff import ShapeError, Tensor
from .csvio import write_csv
from .data import (
    Component,
    DataFormatError,
    GridSignal,
    SignalDataset,
    SynthSpec,
    add_noise,
    dataset_to_csv,
    grid_to_dataset,
    load_raw_grid,
    save_raw_grid,
    subsample,
    synth_signal,
)
from .metrics import error_map, power_spectrum_2d, radial_to_csv, write_pgm16, write_spectrum_pgm
from .models import (
    CheckpointError,
    DivergedTrajectoryError,
    ModeError,
    ModelConfigError,
    ModelSpec,
    dynamical_forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    static_forward,
)
from .training import (
    TrainConfig,
    TrainConfigError,
    TrainDivergedError,
    evaluate,
    history_to_csv,
    train,
)

OUTPUT_ROOT_ENV = "DYNINR_OUT"
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2

ANALYSIS_DEFAULTS = {"probe_count": 128, "probe_seed": 0, "top_k": 16}


class ConfigError(ValueError):
    """Raised for malformed experiment configs."""


# ---------------------------------------------------------------------------
# config parsing

def _check_keys(section: str, doc: dict, allowed, required=()):
    if not isinstance(doc, dict):
        raise ConfigError(f"{section}: expected an object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    missing = sorted(set(required) - set(doc))
    if missing:
        raise ConfigError(f"{section}: missing keys {missing}")


@dataclass
class ExperimentConfig:
    """Parsed experiment document plus path context for resolving artifacts."""

    raw: dict
    base_dir: str
    out_dir: str

    def sha256(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def section(self, name: str, required: bool) -> dict:
        if name not in self.raw:
            if required:
                raise ConfigError(f"config needs a {name!r} section")
            return {}
        return self.raw[name]

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def out(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


def load_config(path: str, seed_override: int | None, out_override: str | None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})")
    _check_keys("config", raw,
                ("data", "model", "train", "analysis", "ablation", "output_dir"))
    if seed_override is not None:
        for sec in ("model", "train"):
            if sec in raw:
                raw[sec] = dict(raw[sec], seed=seed_override)
    out = out_override if out_override is not None else raw.get("output_dir", ".")
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return ExperimentConfig(raw, os.path.dirname(os.path.abspath(path)), out)


def parse_data(cfg: ExperimentConfig) -> GridSignal:
    doc = cfg.section("data", required=True)
    if "grid" in doc or "header" in doc:
        _check_keys("data", doc, ("grid", "header"), required=("grid", "header"))
        return load_raw_grid(cfg.path(doc["grid"]), cfg.path(doc["header"]))
    _check_keys("data", doc, ("kind", "dims", "components", "seed", "dtype"),
                required=("kind", "dims", "components"))
    comps = []
    for i, c in enumerate(doc["components"]):
        _check_keys(f"data.components[{i}]", c, ("freq", "amp", "phase"),
                    required=("freq", "amp"))
        comps.append(Component(tuple(float(f) for f in c["freq"]),
                               float(c["amp"]), float(c.get("phase", 0.0))))
    spec = SynthSpec(doc["kind"], tuple(comps), seed=int(doc.get("seed", 0)))
    dims = tuple(int(d) for d in doc["dims"])
    return synth_signal(spec, dims)


def parse_model(cfg: ExperimentConfig) -> ModelSpec:
    doc = cfg.section("model", required=True)
    names = [f.name for f in fields(ModelSpec)]
    _check_keys("model", doc, names,
                required=("backbone", "mode", "in_dim", "embed_dim", "out_dim"))
    return ModelSpec(**doc)


def parse_train(cfg: ExperimentConfig) -> TrainConfig:
    doc = cfg.section("train", required=True)
    names = [f.name for f in fields(TrainConfig)]
    _check_keys("train", doc, names, required=("epochs", "batch_size"))
    return TrainConfig(**doc)


def parse_analysis(cfg: ExperimentConfig) -> dict:
    doc = cfg.section("analysis", required=False)
    _check_keys("analysis", doc, ANALYSIS_DEFAULTS)
    merged = dict(ANALYSIS_DEFAULTS)
    merged.update({k: int(v) for k, v in doc.items()})
    return merged


def parse_ablation(cfg: ExperimentConfig, default_seed: int) -> dict:
    doc = cfg.section("ablation", required=True)
    _check_keys("ablation", doc, ("noise_levels", "keep_fractions", "seeds"),
                required=("noise_levels", "keep_fractions"))
    noise = [float(v) for v in doc["noise_levels"]]
    keep = [float(v) for v in doc["keep_fractions"]]
    seeds = [int(s) for s in doc.get("seeds", [default_seed])]
    if not noise or not keep or not seeds:
        raise ConfigError("ablation: noise_levels, keep_fractions, seeds must be nonempty")
    return {"noise_levels": noise, "keep_fractions": keep, "seeds": seeds}


def _data_seed(cfg: ExperimentConfig) -> int:
    doc = cfg.section("data", required=True)
    return int(doc.get("seed", 0))


def _predict(model, coords: np.ndarray) -> np.ndarray:
    if model.spec.mode == "static":
        return static_forward(model, coords)
    return dynamical_forward(model, coords)[0]


def _write_manifest(cfg: ExperimentConfig, command: str, seeds: dict,
                    artifacts: dict, metrics: dict, wall: float) -> str:
    path = cfg.out("run_manifest.json")
    doc = {
        "version": __version__,
        "command": command,
        "config_sha256": cfg.sha256(),
        "seeds": seeds,
        "artifacts": artifacts,
        "metrics": metrics,
        "wall_seconds": wall,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg: ExperimentConfig) -> int:
    signal = parse_data(cfg)
    dtype = cfg.section("data", required=True).get("dtype", "f4")
    os.makedirs(cfg.out_dir, exist_ok=True)
    grid_path, header_path = cfg.out("grid.raw"), cfg.out("grid.json")
    save_raw_grid(signal, grid_path, header_path, dtype=dtype)
    csv_path = cfg.out("dataset.csv")
    dataset_to_csv(grid_to_dataset(signal), csv_path)
    print(f"wrote {grid_path} {header_path} {csv_path}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig) -> int:
    signal = parse_data(cfg)
    data = grid_to_dataset(signal)
    spec = parse_model(cfg)
    tcfg = parse_train(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    hist_path = cfg.out("history.csv")

    t0 = time.perf_counter()
    try:
        model, history = train(init_model(spec), data, tcfg)
    except TrainDivergedError as e:
        history_to_csv(e.history, hist_path)
        print(f"diverged: {e}; partial history in {hist_path}", file=sys.stderr)
        return EXIT_DIVERGED
    wall = time.perf_counter() - t0

    ckpt_path = cfg.out("model.ckpt")
    save_checkpoint(model, ckpt_path)
    history_to_csv(history, hist_path)
    rec = evaluate(model, data)
    manifest = _write_manifest(
        cfg, "train",
        seeds={"model": spec.seed, "train": tcfg.seed, "data": _data_seed(cfg)},
        artifacts={"checkpoint": ckpt_path, "history": hist_path},
        metrics={"data_loss": rec.mse, "psnr_db": rec.psnr_db, "ssim": rec.ssim},
        wall=wall)
    print(f"trained {tcfg.epochs} epochs: data loss {rec.mse:.6e}")
    print(f"wrote {ckpt_path} {hist_path} {manifest}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, checkpoints: list) -> int:
    signal = parse_data(cfg)
    data = grid_to_dataset(signal)
    coords = data.coords.asarray()
    models = [load_checkpoint(p) for p in checkpoints]
    for p, m in zip(checkpoints, models):
        if m.spec.in_dim != len(signal.dims) or m.spec.out_dim != 1:
            raise ConfigError(
                f"{p}: model expects in_dim={m.spec.in_dim}, out_dim={m.spec.out_dim}; "
                f"data is a {len(signal.dims)}-axis scalar grid")
    os.makedirs(cfg.out_dir, exist_ok=True)

    lo, hi = signal.value_range
    preds = [_predict(m, coords)[:, 0].reshape(signal.dims) for m in models]
    grids = [GridSignal(signal.dims, p,
                        (min(lo, float(p.min())), max(hi, float(p.max()))),
                        provenance="reconstruction") for p in preds]
    pairs = [(g, signal) for g in grids]

    rows = []
    for i, (p, m, g) in enumerate(zip(checkpoints, models, grids)):
        rec = evaluate(m, data)
        rows.append([i, p, rec.mse, rec.psnr_db,
                     "" if rec.ssim is None else rec.ssim])
        write_pgm16(cfg.out(f"recon_{i}.pgm"), g.array())
        # all error maps share the scale of the worst error in the group
        em = error_map(g, signal, norm_group=[pr for j, pr in enumerate(pairs) if j != i])
        write_pgm16(cfg.out(f"errmap_{i}.pgm"), em.array(), lo=0.0, hi=1.0)
        if len(signal.dims) == 2:
            spectrum = power_spectrum_2d(g)
            write_spectrum_pgm(cfg.out(f"spectrum_{i}.pgm"), spectrum)
            radial_to_csv(cfg.out(f"radial_{i}.csv"), spectrum)
        print(f"checkpoint {i}: mse {rec.mse:.6e} psnr {rec.psnr_db:.3f} dB")
    metrics_path = cfg.out("metrics.csv")
    write_csv(metrics_path, ("index", "checkpoint", "mse", "psnr_db", "ssim"), rows)
    print(f"wrote {metrics_path}")
    return EXIT_OK


def cmd_ntk(cfg: ExperimentConfig, checkpoints: list) -> int:
    opts = parse_analysis(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    reports = []
    for i, p in enumerate(checkpoints):
        model = load_checkpoint(p)
        rep = ntk_report(model, seed=opts["probe_seed"],
                         count=opts["probe_count"], top_k=opts["top_k"])
        reports.append((i, rep))
        print(f"row {i} ({p}): effective rank {rep.effective_rank:.3f}")
    path = cfg.out("ntk.csv")
    ntk_reports_to_csv(path, reports, top_k=opts["top_k"])
    print(f"wrote {path}")
    return EXIT_OK


def _ablate_cell(task):
    """One training cell; self-contained so a worker process can run it."""
    (idx, seed, mode, ke_weight, noise_level, keep_fraction,
     spec_kw, tcfg_kw, coords, targets, value_range, grid_dims) = task
    clean = SignalDataset(Tensor(coords), Tensor(targets),
                          grid_dims=grid_dims, value_range=value_range)
    work = add_noise(clean, noise_level, seed)
    train_set, holdout = subsample(work, keep_fraction, seed)
    spec = ModelSpec(**dict(spec_kw, mode=mode, seed=seed))
    tcfg = TrainConfig(**dict(tcfg_kw, ke_weight=ke_weight, seed=seed))
    try:
        model, _ = train(init_model(spec), train_set, tcfg)
    except TrainDivergedError:
        return idx, "", "diverged"
    if keep_fraction < 1.0:
        return idx, evaluate(model, holdout).mse, "holdout"
    # full-keep cells score the reconstruction against the clean signal
    return idx, evaluate(model, clean).mse, "train_only"


def cmd_ablate(cfg: ExperimentConfig, jobs: int) -> int:
    signal = parse_data(cfg)
    clean = grid_to_dataset(signal)
    spec = parse_model(cfg)
    tcfg = parse_train(cfg)
    grid = parse_ablation(cfg, tcfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)

    spec_kw = {f.name: getattr(spec, f.name) for f in fields(ModelSpec)}
    tcfg_kw = {f.name: getattr(tcfg, f.name) for f in fields(TrainConfig)}
    coords, targets = clean.coords.asarray(), clean.targets.asarray()
    cells = []
    for seed in grid["seeds"]:
        for mode in ("static", "dynamical"):
            for ke_weight in (0.0, 1.0):
                for noise_level in grid["noise_levels"]:
                    for keep_fraction in grid["keep_fractions"]:
                        cells.append((len(cells), seed, mode, ke_weight,
                                      noise_level, keep_fraction,
                                      spec_kw, tcfg_kw, coords, targets,
                                      clean.value_range, clean.grid_dims))

    t0 = time.perf_counter()
    if jobs > 1:
        with Pool(jobs) as pool:
            results = pool.map(_ablate_cell, cells)
    else:
        results = [_ablate_cell(c) for c in cells]
    wall = time.perf_counter() - t0

    by_idx = dict((idx, (m, status)) for idx, m, status in results)
    rows = []
    for c in cells:
        m, status = by_idx[c[0]]
        rows.append([c[1], c[2], c[3], c[4], c[5], m, status])
    path = cfg.out("ablation.csv")
    write_csv(path, ("seed", "mode", "ke_weight", "noise_level",
                     "keep_fraction", "mse", "status"), rows)
    diverged = sum(1 for _, _, s in results if s == "diverged")
    manifest = _write_manifest(
        cfg, "ablate",
        seeds={"cells": grid["seeds"], "data": _data_seed(cfg)},
        artifacts={"ablation": path},
        metrics={"cells": len(cells), "diverged": diverged},
        wall=wall)
    print(f"wrote {path} ({len(cells)} cells, {diverged} diverged) and {manifest}")
    return EXIT_OK


def cmd_bounds(path: str) -> int:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})")
    names = [f.name for f in fields(BoundInputs)]
    _check_keys("bounds", doc, names)
    inputs = BoundInputs(**doc)
    values = {}
    for variant in BOUND_VARIANTS:
        values[variant] = rademacher_bound(inputs, variant)
        print(f"{variant:>16}  {values[variant]:.12g}")
    order = ">=" if values["dinr"] >= values["inr"] else "<"
    print(f"ordering: dinr {order} inr")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    # usage errors are config errors (exit 1), never the divergence code
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dyninr",
                     description="train and analyze coordinate networks with "
                                 "latent flows, from JSON experiment configs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None,
                       help="override model and train seeds")
        p.add_argument("--out", default=None, help="output directory")

    common(sub.add_parser("gen-data", help="synthesize a grid signal to files"))
    common(sub.add_parser("train", help="train one model per the config"))
    p_eval = sub.add_parser("eval", help="metrics, reconstruction, error map, spectrum")
    common(p_eval)
    p_eval.add_argument("--checkpoint", action="append", required=True,
                        help="checkpoint to evaluate (repeatable)")
    p_ntk = sub.add_parser("ntk", help="kernel spectrum rows per checkpoint")
    common(p_ntk)
    p_ntk.add_argument("--checkpoint", action="append", required=True,
                       help="checkpoint to analyze (repeatable)")
    p_ab = sub.add_parser("ablate", help="noise/scarcity/energy-weight grid")
    common(p_ab)
    p_ab.add_argument("--jobs", type=int, default=1, help="parallel cell workers")
    p_b = sub.add_parser("bounds", help="capacity bound table from a constants file")
    p_b.add_argument("--config", required=True, help="constants file (JSON)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bounds":
            return cmd_bounds(args.config)
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ntk":
            return cmd_ntk(cfg, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.jobs)
        raise ConfigError(f"unknown command {args.command!r}")
    except (TrainDivergedError, DivergedTrajectoryError) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataFormatError, ModelConfigError, TrainConfigError,
            CheckpointError, ModeError, ShapeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())

"""Command line interface: synth, train, eval, ablate.

Owns the on-disk formats: JSON run configs (flag > config file > default
precedence), checkpoints (JSON header with per-tensor byte offsets followed
by little-endian float64 data), run manifests with content hashes, and the
ablation comparison table.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import struct
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import IdentityTransform, RevInTransform
from .data import (
    SeriesDataset,
    SyntheticConfig,
    ZScoreStats,
    generate_synthetic,
    load_csv,
    make_windows,
    save_csv,
    split_windows,
    write_manifest,
    zscore_fit_apply,
)
from .errors import ConfigError
from .evaluation import dump_forecast_trace, evaluate
from .flow import FlowStack
from .forecasters import ForecasterConfig, build_forecaster
from .pipeline import ForecastPipeline
from .training import TrainConfig, train

VARIANTS = ("inflow", "inflow_t", "inflow_j", "realnvp", "realnvp_c", "revin", "none")

_FLOW_VARIANTS = {
    "inflow": "pre_norm",
    "inflow_j": "pre_norm",
    "inflow_t": "post_norm",
    "realnvp": "batch_norm",
    "realnvp_c": "coupling_only",
}

_FORCED_MODES = {"inflow_j": "joint", "none": "backbone_only"}
_DEFAULT_MODES = {"revin": "joint"}


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DatasetSection:
    preset: str | None = None
    tau: int | None = None
    total_length: int = 10000
    num_series: int = 5
    seed: int = 0
    csv_path: str | None = None
    columns: list[str] | None = None
    split_ratio: tuple[int, int, int] = (6, 2, 2)
    zscore: bool = True


@dataclass
class ModelSection:
    variant: str = "inflow"
    num_blocks: int = 2
    flow_hidden: int = 128
    backbone: str = "mlp"
    lookback: int = 48
    horizon: int = 48
    hidden_width: int = 256
    depth: int | None = None  # per-backbone default when omitted
    nbeats_blocks: int = 3


@dataclass
class TrainSection:
    inner_lr: float = 1e-3
    outer_lr: float = 1e-4
    batch_size: int = 1024
    patience: int = 5
    max_epochs: int = 100
    mode: str = "auto"
    clip_norm: float = 5.0


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    out_dir: str = "runs"
    seeds: list[int] = field(default_factory=lambda: [0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"]["split_ratio"] = list(self.dataset.split_ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        for section_name, section in (("dataset", cfg.dataset), ("model", cfg.model),
                                      ("train", cfg.train)):
            for k, v in d.get(section_name, {}).items():
                if not hasattr(section, k):
                    raise ConfigError(f"unknown key {section_name}.{k}")
                setattr(section, k, v)
        cfg.dataset.split_ratio = tuple(cfg.dataset.split_ratio)
        if "out_dir" in d:
            cfg.out_dir = d["out_dir"]
        if "seeds" in d:
            cfg.seeds = list(d["seeds"])
        return cfg

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> None:
        if self.model.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.model.variant!r}; choose from {VARIANTS}"
            )
        resolve_mode(self.model.variant, self.train.mode)
        if not self.seeds:
            raise ConfigError("at least one seed is required")


def resolve_mode(variant: str, requested: str) -> str:
    """Map a variant plus a requested mode to a concrete training mode."""
    if variant in _FORCED_MODES:
        forced = _FORCED_MODES[variant]
        if requested not in ("auto", forced):
            raise ConfigError(
                f"variant {variant!r} requires mode {forced!r}, got {requested!r}"
            )
        return forced
    if requested == "auto":
        return _DEFAULT_MODES.get(variant, "bilevel")
    return requested


def load_config(path: str | Path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# checkpoint format


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float64 tensors: u64 header length, JSON header, raw data."""
    header = {}
    offset = 0
    blobs = []
    for name in sorted(arrays):  # canonical layout: same tensors, same bytes
        data = np.asarray(arrays[name], dtype="<f8")
        header[name] = {"offset": offset, "shape": list(data.shape)}
        blobs.append(data.tobytes())  # tobytes always emits C order
        offset += len(blobs[-1])
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ConfigError(f"{path}: not a checkpoint file")
    header_len = struct.unpack("<Q", raw[:8])[0]
    header = json.loads(raw[8:8 + header_len].decode())
    payload = raw[8 + header_len:]
    out = {}
    for name, meta in header.items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        out[name] = arr.reshape(shape).astype(np.float64)
    return out


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# pipeline assembly


def build_transform(model: ModelSection, num_variates: int, seed: int):
    variant = model.variant
    if variant == "none":
        return IdentityTransform()
    if variant == "revin":
        return RevInTransform(num_variates)
    return FlowStack(
        num_variates,
        num_blocks=model.num_blocks,
        variant=_FLOW_VARIANTS[variant],
        hidden=model.flow_hidden,
        rng=np.random.default_rng([seed, 10]),
    )


def build_pipeline(model: ModelSection, num_variates: int, seed: int) -> ForecastPipeline:
    transform = build_transform(model, num_variates, seed)
    fc = ForecasterConfig(
        kind=model.backbone,
        lookback=model.lookback,
        horizon=model.horizon,
        num_variates=num_variates,
        hidden_width=model.hidden_width,
        depth=model.depth,
        num_blocks=model.nbeats_blocks,
    )
    forecaster = build_forecaster(fc, rng=np.random.default_rng([seed, 11]))
    return ForecastPipeline(transform, forecaster)


def build_dataset(section: DatasetSection) -> SeriesDataset:
    if section.csv_path is not None:
        return load_csv(section.csv_path, columns=section.columns,
                        split_ratio=tuple(section.split_ratio))
    if section.preset is not None:
        cfg = SyntheticConfig.preset(
            section.preset, seed=section.seed,
            total_length=section.total_length, num_series=section.num_series,
        )
    elif section.tau is not None:
        cfg = SyntheticConfig(tau=section.tau, seed=section.seed,
                              total_length=section.total_length,
                              num_series=section.num_series)
    else:
        raise ConfigError("dataset section needs a preset, a tau, or a csv_path")
    return generate_synthetic(cfg)


def prepare_windows(cfg: RunConfig):
    """Dataset -> optional z-score -> windows. Shared by every command."""
    ds = build_dataset(cfg.dataset)
    stats: ZScoreStats | None = None
    if cfg.dataset.zscore:
        ds, stats = zscore_fit_apply(ds)
    windows = make_windows(ds, cfg.model.lookback, cfg.model.horizon, use_bilevel=True)
    return ds, windows, stats


def anchor_hash(windows) -> str:
    blob = json.dumps([[w.anchor, w.split] for w in windows]).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(cfg.dataset)
    save_csv(ds, out / "series.csv")
    write_manifest(ds, out / "dataset_manifest.json")
    print(f"wrote {out / 'series.csv'} ({ds.num_steps} steps, {ds.num_variates} variates)")
    return out


def _train_one_seed(cfg: RunConfig, windows, stats, seed: int, num_variates: int,
                    out: Path) -> dict:
    mode = resolve_mode(cfg.model.variant, cfg.train.mode)
    train_cfg = TrainConfig(
        inner_lr=cfg.train.inner_lr,
        outer_lr=cfg.train.outer_lr,
        batch_size=cfg.train.batch_size,
        patience=cfg.train.patience,
        max_epochs=cfg.train.max_epochs,
        seed=seed,
        mode=mode,
        clip_norm=cfg.train.clip_norm,
    )
    pipeline = build_pipeline(cfg.model, num_variates, seed)
    pipeline, report = train(pipeline, windows, train_cfg, zscore_stats=stats)
    ckpt_path = out / f"checkpoint_seed{seed}.bin"
    save_checkpoint(ckpt_path, {k: t.data for k, t in pipeline.state_tensors().items()})
    (out / f"report_seed{seed}.json").write_text(report.to_json(), encoding="utf-8")
    report.write_loss_csv(out / f"loss_seed{seed}.csv")
    test_report = evaluate(pipeline, split_windows(windows)["test"], stats,
                           batch_size=cfg.train.batch_size)
    return {
        "seed": seed,
        "checkpoint": ckpt_path.name,
        "best_val_loss": report.best_val_loss,
        "test_mse": test_report.mse,
        "test_mae": test_report.mae,
    }


def cmd_train(cfg: RunConfig, out_dir: str | Path | None = None) -> Path:
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    ds, windows, stats = prepare_windows(cfg)
    results = []
    for seed in cfg.seeds:
        results.append(_train_one_seed(cfg, windows, stats, seed, ds.num_variates, out))
        print(f"seed {seed}: best_val={results[-1]['best_val_loss']:.6g} "
              f"test_mse={results[-1]['test_mse']:.6g}")
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_hash": cfg.hash(),
        "anchor_hash": anchor_hash(windows),
        "seeds": cfg.seeds,
        "results": results,
        "files": {name: file_sha256(out / name) for name in files},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out


def cmd_eval(cfg: RunConfig, checkpoint: str | Path, out_dir: str | Path | None = None,
             trace_windows: list[int] | None = None) -> Path:
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, windows, stats = prepare_windows(cfg)
    seed = cfg.seeds[0]
    pipeline = build_pipeline(cfg.model, ds.num_variates, seed)
    pipeline.load_state(load_checkpoint(checkpoint))
    pipeline.eval_mode()
    groups = split_windows(windows)
    test_report = evaluate(pipeline, groups["test"], stats, batch_size=cfg.train.batch_size)
    val_report = evaluate(pipeline, groups["val"], stats, batch_size=cfg.train.batch_size)
    payload = test_report.to_dict()
    payload["val_mse"] = val_report.mse
    payload["val_mae"] = val_report.mae
    payload["checkpoint"] = str(checkpoint)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    for idx in trace_windows or []:
        if not 0 <= idx < len(groups["test"]):
            raise ConfigError(f"trace window {idx} out of range "
                              f"(test split has {len(groups['test'])} windows)")
        trace = dump_forecast_trace(pipeline, groups["test"][idx], stats)
        trace.write_csv(out / f"trace_{idx}.csv")
    print(f"test_mse={test_report.mse:.6g} test_mae={test_report.mae:.6g} "
          f"-> {metrics_path}")
    return out


def _ablate_variant(cfg_dict: dict, variant: str, out_root: str) -> dict:
    """Run one roster entry across all seeds; used by the process pool."""
    cfg = RunConfig.from_dict(cfg_dict)
    cfg.model.variant = variant
    cfg.train.mode = "auto"
    out = Path(out_root) / variant
    try:
        cmd_train(cfg, out_dir=out)
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        per_seed = [(r["seed"], r["test_mse"], r["test_mae"]) for r in manifest["results"]]
        return {"variant": variant, "status": "ok", "per_seed": per_seed,
                "anchor_hash": manifest["anchor_hash"]}
    except Exception as e:  # keep the remaining variants running
        return {"variant": variant, "status": "failed", "error": f"{type(e).__name__}: {e}"}


def cmd_ablate(cfg: RunConfig, out_dir: str | Path | None = None) -> Path:
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    cfg_dict = cfg.to_dict()
    threads = int(os.environ.get("INFLOW_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_ablate_variant, cfg_dict, v, str(out)) for v in VARIANTS]
            results = [f.result() for f in futures]
    else:
        results = [_ablate_variant(cfg_dict, v, str(out)) for v in VARIANTS]

    hashes = {r["anchor_hash"] for r in results if r["status"] == "ok"}
    if len(hashes) > 1:
        raise ConfigError("variants saw different window sets; ablation is not comparable")

    table = []
    for r in results:
        row = {"variant": r["variant"], "status": r["status"]}
        if r["status"] == "ok":
            mses = np.array([m for _, m, _ in r["per_seed"]])
            maes = np.array([a for _, _, a in r["per_seed"]])
            row.update({
                "mse_mean": float(mses.mean()), "mse_std": float(mses.std()),
                "mae_mean": float(maes.mean()), "mae_std": float(maes.std()),
                "per_seed": [[s, m, a] for s, m, a in r["per_seed"]],
            })
        else:
            row["error"] = r["error"]
        table.append(row)
    (out / "ablation.json").write_text(
        json.dumps({"anchor_hash": hashes.pop() if hashes else None, "table": table},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,status,mse_mean,mse_std,mae_mean,mae_std\n")
        for row in table:
            if row["status"] == "ok":
                fh.write(f"{row['variant']},ok,{row['mse_mean']!r},{row['mse_std']!r},"
                         f"{row['mae_mean']!r},{row['mae_std']!r}\n")
            else:
                fh.write(f"{row['variant']},failed,,,,\n")
    for row in table:
        if row["status"] == "ok":
            print(f"{row['variant']:10s} mse={row['mse_mean']:.6g}±{row['mse_std']:.3g} "
                  f"mae={row['mae_mean']:.6g}±{row['mae_std']:.3g}")
        else:
            print(f"{row['variant']:10s} FAILED: {row['error']}")
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--seed", type=int, action="append", default=None,
                   help="training seed (repeatable)")
    p.add_argument("--preset", type=str, default=None,
                   choices=sorted(["synthetic-1", "synthetic-2", "synthetic-3"]))
    p.add_argument("--variant", type=str, default=None, choices=VARIANTS)
    p.add_argument("--backbone", type=str, default=None,
                   choices=["linear", "mlp", "nbeats_lite"])
    p.add_argument("--lookback", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.preset is not None:
        cfg.dataset.preset = args.preset
    if args.variant is not None:
        cfg.model.variant = args.variant
    if args.backbone is not None:
        cfg.model.backbone = args.backbone
    if args.lookback is not None:
        cfg.model.lookback = args.lookback
    if args.horizon is not None:
        cfg.model.horizon = args.horizon
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="inflow",
        description="Train and evaluate invertible-transform forecasting pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (
        ("synth", "generate a synthetic shifted dataset"),
        ("train", "train a pipeline per seed and save checkpoints"),
        ("eval", "evaluate a saved checkpoint"),
        ("ablate", "run the full variant roster and tabulate results"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_shared_flags(p)
        if name == "eval":
            p.add_argument("--checkpoint", type=str, required=True)
            p.add_argument("--trace", type=int, action="append", default=None,
                           help="test-window index to dump a stage trace for (repeatable)")

    args = parser.parse_args(argv)
    cfg = _config_from_args(args)
    try:
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, trace_windows=args.trace)
        elif args.command == "ablate":
            cmd_ablate(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

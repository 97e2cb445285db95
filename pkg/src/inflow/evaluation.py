"""Forecast quality metrics, multi-seed aggregation, and stage traces."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .data import WindowPair, ZScoreStats
from .errors import ContractError
from .pipeline import ForecastPipeline


@dataclass
class MetricReport:
    """MSE/MAE for one configuration, optionally aggregated over seeds.

    `mse`/`mae` hold raw original-scale values; `scale_factors` only affect
    the numbers shown in `to_dict`, never the stored ones.
    """

    mse: float
    mae: float
    num_windows: int
    scale_factors: tuple[float, float] | None = None
    per_seed: list[tuple[int, float, float]] = field(default_factory=list)
    mse_mean: float | None = None
    mse_std: float | None = None
    mae_mean: float | None = None
    mae_std: float | None = None

    def scaled(self) -> tuple[float, float]:
        if self.scale_factors is None:
            return self.mse, self.mae
        return self.mse * self.scale_factors[0], self.mae * self.scale_factors[1]

    def to_dict(self) -> dict:
        mse_r, mae_r = self.scaled()
        out = {
            "mse": self.mse,
            "mae": self.mae,
            "reported_mse": mse_r,
            "reported_mae": mae_r,
            "num_windows": self.num_windows,
        }
        if self.scale_factors is not None:
            out["scale_factors"] = list(self.scale_factors)
        if self.per_seed:
            out["per_seed"] = [[s, m, a] for s, m, a in self.per_seed]
            out["mse_mean"] = self.mse_mean
            out["mse_std"] = self.mse_std
            out["mae_mean"] = self.mae_mean
            out["mae_std"] = self.mae_std
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _predict_batch(pipeline: ForecastPipeline, windows: list[WindowPair],
                   stats: ZScoreStats | None) -> tuple[np.ndarray, np.ndarray]:
    x = Tensor(np.stack([w.x for w in windows]))
    y_hat = pipeline.predict(x).numpy()
    y = np.stack([w.y for w in windows])
    if stats is not None:
        y_hat = stats.inverse(y_hat)
        y = stats.inverse(y)
    return y_hat, y


def evaluate(pipeline: ForecastPipeline, windows: list[WindowPair],
             zscore_stats: ZScoreStats | None = None, batch_size: int = 1024,
             scale_factors: tuple[float, float] | None = None) -> MetricReport:
    """Original-scale MSE/MAE over every element of the given windows.

    Runs outside any tape, so no gradients are recorded. If the windows were
    cut from a standardized dataset the fitted statistics are required, and
    metrics are computed after undoing the standardization.
    """
    if not windows:
        raise ContractError("evaluate needs at least one window")
    if any(w.zscored for w in windows) and zscore_stats is None:
        raise ContractError(
            "windows come from a z-scored dataset; pass the fitted statistics"
        )
    sq_sum = 0.0
    abs_sum = 0.0
    count = 0
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo:lo + batch_size]
        y_hat, y = _predict_batch(pipeline, chunk, zscore_stats)
        diff = y_hat - y
        sq_sum += float(np.sum(diff * diff))
        abs_sum += float(np.sum(np.abs(diff)))
        count += diff.size
    return MetricReport(
        mse=sq_sum / count,
        mae=abs_sum / count,
        num_windows=len(windows),
        scale_factors=scale_factors,
    )


def aggregate_seeds(per_seed: list[tuple[int, MetricReport]],
                    scale_factors: tuple[float, float] | None = None) -> MetricReport:
    """Combine per-seed reports into mean/std summaries (std 0 for one seed)."""
    if not per_seed:
        raise ContractError("aggregate_seeds needs at least one report")
    rows = [(seed, r.mse, r.mae) for seed, r in per_seed]
    mses = np.array([r[1] for r in rows])
    maes = np.array([r[2] for r in rows])
    base = per_seed[0][1]
    return MetricReport(
        mse=float(mses.mean()),
        mae=float(maes.mean()),
        num_windows=base.num_windows,
        scale_factors=scale_factors,
        per_seed=rows,
        mse_mean=float(mses.mean()),
        mse_std=float(mses.std()),
        mae_mean=float(maes.mean()),
        mae_std=float(maes.std()),
    )


@dataclass
class ForecastTrace:
    """The four stages of one forecast plus the ground truth.

    Lookback rows carry the raw and transformed input; horizon rows carry
    the raw-space forecast, the model-space forecast, and the target.
    """

    x: np.ndarray          # [L, D] raw input
    x_transformed: np.ndarray  # [L, D]
    y_transformed: np.ndarray  # [H, D] forecast before the inverse transform
    y_hat: np.ndarray      # [H, D] final forecast
    y_true: np.ndarray     # [H, D]
    anchor: int

    @property
    def num_steps(self) -> int:
        return self.x.shape[0] + self.y_hat.shape[0]

    def write_csv(self, path) -> None:
        lookback = self.x.shape[0]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step_index,stage,variate,value\n")
            stages = [
                ("input", self.x, 0),
                ("input_transformed", self.x_transformed, 0),
                ("forecast_transformed", self.y_transformed, lookback),
                ("forecast", self.y_hat, lookback),
                ("target", self.y_true, lookback),
            ]
            for stage, arr, offset in stages:
                for step in range(arr.shape[0]):
                    for variate in range(arr.shape[1]):
                        fh.write(
                            f"{offset + step},{stage},{variate},{arr[step, variate]!r}\n"
                        )


def dump_forecast_trace(pipeline: ForecastPipeline, window: WindowPair,
                        zscore_stats: ZScoreStats | None = None) -> ForecastTrace:
    """Run one window through the pipeline and capture every stage."""
    if window.zscored and zscore_stats is None:
        raise ContractError(
            "window comes from a z-scored dataset; pass the fitted statistics"
        )
    x = Tensor(window.x[None, :, :])
    x_t, y_t, y_hat = pipeline.predict_stages(x)
    x_raw, y_raw, y_true = window.x, y_hat.numpy()[0], window.y
    if zscore_stats is not None:
        x_raw = zscore_stats.inverse(x_raw)
        y_raw = zscore_stats.inverse(y_raw)
        y_true = zscore_stats.inverse(y_true)
    return ForecastTrace(
        x=x_raw,
        x_transformed=x_t.numpy()[0],
        y_transformed=y_t.numpy()[0],
        y_hat=y_raw,
        y_true=y_true,
        anchor=window.anchor,
    )

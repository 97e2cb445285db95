"""Backbone models mapping a lookback window to a horizon window.

All backbones take [batch, lookback, variates] and return
[batch, horizon, variates]. Multivariate inputs are handled by folding the
variate axis into the batch, so each variate is processed as an independent
univariate sample by shared weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import MLP, Dense


@dataclass
class ForecasterConfig:
    kind: str = "linear"
    lookback: int = 48
    horizon: int = 48
    num_variates: int = 1
    hidden_width: int = 256
    depth: int | None = None  # trunk layers: mlp defaults to 3, nbeats_lite to 4
    num_blocks: int = 3
    per_variate: bool = True

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1 or self.num_variates < 1:
            raise ConfigError(
                f"lookback, horizon and num_variates must be >= 1, got "
                f"({self.lookback}, {self.horizon}, {self.num_variates})"
            )
        if self.kind not in ("linear", "mlp", "nbeats_lite"):
            raise ConfigError(f"unknown forecaster kind {self.kind!r}")
        if self.depth is None:
            self.depth = 4 if self.kind == "nbeats_lite" else 3
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")


def _check_input(x: Tensor, cfg: ForecasterConfig) -> None:
    expected = (x.shape[0], cfg.lookback, cfg.num_variates)
    if x.ndim != 3 or x.shape != expected:
        raise DimensionError(f"forecaster expects {expected}, got {x.shape}")


def _fold_variates(x: Tensor) -> Tensor:
    """[B, L, D] -> [B*D, L] so variates become independent samples."""
    b, length, d = x.shape
    return ad.reshape(ad.swap_last_axes(x), (b * d, length))


def _unfold_variates(y: Tensor, batch: int, num_variates: int) -> Tensor:
    """[B*D, H] -> [B, H, D], inverse of _fold_variates."""
    h = y.shape[1]
    return ad.swap_last_axes(ad.reshape(y, (batch, num_variates, h)))


class LinearForecaster:
    """Single affine map from lookback to horizon.

    With `per_variate` the same [L, H] map is applied to every variate;
    otherwise one joint [L*D, H*D] map mixes variates.
    """

    def __init__(self, cfg: ForecasterConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        if cfg.per_variate:
            self.head = Dense(cfg.lookback, cfg.horizon, rng=rng)
        else:
            self.head = Dense(cfg.lookback * cfg.num_variates,
                              cfg.horizon * cfg.num_variates, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.cfg)
        b, _, d = x.shape
        if self.cfg.per_variate:
            return _unfold_variates(self.head(_fold_variates(x)), b, d)
        flat = ad.reshape(x, (b, self.cfg.lookback * d))
        return ad.reshape(self.head(flat), (b, self.cfg.horizon, d))

    def parameters(self) -> dict[str, Tensor]:
        return {f"head.{k}": p for k, p in self.head.parameters().items()}


class MLPForecaster:
    """Fully-connected trunk with relu activations and an affine head."""

    def __init__(self, cfg: ForecasterConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        in_size = cfg.lookback if cfg.per_variate else cfg.lookback * cfg.num_variates
        out_size = cfg.horizon if cfg.per_variate else cfg.horizon * cfg.num_variates
        sizes = [in_size] + [cfg.hidden_width] * cfg.depth + [out_size]
        self.net = MLP(sizes, "relu", rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.cfg)
        b, _, d = x.shape
        if self.cfg.per_variate:
            return _unfold_variates(self.net(_fold_variates(x)), b, d)
        flat = ad.reshape(x, (b, self.cfg.lookback * d))
        return ad.reshape(self.net(flat), (b, self.cfg.horizon, d))

    def parameters(self) -> dict[str, Tensor]:
        return {f"net.{k}": p for k, p in self.net.parameters().items()}


class NBeatsLiteBlock:
    """Dense trunk feeding zero-initialized backcast and forecast heads."""

    def __init__(self, lookback: int, horizon: int, width: int, depth: int,
                 rng: np.random.Generator | None = None):
        sizes = [lookback] + [width] * depth
        self.trunk = MLP(sizes, "relu", rng=rng)
        self.backcast_head = Dense(width, lookback, zero_init=True)
        self.forecast_head = Dense(width, horizon, zero_init=True)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = ad.relu(self.trunk(x))
        return self.backcast_head(h), self.forecast_head(h)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"trunk.{k}": p for k, p in self.trunk.parameters().items()}
        out.update({f"backcast.{k}": p for k, p in self.backcast_head.parameters().items()})
        out.update({f"forecast.{k}": p for k, p in self.forecast_head.parameters().items()})
        return out


class NBeatsLite:
    """Doubly-residual stack: each block explains part of the input and adds
    its own forecast; the unexplained residual feeds the next block."""

    def __init__(self, cfg: ForecasterConfig, rng: np.random.Generator | None = None):
        if not cfg.per_variate:
            raise ConfigError("nbeats_lite processes variates independently; "
                              "per_variate must stay enabled")
        self.cfg = cfg
        self.blocks = [
            NBeatsLiteBlock(cfg.lookback, cfg.horizon, cfg.hidden_width, cfg.depth, rng=rng)
            for _ in range(cfg.num_blocks)
        ]

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.cfg)
        b, _, d = x.shape
        residual = _fold_variates(x)
        forecast = Tensor(np.zeros((b * d, self.cfg.horizon)))
        for block in self.blocks:
            backcast, block_forecast = block(residual)
            residual = residual - backcast
            forecast = forecast + block_forecast
        return _unfold_variates(forecast, b, d)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            for k, p in block.parameters().items():
                out[f"blocks.{i}.{k}"] = p
        return out


_KINDS = {"linear": LinearForecaster, "mlp": MLPForecaster, "nbeats_lite": NBeatsLite}


def build_forecaster(cfg: ForecasterConfig, rng: np.random.Generator | None = None):
    return _KINDS[cfg.kind](cfg, rng=rng)

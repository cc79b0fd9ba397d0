"""Reference forecasters: persistence and a decomposition-linear model.

Persistence repeats the last observation.  The decomposition-linear model
splits the window into a moving-average trend and a seasonal remainder and
applies one trainable linear map to each; it trains quickly because whole
batches reduce to two matrix products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .dataio import WindowSet
from .errors import ConfigError, ShapeError


def persistence(x, horizon: int) -> np.ndarray:
    """Repeat the last observed value across the horizon."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ShapeError(f"expected non-empty 1-D window, got shape {x.shape}")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    return np.full(horizon, x[-1], dtype=np.float64)


def persistence_forecasts(windows: WindowSet) -> np.ndarray:
    out = np.empty_like(windows.targets)
    for i in range(len(windows)):
        out[i] = persistence(windows.inputs[i], windows.horizon)
    return out


def decompose(x, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    """Edge-padded moving-average trend and the seasonal remainder.

    seasonal is defined as x - trend, so the two parts always recompose to
    the original window.
    """
    x = np.asarray(x, dtype=np.float64)
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"kernel size must be odd and >= 1, got {kernel}")
    if x.ndim != 1 or x.shape[0] < 1:
        raise ShapeError(f"expected non-empty 1-D window, got shape {x.shape}")
    pad = kernel // 2
    padded = np.pad(x, pad, mode="edge")
    trend = np.convolve(padded, np.full(kernel, 1.0 / kernel), mode="valid")
    return trend, x - trend


@dataclass
class DLinearConfig:
    horizon: int
    input_len: int
    kernel: int = 25  # about two hours at 5-minute resolution
    lr: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.input_len < 1:
            raise ConfigError(f"horizon and input_len must be >= 1, got {(self.horizon, self.input_len)}")
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel}")


class DLinearState:
    """Trend and seasonal linear maps, both starting at zero."""

    def __init__(self, cfg: DLinearConfig):
        self.cfg = cfg
        shape = (cfg.horizon, cfg.input_len)
        self.params = {
            "w_trend": nm.Tensor(np.zeros(shape), requires_grad=True, name="dlinear.w_trend"),
            "w_seasonal": nm.Tensor(np.zeros(shape), requires_grad=True, name="dlinear.w_seasonal"),
        }

    def decompose_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        trends = np.empty_like(inputs)
        seasonals = np.empty_like(inputs)
        for i in range(inputs.shape[0]):
            trends[i], seasonals[i] = decompose(inputs[i], self.cfg.kernel)
        return trends, seasonals


def dlinear_forward(x, state: DLinearState) -> np.ndarray:
    """Forecast one window: W_t trend + W_s seasonal."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.cfg.input_len,):
        raise ShapeError(f"expected window of shape ({state.cfg.input_len},), got {x.shape}")
    trend, seasonal = decompose(x, state.cfg.kernel)
    return (state.params["w_trend"].value @ trend
            + state.params["w_seasonal"].value @ seasonal)


def _batch_loss(state: DLinearState, trends, seasonals, targets) -> nm.Tensor:
    tb = nm.Tensor(trends, requires_grad=False)
    sb = nm.Tensor(seasonals, requires_grad=False)
    pred = nm.add(nm.matmul(tb, nm.transpose(state.params["w_trend"])),
                  nm.matmul(sb, nm.transpose(state.params["w_seasonal"])))
    diff = nm.sub(pred, nm.Tensor(targets, requires_grad=False))
    return nm.mean_all(nm.mul(diff, diff))


def train_dlinear(state: DLinearState, train_windows: WindowSet,
                  val_windows: WindowSet | None = None) -> dict:
    """Minibatch Adam on MSE; windows are decomposed once up front."""
    cfg = state.cfg
    n = len(train_windows)
    if n == 0:
        raise ConfigError("training window set is empty")
    trends, seasonals = state.decompose_batch(train_windows.inputs)
    val_parts = None
    if val_windows is not None and len(val_windows):
        val_parts = state.decompose_batch(val_windows.inputs)
    opt = {name: nm.AdamState(t.value.shape, lr=cfg.lr) for name, t in state.params.items()}
    rng = np.random.default_rng(cfg.seed)
    history = {"train_loss": [], "val_loss": [], "steps": 0}
    best_val = np.inf
    best_snap = None
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo: lo + cfg.batch_size]
            for t in state.params.values():
                t.zero_grad()
            loss = _batch_loss(state, trends[batch], seasonals[batch],
                               train_windows.targets[batch])
            nm.backward(loss)
            for name, t in state.params.items():
                g = t.grad if t.grad is not None else np.zeros_like(t.value)
                nm.adam_step(opt[name], t.value, g)
            epoch_loss += float(loss.value) * batch.size
            history["steps"] += 1
            if cfg.max_steps is not None and history["steps"] >= cfg.max_steps:
                break
        history["train_loss"].append(epoch_loss / n)
        if val_parts is not None:
            vloss = float(_batch_loss(state, val_parts[0], val_parts[1],
                                      val_windows.targets).value)
            history["val_loss"].append(vloss)
            if vloss < best_val - 1e-12:
                best_val = vloss
                best_snap = {k: t.value.copy() for k, t in state.params.items()}
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
        if cfg.max_steps is not None and history["steps"] >= cfg.max_steps:
            break
    if best_snap is not None:
        for name, t in state.params.items():
            t.value = best_snap[name]
    return history


def dlinear_forecasts(state: DLinearState, windows: WindowSet) -> np.ndarray:
    trends, seasonals = state.decompose_batch(windows.inputs)
    return (trends @ state.params["w_trend"].value.T
            + seasonals @ state.params["w_seasonal"].value.T)

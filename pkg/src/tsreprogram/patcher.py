"""Window partitioning into overlapping patches and patch embedding.

A length-L window becomes k = floor((L - m)/s_d) + 1 patches of length m
taken every s_d steps; trailing points that do not fill a patch drop.  Each
patch is mapped to the model dimension by one shared affine layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class PatchConfig:
    m: int = 16       # patch length
    s_d: int = 8      # sliding stride
    d_model: int = 16  # patch embedding dimension

    def __post_init__(self):
        if not 1 <= self.s_d <= self.m:
            raise ConfigError(f"need 1 <= stride <= patch length, got s_d={self.s_d}, m={self.m}")
        if self.d_model < 1:
            raise ConfigError(f"d_model must be >= 1, got {self.d_model}")

    def patch_count(self, input_len: int) -> int:
        if self.m > input_len:
            raise ConfigError(f"patch length {self.m} exceeds window length {input_len}")
        return (input_len - self.m) // self.s_d + 1


@dataclass(frozen=True)
class PatchSet:
    patches: np.ndarray  # (k, m)
    input_len: int

    @property
    def k(self) -> int:
        return self.patches.shape[0]

    @property
    def m(self) -> int:
        return self.patches.shape[1]


@dataclass(frozen=True)
class WindowNormState:
    """Per-window mean/std pair so standardization can be undone exactly."""

    mean: float
    std: float


STD_FLOOR = 1e-8


def partition(x, cfg: PatchConfig) -> PatchSet:
    """Slice a window into k overlapping patches of length m."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected 1-D window, got shape {x.shape}")
    length = x.shape[0]
    k = cfg.patch_count(length)
    patches = np.empty((k, cfg.m), dtype=np.float64)
    for i in range(k):
        lo = i * cfg.s_d
        patches[i] = x[lo: lo + cfg.m]
    return PatchSet(patches, length)


def embed_patches(patches: PatchSet, w_e: nm.Tensor, b_e: nm.Tensor) -> nm.Tensor:
    """Affine map of each patch into the model dimension: E = S W_e^T + b_e.

    Differentiable in the weights so the embedding layer can train.
    """
    if w_e.value.ndim != 2 or w_e.value.shape[1] != patches.m:
        raise ShapeError(f"weight shape {w_e.value.shape} incompatible with patch length {patches.m}")
    if b_e.value.shape != (w_e.value.shape[0],):
        raise ShapeError(f"bias shape {b_e.value.shape} incompatible with weight rows {w_e.value.shape[0]}")
    s = nm.Tensor(patches.patches, requires_grad=False, name="patches")
    return nm.add(nm.matmul(s, nm.transpose(w_e)), b_e)


def window_standardize(x) -> tuple[np.ndarray, WindowNormState]:
    """x' = (x - mean) / max(std, floor); reversible per window."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ShapeError(f"expected 1-D window of length >= 2, got shape {x.shape}")
    mean = float(x.mean())
    std = float(x.std())
    denom = max(std, STD_FLOOR)
    return (x - mean) / denom, WindowNormState(mean=mean, std=denom)


def window_destandardize(x, state: WindowNormState) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * state.std + state.mean

"""Forecast head: flatten the last k backbone outputs, apply one affine map.

Only patch-position outputs feed the forecast; prompt-token outputs are
dropped so the head size stays independent of prompt text length.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ShapeError

INIT_STD = 0.02


class ProjectionHead:
    """Trainable map from k patch outputs (k x d_llm) to an H_out forecast."""

    def __init__(self, k: int, d_llm: int, horizon: int, seed: int = 0):
        if k < 1 or d_llm < 1 or horizon < 1:
            raise ConfigError(f"k, d_llm, horizon must be >= 1, got {(k, d_llm, horizon)}")
        self.k = k
        self.d_llm = d_llm
        self.horizon = horizon
        rng = np.random.default_rng(seed)
        self.params = {
            "w_p": nm.Tensor(rng.normal(0.0, INIT_STD, size=(horizon, k * d_llm)),
                             requires_grad=True, name="project.w_p"),
            "b_p": nm.Tensor(np.zeros(horizon), requires_grad=True, name="project.b_p"),
        }

    @property
    def param_count(self) -> int:
        return self.horizon * self.k * self.d_llm + self.horizon


def project(output: nm.Tensor, head: ProjectionHead) -> nm.Tensor:
    """Last k rows of the backbone output -> flatten -> affine -> forecast."""
    n, width = output.value.shape
    if width != head.d_llm:
        raise ShapeError(f"output width {width} != head d_llm {head.d_llm}")
    if n < head.k:
        raise ShapeError(f"output has {n} rows, fewer than patch count {head.k}")
    rows = nm.slice_rows(output, n - head.k, n)
    flat = nm.reshape(rows, (1, head.k * head.d_llm))
    fc = nm.add(nm.matmul(flat, nm.transpose(head.params["w_p"])), head.params["b_p"])
    return nm.reshape(fc, (head.horizon,))

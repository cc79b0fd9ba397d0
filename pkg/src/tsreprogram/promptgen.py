"""Prompt-as-prefix construction: spectral features, statistics, text, tokens.

Each forecasting window gets a short natural-language prefix describing the
dataset, the task, and window statistics (extremes, median, trend, top
autocorrelation lags).  The text is tokenized at byte level to match the
toy backbone vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError

# Context sentence describing the default dataset; experiment configs may
# override it per dataset.
DEFAULT_DATASET_CONTEXT = (
    "The distributed photovoltaic dataset includes output power measurements "
    "from distributed photovoltaic systems located in California, USA. It "
    "includes only photovoltaic power data and spans the entire year of 2006. "
    "Furthermore, the data exhibits a periodic pattern with no power "
    "generation during nighttime and early morning hours."
)

VOCAB_SIZE = 256

# Ranking scale for quantized autocorrelation scores, see top_lags.
_LAG_QUANTUM = 1e9


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT coefficients of one window."""

    coefficients: np.ndarray

    @property
    def q(self) -> int:
        return self.coefficients.shape[0]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.coefficients)


@dataclass(frozen=True)
class PromptStats:
    min_val: float
    max_val: float
    median_val: float
    trend: str
    top_lags: tuple[int, ...]
    degenerate_lags: bool = False

    def __post_init__(self):
        if not self.min_val <= self.median_val <= self.max_val:
            raise DataError("stats must satisfy min <= median <= max")
        if len(set(self.top_lags)) != len(self.top_lags):
            raise DataError("lags must be distinct")


@dataclass(frozen=True)
class PromptBundle:
    text: str
    token_ids: tuple[int, ...]
    stats: PromptStats


def _as_window(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ShapeError(f"expected non-empty 1-D window, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("window contains non-finite values")
    return x


def dft(x) -> Spectrum:
    """Full complex spectrum of a window, one coefficient per frequency bin."""
    x = _as_window(x)
    return Spectrum(np.fft.fft(x))


def circular_autocorr(x) -> np.ndarray:
    """Circular autocorrelation of the mean-removed window, r[0..Q-1].

    Computed as the inverse transform of the power spectrum, so r[l] equals
    sum_q y[q] * y[(q + l) mod Q] for y = x - mean(x).
    """
    x = _as_window(x)
    y = x - x.mean()
    power = np.abs(np.fft.fft(y)) ** 2
    return np.fft.ifft(power).real


def top_lags(x, k: int = 5) -> tuple[tuple[int, ...], bool]:
    """The k lags in [1, Q-1] with the largest circular autocorrelation.

    Ties break toward the smaller lag.  Scores are mirrored across Q/2 and
    quantized before ranking so that the exact r[l] = r[Q-l] symmetry of the
    mathematical definition is honored despite round-off.  A zero-variance
    window has no preferred lag; it returns [1..k] with the degenerate flag.
    """
    x = _as_window(x)
    q = x.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if q < 2 * k:
        raise ShapeError(f"need window length >= {2 * k} for {k} lags, got {q}")
    if np.ptp(x) == 0.0:
        return tuple(range(1, k + 1)), True
    r = circular_autocorr(x)
    half = q // 2
    scores = np.empty(q)
    scores[: half + 1] = r[: half + 1]
    for lag in range(half + 1, q):
        scores[lag] = scores[q - lag]
    quantized = np.rint(scores / scores[0] * _LAG_QUANTUM).astype(np.int64)
    order = sorted(range(1, q), key=lambda lag: (-quantized[lag], lag))
    return tuple(order[:k]), False


def series_stats(x, k: int = 5) -> PromptStats:
    """Window statistics for the prompt: extremes, median, trend, lags.

    Median uses the lower middle for even lengths.  Trend is the sign of
    the least-squares slope, with zero mapping to upward.
    """
    x = _as_window(x)
    q = x.shape[0]
    if q < 2:
        raise ShapeError(f"need at least 2 points for statistics, got {q}")
    ordered = np.sort(x)
    median = float(ordered[(q - 1) // 2])
    t = np.arange(q, dtype=np.float64)
    slope = float(np.polyfit(t, x, 1)[0])
    lags, degenerate = top_lags(x, k=k)
    return PromptStats(
        min_val=float(x.min()),
        max_val=float(x.max()),
        median_val=median,
        trend="upward" if slope >= 0.0 else "downward",
        top_lags=lags,
        degenerate_lags=degenerate,
    )


def render_prompt(dataset_context: str, horizon: int, input_len: int,
                  stats: PromptStats) -> str:
    """Render the prefix text: context, instruction, window statistics."""
    if not dataset_context or not isinstance(dataset_context, str):
        raise ConfigError("dataset_context must be a non-empty string")
    if horizon is None or int(horizon) < 1:
        raise ConfigError(f"horizon must be a positive integer, got {horizon}")
    if input_len is None or int(input_len) < 1:
        raise ConfigError(f"input_len must be a positive integer, got {input_len}")
    if stats is None or len(stats.top_lags) < 1:
        raise ConfigError("stats with at least one lag required")
    lag_text = "[" + ", ".join(str(int(l)) for l in stats.top_lags) + "]"
    return (
        f"{dataset_context}\n"
        "Below is the information about the input time series:\n"
        f"[Instruction]: forecast the next {int(horizon)} steps given the "
        f"previous {int(input_len)} steps information;\n"
        f"[Statistics]: The input has a minimum of {stats.min_val:.4f}, a "
        f"maximum of {stats.max_val:.4f}, and a median of "
        f"{stats.median_val:.4f}. The overall trend is {stats.trend}. The "
        f"top five lags are {lag_text}."
    )


def tokenize(text: str) -> tuple[int, ...]:
    """Byte-level token ids in [0, 255]; one id per UTF-8 byte."""
    return tuple(text.encode("utf-8"))


def detokenize(ids) -> str:
    ids = list(ids)
    for i in ids:
        if not 0 <= int(i) < VOCAB_SIZE:
            raise DataError(f"token id {i} outside [0, {VOCAB_SIZE - 1}]")
    return bytes(int(i) for i in ids).decode("utf-8")


def make_prompt(x, horizon: int, dataset_context: str = DEFAULT_DATASET_CONTEXT,
                k: int = 5) -> PromptBundle:
    """Window -> rendered and tokenized prompt bundle."""
    x = _as_window(x)
    stats = series_stats(x, k=k)
    text = render_prompt(dataset_context, horizon, x.shape[0], stats)
    return PromptBundle(text=text, token_ids=tokenize(text), stats=stats)

"""End-to-end forecaster assembly, training, and evaluation.

The model chain is: window statistics -> prompt tokens -> frozen token
embeddings, in parallel with patch partition -> trainable patch embedding
-> cross-attention alignment; the assembled sequence runs through the
frozen backbone and the last k outputs project to the forecast.  Training
touches only the lightweight modules (patch embedder, prototype map,
attention projections, forecast head) with minibatch Adam on MSE.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nm
from .backbone import Backbone, BackboneConfig
from .checkpoint import load_arrays, save_arrays
from .dataio import WindowSet
from .errors import ConfigError, FormatError, ShapeError
from .metrics import MetricsReport
from .patcher import (PatchConfig, WindowNormState, embed_patches, partition,
                      window_destandardize, window_standardize)
from .projector import ProjectionHead, project
from .promptgen import DEFAULT_DATASET_CONTEXT, make_prompt
from .reprogrammer import AttentionConfig, Reprogrammer, assemble_input

INIT_STD = 0.02


@dataclass(frozen=True)
class TrainConfig:
    horizon: int = 12
    input_len: int = 24
    max_epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    patience: int = 5
    seed: int = 0
    standardize: bool = False
    use_prompt: bool = True
    dataset_context: str = DEFAULT_DATASET_CONTEXT
    v_prime: int = 32
    max_steps: int | None = None
    grad_clip: float = 0.0  # 0 disables; hook only
    patch: PatchConfig = field(default_factory=PatchConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if self.horizon < 1 or self.input_len < 1:
            raise ConfigError(f"horizon and input_len must be >= 1, got {(self.horizon, self.input_len)}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("batch_size >= 1, max_epochs >= 0, patience >= 0 required")
        if self.attention.d_model != self.patch.d_model:
            raise ConfigError(
                f"attention d_model {self.attention.d_model} != patch d_model {self.patch.d_model}")
        if self.attention.d_llm != self.backbone.d_llm:
            raise ConfigError(
                f"attention d_llm {self.attention.d_llm} != backbone d_llm {self.backbone.d_llm}")
        if self.v_prime < 1:
            raise ConfigError(f"v_prime must be >= 1, got {self.v_prime}")
        self.patch.patch_count(self.input_len)  # raises if m > input_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        try:
            data["patch"] = PatchConfig(**data["patch"])
            data["attention"] = AttentionConfig(**data["attention"])
            data["backbone"] = BackboneConfig(**data["backbone"])
            return cls(**data)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad training config: {exc}") from None


def analytic_trainable_count(cfg: TrainConfig) -> int:
    """Closed-form scalar count of every trainable parameter."""
    p, a = cfg.patch, cfg.attention
    k = p.patch_count(cfg.input_len)
    embed = p.d_model * p.m + p.d_model
    proto = cfg.v_prime * cfg.backbone.vocab
    attn = a.heads * (a.d_h * a.d_model + 2 * a.d_h * a.d_llm) + a.d_llm * a.heads * a.d_h
    head = cfg.horizon * k * a.d_llm + cfg.horizon
    return embed + proto + attn + head


class ModelState:
    """Trainable parameters plus the frozen backbone for one configuration."""

    def __init__(self, cfg: TrainConfig, backbone: Backbone | None = None):
        self.cfg = cfg
        self.backbone = backbone if backbone is not None else Backbone(cfg.backbone)
        rng = np.random.default_rng(cfg.seed)
        self.trainable: dict[str, nm.Tensor] = {}
        self.trainable["embed.w_e"] = nm.Tensor(
            rng.normal(0.0, INIT_STD, size=(cfg.patch.d_model, cfg.patch.m)),
            requires_grad=True, name="embed.w_e")
        self.trainable["embed.b_e"] = nm.Tensor(
            np.zeros(cfg.patch.d_model), requires_grad=True, name="embed.b_e")
        self.reprogrammer = Reprogrammer(
            cfg.attention, cfg.v_prime, self.backbone.vocab_embeddings(),
            seed=cfg.seed + 1)
        for name, tensor in self.reprogrammer.params.items():
            self.trainable["reprogram." + name] = tensor
        k = cfg.patch.patch_count(cfg.input_len)
        self.head = ProjectionHead(k, cfg.attention.d_llm, cfg.horizon, seed=cfg.seed + 2)
        for name, tensor in self.head.params.items():
            self.trainable["project." + name] = tensor

    def census(self) -> int:
        return sum(t.value.size for t in self.trainable.values())

    def trainable_hash(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.trainable):
            digest.update(name.encode("utf-8"))
            digest.update(self.trainable[name].value.tobytes(order="C"))
        return digest.hexdigest()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.trainable.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, t in self.trainable.items():
            t.value = snap[name].copy()


# ---------------------------------------------------------------------------
# forward


def prompt_token_ids(x, cfg: TrainConfig):
    """Token ids of the rendered prefix for one window; () when disabled.

    Factored out so training can compute them once per window and reuse
    them across epochs (statistics depend only on the window itself).
    """
    if not cfg.use_prompt:
        return ()
    return make_prompt(x, cfg.horizon, dataset_context=cfg.dataset_context).token_ids


def forward_window(state: ModelState, x, cfg: TrainConfig,
                   prompt_ids=None) -> tuple[nm.Tensor, WindowNormState | None]:
    """Forecast one window; returns the model-space forecast tensor.

    Prompt statistics always describe the raw window; standardization, when
    enabled, applies only to the patch path, and the returned norm state
    maps the forecast back to normalized power units.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.input_len,):
        raise ShapeError(f"expected window of shape ({cfg.input_len},), got {x.shape}")
    if prompt_ids is None:
        prompt_ids = prompt_token_ids(x, cfg)
    norm_state = None
    x_model = x
    if cfg.standardize:
        x_model, norm_state = window_standardize(x)
    if len(prompt_ids):
        prompt_emb = state.backbone.embed_tokens(np.asarray(prompt_ids, dtype=np.int64))
    else:
        prompt_emb = nm.Tensor(np.zeros((0, cfg.attention.d_llm)), requires_grad=False)
    patches = partition(x_model, cfg.patch)
    e = embed_patches(patches, state.trainable["embed.w_e"], state.trainable["embed.b_e"])
    aligned = state.reprogrammer.align(e)
    seq = assemble_input(prompt_emb, aligned)
    hidden = state.backbone.forward(seq.seq)
    return project(hidden, state.head), norm_state


def predict_window(state: ModelState, x, cfg: TrainConfig, prompt_ids=None) -> np.ndarray:
    """Forecast in normalized power units (de-standardized if needed)."""
    fc, norm_state = forward_window(state, x, cfg, prompt_ids=prompt_ids)
    out = fc.value
    if norm_state is not None:
        out = window_destandardize(out, norm_state)
    return out


def mse_loss(forecast: nm.Tensor, target) -> nm.Tensor:
    target = np.asarray(target, dtype=np.float64)
    if forecast.value.shape != target.shape:
        raise ShapeError(f"forecast shape {forecast.value.shape} != target shape {target.shape}")
    diff = nm.sub(forecast, nm.Tensor(target, requires_grad=False))
    return nm.mean_all(nm.mul(diff, diff))


def window_loss(state: ModelState, x, target, cfg: TrainConfig, prompt_ids=None) -> nm.Tensor:
    """Training loss for one window, in normalized power space.

    With standardization on, the forecast is mapped back through the
    window's affine norm state before the loss, so degenerate (constant)
    windows with a floored std cannot blow up the target scale.
    """
    fc, norm_state = forward_window(state, x, cfg, prompt_ids=prompt_ids)
    if norm_state is not None:
        fc = nm.add_const(nm.scale(fc, norm_state.std), norm_state.mean)
    return mse_loss(fc, np.asarray(target, dtype=np.float64))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    train_loss: list[float]
    val_loss: list[float]
    steps: int
    stopped_early: bool
    best_epoch: int


def _zero_grads(state: ModelState):
    for t in state.trainable.values():
        t.zero_grad()


def train(state: ModelState, train_windows: WindowSet,
          val_windows: WindowSet | None, cfg: TrainConfig,
          log=None) -> TrainHistory:
    """Minibatch Adam over the trainable modules; backbone never updates.

    Early-stops when validation loss fails to improve for `patience`
    epochs, then restores the best-validation parameters.
    """
    n = len(train_windows)
    if n == 0:
        raise ConfigError("training window set is empty")
    before_hash = state.backbone.state_hash()
    opt = {name: nm.AdamState(t.value.shape, lr=cfg.lr)
           for name, t in state.trainable.items()}
    rng = np.random.default_rng(cfg.seed)
    train_prompts = [prompt_token_ids(train_windows.inputs[i], cfg) for i in range(n)]
    val_prompts = None
    if val_windows is not None and len(val_windows):
        val_prompts = [prompt_token_ids(val_windows.inputs[i], cfg)
                       for i in range(len(val_windows))]

    history = TrainHistory([], [], 0, False, -1)
    best_val = np.inf
    best_snap = None
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo: lo + cfg.batch_size]
            _zero_grads(state)
            inv = 1.0 / batch.size
            for i in batch:
                loss = window_loss(state, train_windows.inputs[i],
                                   train_windows.targets[i], cfg,
                                   prompt_ids=train_prompts[i])
                nm.backward(nm.scale(loss, inv))
                epoch_loss += float(loss.value)
            if cfg.grad_clip > 0.0:
                norm = np.sqrt(sum(float((t.grad ** 2).sum())
                                   for t in state.trainable.values() if t.grad is not None))
                if norm > cfg.grad_clip:
                    for t in state.trainable.values():
                        if t.grad is not None:
                            t.grad *= cfg.grad_clip / norm
            for name, t in state.trainable.items():
                g = t.grad if t.grad is not None else np.zeros_like(t.value)
                nm.adam_step(opt[name], t.value, g)
            history.steps += 1
            if cfg.max_steps is not None and history.steps >= cfg.max_steps:
                break
        history.train_loss.append(epoch_loss / n)
        if val_prompts is not None:
            vloss = 0.0
            for i in range(len(val_windows)):
                loss = window_loss(state, val_windows.inputs[i],
                                   val_windows.targets[i], cfg,
                                   prompt_ids=val_prompts[i])
                vloss += float(loss.value)
            vloss /= len(val_windows)
            history.val_loss.append(vloss)
            if vloss < best_val - 1e-12:
                best_val = vloss
                best_snap = state.snapshot()
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    history.stopped_early = True
                    break
        if log is not None:
            log(epoch, history)
        if cfg.max_steps is not None and history.steps >= cfg.max_steps:
            break
    if best_snap is not None:
        state.restore(best_snap)
    _zero_grads(state)
    after_hash = state.backbone.state_hash()
    if after_hash != before_hash:
        raise ConfigError("frozen backbone changed during training")
    return history


def evaluate(state: ModelState, windows: WindowSet, cfg: TrainConfig) -> MetricsReport:
    """Metrics over the concatenated forecasts of every window."""
    report, _ = evaluate_with_forecasts(state, windows, cfg)
    return report


def evaluate_with_forecasts(state: ModelState, windows: WindowSet,
                            cfg: TrainConfig) -> tuple[MetricsReport, np.ndarray]:
    if len(windows) == 0:
        raise ConfigError("evaluation window set is empty")
    before = state.trainable_hash()
    forecasts = np.empty_like(windows.targets)
    for i in range(len(windows)):
        forecasts[i] = predict_window(state, windows.inputs[i], cfg)
    if state.trainable_hash() != before:
        raise ConfigError("evaluation mutated trainable parameters")
    report = MetricsReport.compute(windows.targets.ravel(), forecasts.ravel())
    return report, forecasts


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(state: ModelState, path):
    arrays = {name: t.value for name, t in state.trainable.items()}
    save_arrays(path, {"kind": "model", "train_config": state.cfg.to_dict()}, arrays)


def load_checkpoint(path) -> ModelState:
    metadata, arrays = load_arrays(path)
    if metadata.get("kind") != "model":
        raise FormatError(f"not a model checkpoint: kind={metadata.get('kind')!r}")
    cfg = TrainConfig.from_dict(metadata["train_config"])
    state = ModelState(cfg)
    expected = set(state.trainable)
    found = set(arrays)
    if expected - found:
        raise FormatError(f"missing trainable arrays {sorted(expected - found)}")
    if found - expected:
        raise FormatError(f"unexpected arrays {sorted(found - expected)}")
    for name, tensor in state.trainable.items():
        if arrays[name].shape != tensor.value.shape:
            raise FormatError(
                f"array {name}: expected shape {tensor.value.shape}, found {arrays[name].shape}")
        tensor.value = arrays[name]
    return state

"""Frozen causal toy transformer standing in for a pre-trained LLM.

The backbone consumes a sequence of embeddings and returns same-shape
hidden states.  Pre-layer-norm blocks, causal self-attention, GELU
feed-forward, sinusoidal absolute positions.  All weights are generated
from a seed (or loaded from a checkpoint), marked read-only, and excluded
from every optimizer; gradients flow through to the input only.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nm
from .checkpoint import load_arrays, save_arrays
from .errors import ConfigError, FormatError, ShapeError

INIT_STD = 0.02


@dataclass(frozen=True)
class BackboneConfig:
    layers: int = 2
    heads: int = 4
    d_llm: int = 32
    d_ff: int = 64
    vocab: int = 256
    max_seq: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.d_llm < 1 or self.d_ff < 1:
            raise ConfigError(f"layer/head/width counts must be >= 1, got {self}")
        if self.d_llm % self.heads != 0:
            raise ConfigError(f"d_llm {self.d_llm} not divisible by heads {self.heads}")
        if self.vocab != 256:
            raise ConfigError(f"vocab must be 256 to match the byte tokenizer, got {self.vocab}")
        if self.max_seq < 1:
            raise ConfigError(f"max_seq must be >= 1, got {self.max_seq}")

    @property
    def d_head(self) -> int:
        return self.d_llm // self.heads


def expected_shapes(config: BackboneConfig) -> dict[str, tuple[int, ...]]:
    """Every named weight array and its shape, in construction order."""
    d, f = config.d_llm, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {"vocab_embedding": (config.vocab, d)}
    for i in range(config.layers):
        p = f"layer{i}."
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        for name in ("w_q", "w_k", "w_v", "w_o"):
            shapes[p + "attn." + name] = (d, d)
        for name in ("b_q", "b_k", "b_v", "b_o"):
            shapes[p + "attn." + name] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["ln_f.gain"] = (d,)
    shapes["ln_f.bias"] = (d,)
    return shapes


def _init_arrays(config: BackboneConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(config).items():
        base = name.rsplit(".", 1)[-1]
        if base in ("gain",):
            arrays[name] = np.ones(shape, dtype=np.float64)
        elif base.startswith("b") or base == "bias":
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            arrays[name] = rng.normal(0.0, INIT_STD, size=shape)
    return arrays


def _position_table(max_seq: int, d: int) -> np.ndarray:
    pos = np.arange(max_seq, dtype=np.float64)[:, None]
    dim = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(dim / 2.0) / d)
    table = np.empty((max_seq, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


class Backbone:
    """Immutable transformer; construct from a config or loaded arrays."""

    def __init__(self, config: BackboneConfig, arrays: dict[str, np.ndarray] | None = None):
        self.config = config
        shapes = expected_shapes(config)
        if arrays is None:
            arrays = _init_arrays(config)
        for name, shape in shapes.items():
            if name not in arrays:
                raise FormatError(f"missing weight array {name}")
            if arrays[name].shape != shape:
                raise FormatError(f"array {name}: expected shape {shape}, found {arrays[name].shape}")
        extra = set(arrays) - set(shapes)
        if extra:
            raise FormatError(f"unexpected weight arrays {sorted(extra)}")
        self._arrays = {}
        self._tensors = {}
        for name in shapes:
            arr = np.array(arrays[name], dtype=np.float64)
            arr.setflags(write=False)
            self._arrays[name] = arr
            self._tensors[name] = nm.Tensor(arr, requires_grad=False, name=name)
        pe = _position_table(config.max_seq, config.d_llm)
        pe.setflags(write=False)
        self._pe = pe

    # -- accessors ---------------------------------------------------------

    def vocab_embeddings(self) -> np.ndarray:
        """Read-only view of the 256 x d_llm token embedding matrix."""
        return self._arrays["vocab_embedding"]

    def embed_tokens(self, ids) -> nm.Tensor:
        """Look up token embeddings; frozen, so no gradient is produced."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeError(f"token ids must be 1-D, got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab):
            raise ConfigError("token id outside vocabulary")
        return nm.embed_rows(self._tensors["vocab_embedding"], ids)

    def state_hash(self) -> str:
        """SHA-256 over every weight array; the frozen-backbone fingerprint."""
        digest = hashlib.sha256()
        for name in sorted(self._arrays):
            digest.update(name.encode("utf-8"))
            digest.update(self._arrays[name].tobytes(order="C"))
        return digest.hexdigest()

    # -- forward -----------------------------------------------------------

    def forward(self, seq: nm.Tensor) -> nm.Tensor:
        """Hidden states for an embedded sequence, same shape as the input."""
        if seq.value.ndim != 2 or seq.value.shape[1] != self.config.d_llm:
            raise ShapeError(f"expected (n, {self.config.d_llm}) input, got {seq.value.shape}")
        n = seq.value.shape[0]
        if n > self.config.max_seq:
            raise ConfigError(f"sequence length {n} exceeds max_seq {self.config.max_seq}")
        t = self._tensors
        heads, d_head = self.config.heads, self.config.d_head
        mask = np.triu(np.full((n, n), -np.inf), k=1)  # causal: position i sees <= i

        x = nm.add_const(seq, self._pe[:n])
        for i in range(self.config.layers):
            p = f"layer{i}."
            h = nm.layer_norm(x, t[p + "ln1.gain"], t[p + "ln1.bias"])
            q = nm.add(nm.matmul(h, t[p + "attn.w_q"]), t[p + "attn.b_q"])
            k = nm.add(nm.matmul(h, t[p + "attn.w_k"]), t[p + "attn.b_k"])
            v = nm.add(nm.matmul(h, t[p + "attn.w_v"]), t[p + "attn.b_v"])
            qh = nm.permute(nm.reshape(q, (n, heads, d_head)), (1, 0, 2))
            kh = nm.permute(nm.reshape(k, (n, heads, d_head)), (1, 0, 2))
            vh = nm.permute(nm.reshape(v, (n, heads, d_head)), (1, 0, 2))
            logits = nm.scale(nm.matmul(qh, nm.transpose(kh)), 1.0 / np.sqrt(d_head))
            att = nm.softmax(nm.add_const(logits, mask))
            ctx = nm.reshape(nm.permute(nm.matmul(att, vh), (1, 0, 2)), (n, self.config.d_llm))
            ctx = nm.add(nm.matmul(ctx, t[p + "attn.w_o"]), t[p + "attn.b_o"])
            x = nm.add(x, ctx)
            h2 = nm.layer_norm(x, t[p + "ln2.gain"], t[p + "ln2.bias"])
            ff = nm.gelu(nm.add(nm.matmul(h2, t[p + "ff.w1"]), t[p + "ff.b1"]))
            ff = nm.add(nm.matmul(ff, t[p + "ff.w2"]), t[p + "ff.b2"])
            x = nm.add(x, ff)
        return nm.layer_norm(x, t["ln_f.gain"], t["ln_f.bias"])

    # -- serialization -----------------------------------------------------

    def save(self, path):
        save_arrays(path, {"kind": "backbone", "config": asdict(self.config)}, self._arrays)

    @classmethod
    def load_external(cls, path) -> "Backbone":
        """Rebuild a frozen backbone from a checkpoint container."""
        metadata, arrays = load_arrays(path)
        if metadata.get("kind") != "backbone":
            raise FormatError(f"not a backbone checkpoint: kind={metadata.get('kind')!r}")
        try:
            config = BackboneConfig(**metadata["config"])
        except (KeyError, TypeError, ConfigError) as exc:
            raise FormatError(f"bad backbone config in metadata: {exc}") from None
        return cls(config, arrays)

"""Cross-attention alignment of patch embeddings onto text prototypes.

A small trainable map M compresses the frozen vocabulary embedding matrix
into V' prototypes T = M W_vocab.  Multi-head cross-attention then queries
the prototypes with patch embeddings and re-expresses each patch in the
backbone's width.  Heads keep separate projection matrices and use no
biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ShapeError

INIT_STD = 0.02


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 4
    d_h: int = 8       # per-head width
    d_llm: int = 32    # backbone hidden size
    d_model: int = 16  # patch embedding width (query source)

    def __post_init__(self):
        if min(self.heads, self.d_h, self.d_llm, self.d_model) < 1:
            raise ConfigError(f"attention dimensions must be >= 1, got {self}")


class PrototypeBank:
    """Frozen vocabulary matrix plus the trainable compression map."""

    def __init__(self, w_vocab: nm.Tensor, m_map: nm.Tensor):
        if w_vocab.value.ndim != 2 or m_map.value.ndim != 2:
            raise ShapeError("prototype inputs must be matrices")
        if m_map.value.shape[1] != w_vocab.value.shape[0]:
            raise ShapeError(
                f"map columns {m_map.value.shape[1]} must equal vocab rows {w_vocab.value.shape[0]}")
        if m_map.value.shape[0] < 1:
            raise ConfigError("prototype count must be >= 1")
        if w_vocab.requires_grad:
            raise ConfigError("vocabulary matrix must be frozen")
        self.w_vocab = w_vocab
        self.m_map = m_map

    @property
    def v_prime(self) -> int:
        return self.m_map.value.shape[0]

    @property
    def d_llm(self) -> int:
        return self.w_vocab.value.shape[1]

    def prototypes(self) -> nm.Tensor:
        """T = M W_vocab, recomputed so updates to M take effect."""
        return nm.matmul(self.m_map, self.w_vocab)


def build_prototypes(w_vocab, m_map) -> PrototypeBank:
    """Wrap a frozen vocabulary matrix and trainable map into a bank."""
    if not isinstance(w_vocab, nm.Tensor):
        w_vocab = nm.Tensor(np.asarray(w_vocab, dtype=np.float64), requires_grad=False, name="w_vocab")
    if not isinstance(m_map, nm.Tensor):
        m_map = nm.Tensor(np.asarray(m_map, dtype=np.float64), requires_grad=True, name="m_map")
    return PrototypeBank(w_vocab, m_map)


def reprogram(e: nm.Tensor, bank: PrototypeBank, cfg: AttentionConfig,
              weights: dict[str, nm.Tensor], return_attention: bool = False):
    """Align patch embeddings to prototypes, head by head.

    Per head: q = e Wq^T, k = T Wk^T, v = T Wv^T, att = softmax(q k^T / sqrt(d_h)),
    out = att v; heads concatenate and project back to d_llm.
    """
    if e.value.ndim != 2 or e.value.shape[1] != cfg.d_model:
        raise ShapeError(f"expected (k, {cfg.d_model}) patch embeddings, got {e.value.shape}")
    if bank.d_llm != cfg.d_llm:
        raise ShapeError(f"bank width {bank.d_llm} does not match config d_llm {cfg.d_llm}")
    t = bank.prototypes()
    inv_sqrt = 1.0 / np.sqrt(cfg.d_h)
    head_outs = []
    attentions = []
    for h in range(cfg.heads):
        w_q = weights[f"w_q_h{h}"]
        w_k = weights[f"w_k_h{h}"]
        w_v = weights[f"w_v_h{h}"]
        q = nm.matmul(e, nm.transpose(w_q))
        k = nm.matmul(t, nm.transpose(w_k))
        v = nm.matmul(t, nm.transpose(w_v))
        att = nm.softmax(nm.scale(nm.matmul(q, nm.transpose(k)), inv_sqrt))
        head_outs.append(nm.matmul(att, v))
        attentions.append(att)
    merged = head_outs[0] if cfg.heads == 1 else nm.concat(head_outs, axis=1)
    out = nm.matmul(merged, nm.transpose(weights["w_o"]))
    if return_attention:
        return out, attentions
    return out


@dataclass
class AlignedSequence:
    """Prompt embeddings stacked above aligned patch embeddings."""

    seq: nm.Tensor  # (p + k, d_llm)
    p: int
    k: int


def assemble_input(prompt_emb: nm.Tensor, aligned: nm.Tensor) -> AlignedSequence:
    """I = [prompt; patches]; an empty prompt is a valid ablation."""
    if aligned.value.ndim != 2:
        raise ShapeError(f"patch block must be a matrix, got shape {aligned.value.shape}")
    p = prompt_emb.value.shape[0] if prompt_emb.value.size else 0
    if p and prompt_emb.value.shape[1] != aligned.value.shape[1]:
        raise ShapeError(
            f"prompt width {prompt_emb.value.shape[1]} != patch width {aligned.value.shape[1]}")
    k = aligned.value.shape[0]
    seq = aligned if p == 0 else nm.concat([prompt_emb, aligned], axis=0)
    return AlignedSequence(seq=seq, p=p, k=k)


class Reprogrammer:
    """Owns the trainable alignment parameters for one model instance."""

    def __init__(self, cfg: AttentionConfig, v_prime: int, w_vocab: np.ndarray, seed: int = 0):
        if v_prime < 1:
            raise ConfigError(f"prototype count must be >= 1, got {v_prime}")
        w_vocab = np.asarray(w_vocab, dtype=np.float64)
        if w_vocab.ndim != 2 or w_vocab.shape[1] != cfg.d_llm:
            raise ShapeError(f"vocabulary matrix shape {w_vocab.shape} incompatible with d_llm {cfg.d_llm}")
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params: dict[str, nm.Tensor] = {}

        def trainable(name, shape):
            self.params[name] = nm.Tensor(rng.normal(0.0, INIT_STD, size=shape),
                                          requires_grad=True, name="reprogram." + name)

        trainable("m_map", (v_prime, w_vocab.shape[0]))
        for h in range(cfg.heads):
            trainable(f"w_q_h{h}", (cfg.d_h, cfg.d_model))
            trainable(f"w_k_h{h}", (cfg.d_h, cfg.d_llm))
            trainable(f"w_v_h{h}", (cfg.d_h, cfg.d_llm))
        trainable("w_o", (cfg.d_llm, cfg.heads * cfg.d_h))
        self._w_vocab = nm.Tensor(w_vocab, requires_grad=False, name="w_vocab")

    def bank(self) -> PrototypeBank:
        return PrototypeBank(self._w_vocab, self.params["m_map"])

    def align(self, e: nm.Tensor, return_attention: bool = False):
        return reprogram(e, self.bank(), self.cfg, self.params,
                         return_attention=return_attention)

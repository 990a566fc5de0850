"""
Convolution-augmented attention (CAT) forward pass.

K = maybe_normalize(X * F_k) W_k, and the same for Q and V. The output for a
query position t is V^T attention_weights(K q_t), where q_t is row t of Q.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from src.core.numerics import (
    AttnMode,
    EmbeddedSeq,
    Filter,
    Hard,
    as_sequence,
    attention_weights,
    attn_mode_from_dict,
    convolve,
    row_normalize,
    structural_zero_rows,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CatModel:
    """A single-head CAT layer with per-projection normalization flags."""

    f_k: Filter
    f_q: Filter
    f_v: Filter
    w_k: np.ndarray
    w_q: np.ndarray
    w_v: np.ndarray
    normalize_k: bool = False
    normalize_q: bool = False
    normalize_v: bool = False
    attn_mode: AttnMode = field(default_factory=Hard)
    causal_mask: bool = False

    def __post_init__(self):
        mats = []
        for name in ('w_k', 'w_q', 'w_v'):
            w = np.array(getattr(self, name), dtype=np.float64)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError(f"{name} must be square, got shape {w.shape}")
            w.setflags(write=False)
            object.__setattr__(self, name, w)
            mats.append(w.shape[0])
        if len(set(mats)) != 1:
            raise ValueError(f"Weight matrices disagree on d: {mats}")

    @property
    def d(self) -> int:
        return self.w_k.shape[0]

    def with_changes(self, **changes) -> 'CatModel':
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "f_k": self.f_k.to_dict(),
            "f_q": self.f_q.to_dict(),
            "f_v": self.f_v.to_dict(),
            "w_k": self.w_k.tolist(),
            "w_q": self.w_q.tolist(),
            "w_v": self.w_v.tolist(),
            "normalize_k": self.normalize_k,
            "normalize_q": self.normalize_q,
            "normalize_v": self.normalize_v,
            "attn_mode": self.attn_mode.to_dict(),
            "causal_mask": self.causal_mask,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'CatModel':
        return cls(
            f_k=Filter.from_dict(data["f_k"]),
            f_q=Filter.from_dict(data["f_q"]),
            f_v=Filter.from_dict(data["f_v"]),
            w_k=np.asarray(data["w_k"]),
            w_q=np.asarray(data["w_q"]),
            w_v=np.asarray(data["w_v"]),
            normalize_k=bool(data["normalize_k"]),
            normalize_q=bool(data["normalize_q"]),
            normalize_v=bool(data["normalize_v"]),
            attn_mode=attn_mode_from_dict(data["attn_mode"]),
            causal_mask=bool(data["causal_mask"]),
        )


def _project(x: EmbeddedSeq, f: Filter, normalize: bool, w: np.ndarray) -> EmbeddedSeq:
    z = convolve(x, f)
    if normalize:
        # rows the filter cannot reach stay zero
        z = row_normalize(z, skip=structural_zero_rows(x.shape[0], f))
    return z @ w


def project_all(x, m: CatModel) -> Tuple[EmbeddedSeq, EmbeddedSeq, EmbeddedSeq]:
    """Key, query and value sequences of shape (L, d)."""
    x = as_sequence(x)
    if x.shape[1] != m.d:
        raise ValueError(f"Sequence has d={x.shape[1]}, model expects d={m.d}")
    K = _project(x, m.f_k, m.normalize_k, m.w_k)
    Q = _project(x, m.f_q, m.normalize_q, m.w_q)
    V = _project(x, m.f_v, m.normalize_v, m.w_v)
    return K, Q, V


def _check_index(L: int, query_index: int):
    if not 0 <= query_index < L:
        raise IndexError(f"query_index {query_index} outside [0, {L})")


def _weights_for(K: EmbeddedSeq, q: np.ndarray, m: CatModel, query_index: int) -> np.ndarray:
    L = K.shape[0]
    n = query_index + 1 if m.causal_mask else L
    weights = np.zeros(L)
    weights[:n] = attention_weights(K[:n] @ q, m.attn_mode)
    return weights


def cat_attention_map(x, m: CatModel, query_index: int) -> np.ndarray:
    """Attention probability vector (length L) for one query position."""
    K, Q, _ = project_all(x, m)
    _check_index(K.shape[0], query_index)
    return _weights_for(K, Q[query_index], m, query_index)


def cat_forward(x, m: CatModel, query_index: int) -> np.ndarray:
    """Output vector (length d) for one query position."""
    K, Q, V = project_all(x, m)
    _check_index(K.shape[0], query_index)
    return V.T @ _weights_for(K, Q[query_index], m, query_index)


def cat_forward_with_map(x, m: CatModel, query_index: int) -> Tuple[np.ndarray, np.ndarray]:
    """Output vector and attention map from a single projection pass."""
    K, Q, V = project_all(x, m)
    _check_index(K.shape[0], query_index)
    weights = _weights_for(K, Q[query_index], m, query_index)
    return V.T @ weights, weights


def cat_forward_all(x, m: CatModel) -> EmbeddedSeq:
    """One output row per position under the causal mask."""
    if not m.causal_mask:
        raise ValueError("cat_forward_all requires a causally masked model")
    K, Q, V = project_all(x, m)
    L = K.shape[0]
    out = np.empty((L, V.shape[1]))
    for t in range(L):
        out[t] = V.T @ _weights_for(K, Q[t], m, t)
    return out


# ---------------------------------------------------------------------------
# Multi-head convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MultiHeadConv:
    """Head-mixing filter with taps indexed (time, out-head, in-head)."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.array(self.taps, dtype=np.float64)
        if t.ndim != 3 or t.shape[1] != t.shape[2] or t.shape[0] < 1 or t.shape[1] < 1:
            raise ValueError(f"Multi-head taps must have shape (W, H, H), got {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, 'taps', t)

    @property
    def width(self) -> int:
        return self.taps.shape[0]

    @property
    def heads(self) -> int:
        return self.taps.shape[1]


def multihead_convolve(xbar, f: MultiHeadConv) -> np.ndarray:
    """
    out[i, :, h] = sum_j sum_g taps[j, h, g] * xbar[i - j, :, g], zero padded.

    Args:
        xbar: Array of shape (L, d, H)
        f: Head-mixing filter with H heads
    """
    xbar = np.asarray(xbar, dtype=np.float64)
    if xbar.ndim != 3 or xbar.shape[2] != f.heads:
        raise ValueError(f"Expected shape (L, d, {f.heads}), got {xbar.shape}")
    L = xbar.shape[0]
    out = np.zeros_like(xbar)
    for j in range(min(f.width, L)):
        # (L-j, d, g) x (h, g) -> (L-j, d, h)
        out[j:] += np.einsum('idg,hg->idh', xbar[:L - j], f.taps[j])
    return out

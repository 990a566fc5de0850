"""
Numeric primitives shared by every catlab module.

Sequences are plain float64 arrays of shape (L, d). Convolution uses direct
summation with zero padding on both ends: x_k = 0 for k < 0 and k >= L.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import GS_TOL, NORM_EPS, TIE_TOL
from src.core.errors import EmptyVocab, InfeasibleSpec, ZeroRow

logger = logging.getLogger(__name__)

EmbeddedSeq = np.ndarray


def as_sequence(x) -> EmbeddedSeq:
    """
    Coerce input to a finite (L, d) float64 array.

    A 1-D input is treated as a single scalar column.

    Raises:
        ValueError: If the sequence is empty or has non-finite entries
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"Expected a nonempty (L, d) sequence, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Sequence has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Filter:
    """
    Finite convolution filter with explicit support.

    taps[k] is the weight at time offset t_min + k. Offsets may be negative
    (two-sided filters look ahead).
    """

    taps: Tuple[float, ...]
    t_min: int = 0

    def __post_init__(self):
        taps = tuple(float(t) for t in self.taps)
        if len(taps) < 1:
            raise ValueError("A filter needs at least one tap")
        if not all(np.isfinite(taps)):
            raise ValueError("Filter taps must be finite")
        object.__setattr__(self, 'taps', taps)
        object.__setattr__(self, 't_min', int(self.t_min))

    @property
    def t_max(self) -> int:
        return self.t_min + len(self.taps) - 1

    @property
    def offsets(self) -> range:
        return range(self.t_min, self.t_max + 1)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.taps, dtype=np.float64)

    @property
    def is_causal(self) -> bool:
        return self.t_min >= 0

    def tap(self, offset: int) -> float:
        """Weight at a time offset (0 outside the support)."""
        if self.t_min <= offset <= self.t_max:
            return self.taps[offset - self.t_min]
        return 0.0

    @classmethod
    def delay(cls, i: int) -> 'Filter':
        """D_i: shifts a signal i steps forward in time (negative i looks ahead)."""
        return cls((1.0,), t_min=i)

    @classmethod
    def causal(cls, taps: Iterable[float]) -> 'Filter':
        return cls(tuple(taps), t_min=0)

    @classmethod
    def ones(cls, length: int) -> 'Filter':
        return cls((1.0,) * length, t_min=0)

    @classmethod
    def exp_decay(cls, rho: float, length: int) -> 'Filter':
        """Causal taps rho^i for 0 <= i < length."""
        return cls(tuple(rho ** i for i in range(length)), t_min=0)

    def compose(self, other: 'Filter') -> 'Filter':
        """Filter whose action equals applying self then other (D_i * D_j = D_{i+j})."""
        taps = np.convolve(self.array, other.array)
        return Filter(tuple(taps), t_min=self.t_min + other.t_min)

    def scaled(self, a: float) -> 'Filter':
        return Filter(tuple(a * t for t in self.taps), t_min=self.t_min)

    def l1_distance(self, other: 'Filter') -> float:
        lo = min(self.t_min, other.t_min)
        hi = max(self.t_max, other.t_max)
        return float(sum(abs(self.tap(o) - other.tap(o)) for o in range(lo, hi + 1)))

    def to_dict(self) -> dict:
        return {"taps": list(self.taps), "t_min": self.t_min}

    @classmethod
    def from_dict(cls, data: dict) -> 'Filter':
        return cls(tuple(data["taps"]), t_min=int(data.get("t_min", 0)))


def convolve(x, f: Filter) -> EmbeddedSeq:
    """
    (F * X)_i = sum_j F_j x_{i-j} over the filter support, zero padded.

    Args:
        x: Sequence of shape (L, d) (or a 1-D scalar column)
        f: Filter

    Returns:
        Array with the same shape as x (1-D input is returned as (L, 1))
    """
    x = as_sequence(x)
    L = x.shape[0]
    out = np.zeros_like(x)
    for j, tap in zip(f.offsets, f.taps):
        if tap == 0.0 or abs(j) >= L:
            continue
        if j >= 0:
            out[j:] += tap * x[:L - j]
        else:
            out[:L + j] += tap * x[-j:]
    return out


def structural_zero_rows(L: int, f: Filter) -> np.ndarray:
    """
    Rows of F * X that are zero for every X of length L.

    A row is a structural zero when none of its nonzero taps reaches an
    in-range input index.
    """
    reached = np.zeros(L, dtype=bool)
    for j, tap in zip(f.offsets, f.taps):
        if tap == 0.0 or abs(j) >= L:
            continue
        if j >= 0:
            reached[j:] = True
        else:
            reached[:L + j] = True
    return ~reached


def row_normalize(x, eps: float = NORM_EPS, skip: Optional[np.ndarray] = None) -> EmbeddedSeq:
    """
    Normalize every row to unit l2 norm.

    Args:
        x: Sequence of shape (L, d)
        eps: Norm floor
        skip: Optional boolean mask of rows to leave untouched

    Raises:
        ZeroRow: If a row (not skipped) has norm below eps
    """
    x = as_sequence(x)
    norms = np.linalg.norm(x, axis=1)
    check = norms < eps
    if skip is not None:
        check &= ~skip
    bad = np.flatnonzero(check)
    if bad.size:
        i = int(bad[0])
        raise ZeroRow(i, float(norms[i]))
    out = x.copy()
    ok = norms >= eps
    out[ok] = x[ok] / norms[ok, None]
    return out


# ---------------------------------------------------------------------------
# Attention weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Soft:
    """Softmax with inverse temperature c."""

    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"Soft temperature must be positive (got {self.c})")

    def to_dict(self) -> dict:
        return {"mode": "soft", "c": self.c}


@dataclass(frozen=True)
class Hard:
    """The c -> infinity limit of softmax: uniform over the argmax set."""

    def to_dict(self) -> dict:
        return {"mode": "hard"}


AttnMode = Union[Soft, Hard]


def attn_mode_from_dict(data: dict) -> AttnMode:
    if data.get("mode") == "hard":
        return Hard()
    if data.get("mode") == "soft":
        return Soft(float(data["c"]))
    raise ValueError(f"Unknown attention mode: {data}")


def attention_weights(scores, mode: AttnMode, tie_tol: float = TIE_TOL) -> np.ndarray:
    """
    Turn a score vector into a probability vector.

    Soft(c) computes softmax(c * scores). Hard splits mass equally over the
    scores within tie_tol (relative) of the maximum.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("Cannot weight an empty score vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("Scores must be finite")
    top = s.max()
    if isinstance(mode, Hard):
        winners = s >= top - tie_tol * max(1.0, abs(top))
        return winners / winners.sum()
    z = mode.c * (s - top)
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# Vocabulary geometry
# ---------------------------------------------------------------------------

class Vocab:
    """Token embeddings indexed by contiguous ids starting at 0."""

    def __init__(self, embeddings, unit_norm: bool = True):
        E = np.asarray(embeddings, dtype=np.float64)
        if E.ndim != 2:
            raise ValueError(f"Embeddings must be a (|V|, d) matrix, got shape {E.shape}")
        if E.shape[0] == 0:
            raise EmptyVocab("Vocabulary has no tokens")
        if not np.all(np.isfinite(E)):
            raise ValueError("Embeddings must be finite")
        if unit_norm:
            norms = np.linalg.norm(E, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("unit_norm set but some embeddings are not unit length")
        E.setflags(write=False)
        self.embeddings = E
        self.unit_norm = unit_norm

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return self.size

    def embed(self, tokens: Sequence[int]) -> EmbeddedSeq:
        return self.embeddings[np.asarray(tokens, dtype=np.int64)].copy()

    @classmethod
    def orthonormal(cls, size: int, d: Optional[int] = None) -> 'Vocab':
        """Standard basis vectors e_0 .. e_{size-1} in R^d (d >= size)."""
        d = size if d is None else d
        if d < size:
            raise InfeasibleSpec(f"Orthonormal vocabulary of {size} tokens needs d >= {size}")
        return cls(np.eye(size, d))

    @classmethod
    def random_unit(cls, size: int, d: int, rng: np.random.Generator,
                    max_abs_cos: float = 0.5, max_attempts: int = 10000) -> 'Vocab':
        """
        Random unit vectors with pairwise |cos| <= max_abs_cos, by rejection.

        Raises:
            InfeasibleSpec: If a token cannot be placed within max_attempts draws
        """
        accepted = np.zeros((0, d))
        for token in range(size):
            for _ in range(max_attempts):
                v = rng.standard_normal(d)
                v /= np.linalg.norm(v)
                if accepted.shape[0] == 0 or np.max(np.abs(accepted @ v)) <= max_abs_cos:
                    accepted = np.vstack([accepted, v])
                    break
            else:
                raise InfeasibleSpec(
                    f"Could not place token {token} with |cos| <= {max_abs_cos} in d={d}")
        logger.debug("Sampled %d unit embeddings in d=%d", size, d)
        return cls(accepted)


def nearest_token(v, vocab: Vocab) -> int:
    """Id of the embedding closest to v in l2; ties go to the smallest id."""
    if vocab.size == 0:
        raise EmptyVocab("Vocabulary has no tokens")
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.shape[0] != vocab.dim:
        raise ValueError(f"Vector has dimension {v.shape[0]}, vocabulary has {vocab.dim}")
    dists = np.linalg.norm(vocab.embeddings - v, axis=1)
    return int(np.argmin(dists))


def min_embedding_distance(vocab: Vocab) -> float:
    """Δ = (1 − max_{a≠b} (aᵀb)²)^{1/2} by pairwise enumeration."""
    if vocab.size < 2:
        raise ValueError("Δ needs at least two tokens")
    G = vocab.embeddings @ vocab.embeddings.T
    np.fill_diagonal(G, 0.0)
    worst = float(np.max(G ** 2))
    return float(np.sqrt(np.clip(1.0 - worst, 0.0, 1.0)))


def cosine_gap(vectors) -> float:
    """1 − max pairwise cosine over a set of nonzero vectors (0 when any pair is parallel)."""
    V = np.asarray(vectors, dtype=np.float64)
    if V.shape[0] < 2:
        return 1.0
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    G = V @ V.T
    np.fill_diagonal(G, -np.inf)
    return float(np.clip(1.0 - G.max(), 0.0, 2.0))


def gram_schmidt_delta(tokens, tol: float = GS_TOL) -> float:
    """
    δ = min_j |β_jj| where β_jj = b_jᵀu_j from Gram–Schmidt in the given order.

    Returns 0 when a vector lies (numerically) in the span of its predecessors.
    """
    B = np.asarray(tokens, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] == 0:
        raise ValueError("Expected a nonempty list of vectors")
    basis = []
    delta = 1.0
    for b in B:
        u = b.copy()
        for e in basis:
            u -= (u @ e) * e
        r = np.linalg.norm(u)
        if r < tol:
            return 0.0
        u /= r
        basis.append(u)
        delta = min(delta, abs(float(b @ u)))
    return delta

"""
Exact CAT constructions for N-gram recall and selective copying.

Recall models are ordinary CatModel instances: value delay (F_k = F_q,
F_v = D_-1, W_v = 2I) and key delay (F_k = D_1 * F_q, F_v = D_0, W_v = I)
for N-gram recall, and the 1-D model F_k = D_1, F_q = F_v = D_0 for plain
recall. Soft(c) is realised as W_k = W_q = sqrt(c) I with unit softmax
temperature; Hard keeps identity weights.

The selective-copy model decodes autoregressively with an exponentially
decaying query filter over [base embedding, signal flag, position].
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.signal import lfilter

from src.config import SIGNATURE_ENUM_LIMIT, SIGNATURE_SAMPLES
from src.core.cat_layer import CatModel, cat_forward, project_all
from src.core.errors import NonTermination, SignatureNotUnique, TooLarge
from src.core.numerics import (
    AttnMode,
    Filter,
    Hard,
    Soft,
    Vocab,
    attention_weights,
    convolve,
    nearest_token,
)
from src.core.tasks import NO_MATCH, TaskInstance, sc_token_ids

logger = logging.getLogger(__name__)

PARALLEL_COS = 1.0 - 1e-9
MATCH_TOL = 1e-6


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

def default_query_filter(N: int) -> Filter:
    """Causal taps 2^(N-1), ..., 2, 1; every N-gram gets its own signature."""
    if N < 1:
        raise ValueError(f"N must be >= 1 (got {N})")
    return Filter.causal([2.0 ** (N - 1 - j) for j in range(N)])


def _check_query_filter(f: Filter, N: int):
    if not f.is_causal or f.t_min != 0 or len(f.taps) != N:
        raise ValueError(f"Query filter must be causal with exactly N={N} taps starting at offset 0")


def signatures(f: Filter, vocab: Vocab, grams: np.ndarray) -> np.ndarray:
    """
    Unnormalized signatures sum_m F_m e(z_{N-1-m}) for an (n, N) array of grams.

    Tap F_0 weights the newest token of each gram.
    """
    grams = np.asarray(grams, dtype=np.int64)
    n_tokens = grams.shape[1]
    E = vocab.embeddings[grams]  # (n, N, d)
    taps = np.array([f.tap(n_tokens - 1 - r) for r in range(n_tokens)])
    return np.einsum('r,nrd->nd', taps, E)


def _normalized(S: np.ndarray) -> Optional[np.ndarray]:
    norms = np.linalg.norm(S, axis=1)
    if np.any(norms < 1e-12):
        return None
    return S / norms[:, None]


def _all_grams(size: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(size), repeat=n)), dtype=np.int64).reshape(-1, n)


def _blocks(n: int, block: int) -> Iterator[slice]:
    for start in range(0, n, block):
        yield slice(start, min(start + block, n))


def _max_offdiag_cos(U: np.ndarray, block: int = 128) -> float:
    best = -np.inf
    for rows in _blocks(U.shape[0], block):
        G = U[rows] @ U.T
        idx = np.arange(rows.start, rows.stop)
        G[idx - rows.start, idx] = -np.inf
        best = max(best, float(G.max()))
    return best


@dataclass
class SignatureCheck:
    """Outcome of a signature-uniqueness check."""

    unique: bool
    method: str
    n_signatures: int
    max_cosine: float

    def to_dict(self) -> dict:
        return {"unique": self.unique, "method": self.method,
                "n_signatures": self.n_signatures, "max_cosine": self.max_cosine}


def signature_check(f: Filter, vocab: Vocab, N: int,
                    allow_sampling: bool = False,
                    rng: Optional[np.random.Generator] = None,
                    enum_limit: int = SIGNATURE_ENUM_LIMIT,
                    samples: int = SIGNATURE_SAMPLES) -> SignatureCheck:
    """
    Check that no two N-grams have parallel signatures.

    Args:
        f: Causal query filter with N taps
        vocab: Token embeddings
        N: Gram length
        allow_sampling: Fall back to random gram pairs when |V|^N > enum_limit
        rng: Generator for the sampled check
        enum_limit: Largest |V|^N enumerated exhaustively
        samples: Number of random pairs in the sampled check

    Returns:
        SignatureCheck with method "exhaustive" or "probabilistic"

    Raises:
        TooLarge: If |V|^N exceeds enum_limit and sampling is not allowed
    """
    _check_query_filter(f, N)
    n = vocab.size ** N
    if n <= enum_limit:
        U = _normalized(signatures(f, vocab, _all_grams(vocab.size, N)))
        if U is None:
            return SignatureCheck(False, "exhaustive", n, 1.0)
        worst = _max_offdiag_cos(U) if n > 1 else -1.0
        return SignatureCheck(worst < PARALLEL_COS, "exhaustive", n, worst)

    if not allow_sampling:
        raise TooLarge(f"|V|^N = {vocab.size}^{N} exceeds the enumeration guard {enum_limit}")
    rng = rng if rng is not None else np.random.default_rng(0)
    a = rng.integers(vocab.size, size=(samples, N))
    b = rng.integers(vocab.size, size=(samples, N))
    distinct = np.any(a != b, axis=1)
    Ua = _normalized(signatures(f, vocab, a[distinct]))
    Ub = _normalized(signatures(f, vocab, b[distinct]))
    if Ua is None or Ub is None:
        return SignatureCheck(False, "probabilistic", int(distinct.sum()), 1.0)
    worst = float(np.max(np.sum(Ua * Ub, axis=1))) if distinct.any() else -1.0
    logger.info("Sampled signature check over %d pairs: max cosine %.6f", int(distinct.sum()), worst)
    return SignatureCheck(worst < PARALLEL_COS, "probabilistic", int(distinct.sum()), worst)


def check_signature_uniqueness(f: Filter, vocab: Vocab, N: int, **kwargs) -> bool:
    """True iff every pair of distinct N-grams has non-parallel signatures."""
    return signature_check(f, vocab, N, **kwargs).unique


def require_unique_signatures(f: Filter, vocab: Vocab, N: int):
    """
    Raises:
        SignatureNotUnique: If two N-grams share a signature direction
    """
    result = signature_check(f, vocab, N, allow_sampling=True)
    if not result.unique:
        raise SignatureNotUnique(
            f"Filter {list(f.taps)} gives parallel signatures for two {N}-grams "
            f"(max cosine {result.max_cosine:.12f}, {result.method} check)")


def signature_gap(f: Filter, vocab: Vocab, N: int, block: int = 128) -> float:
    """
    Score gap of the normalized recall constructions.

    1 - max(0, max cosine) between a full N-gram signature and any other
    window signature a key row can carry: a different full N-gram, or a
    zero-padded prefix window whose token set differs from the gram's.

    Raises:
        TooLarge: If the enumeration exceeds the guard
    """
    _check_query_filter(f, N)
    n_full = vocab.size ** N
    n_prefix = sum(vocab.size ** j for j in range(1, N))
    if n_full + n_prefix > SIGNATURE_ENUM_LIMIT:
        raise TooLarge(f"Signature gap needs {n_full + n_prefix} signatures, guard is {SIGNATURE_ENUM_LIMIT}")

    full = _all_grams(vocab.size, N)
    U = _normalized(signatures(f, vocab, full))
    if U is None:
        return 0.0
    set_ids = {}
    full_sets = np.array([set_ids.setdefault(frozenset(g), len(set_ids)) for g in full.tolist()])

    others = [U]
    other_sets = [np.full(n_full, -1)]
    for j in range(1, N):
        prefixes = _all_grams(vocab.size, j)
        # prefix window of length j sees taps F_0 .. F_{j-1}
        P = _normalized(signatures(Filter.causal(f.taps[:j]), vocab, prefixes))
        if P is None:
            continue
        others.append(P)
        other_sets.append(np.array([set_ids.get(frozenset(g), -2) for g in prefixes.tolist()]))
    O = np.vstack(others)
    O_sets = np.concatenate(other_sets)

    worst = 0.0
    for rows in _blocks(n_full, block):
        G = U[rows] @ O.T
        idx = np.arange(rows.start, rows.stop)
        G[idx - rows.start, idx] = -np.inf
        same_set = full_sets[rows][:, None] == O_sets[None, :]
        G[same_set & (np.arange(O.shape[0]) >= n_full)[None, :]] = -np.inf
        worst = max(worst, float(G.max()))
    return float(np.clip(1.0 - worst, 0.0, 1.0))


def temperature_for(L: int, eps: float, gap: float) -> float:
    """c = log(2L / eps) / gap."""
    if gap <= 0:
        raise SignatureNotUnique("Signature gap is zero; no finite temperature separates the grams")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1) (got {eps})")
    return float(np.log(2 * L / eps) / gap)


# ---------------------------------------------------------------------------
# Recall models
# ---------------------------------------------------------------------------

def _qk_weights(temp: AttnMode, d: int) -> Tuple[np.ndarray, AttnMode]:
    if isinstance(temp, Soft):
        return np.sqrt(temp.c) * np.eye(d), Soft(1.0)
    return np.eye(d), Hard()


def build_nar_value_delay(f_q: Filter, d: int, temp: AttnMode = Hard(),
                          vocab: Optional[Vocab] = None) -> CatModel:
    """
    Value-delay N-gram recall: F_k = F_q, F_v = D_-1, W_v = 2I.

    The planted occurrence and the query itself both score highest; the
    query's own value row is zero past the sequence end, so the split 1/2-1/2
    yields exactly the successor embedding.

    Args:
        f_q: Causal query filter, one tap per gram position
        d: Embedding dimension
        temp: Hard() or Soft(c)
        vocab: When given, signature uniqueness is checked first

    Raises:
        SignatureNotUnique: If vocab is given and f_q does not separate N-grams
    """
    if vocab is not None:
        require_unique_signatures(f_q, vocab, len(f_q.taps))
    w, mode = _qk_weights(temp, d)
    return CatModel(f_k=f_q, f_q=f_q, f_v=Filter.delay(-1),
                    w_k=w, w_q=w, w_v=2.0 * np.eye(d),
                    normalize_k=True, normalize_q=True, normalize_v=False,
                    attn_mode=mode)


def build_nar_key_delay(f_q: Filter, d: int, temp: AttnMode = Hard(),
                        vocab: Optional[Vocab] = None, causal_mask: bool = False) -> CatModel:
    """
    Key-delay N-gram recall: F_k = D_1 * F_q, F_v = D_0, W_v = I.

    With causal_mask set the same model answers every query of a multi-query
    instance in one pass.
    """
    if vocab is not None:
        require_unique_signatures(f_q, vocab, len(f_q.taps))
    w, mode = _qk_weights(temp, d)
    return CatModel(f_k=Filter.delay(1).compose(f_q), f_q=f_q, f_v=Filter.delay(0),
                    w_k=w, w_q=w, w_v=np.eye(d),
                    normalize_k=True, normalize_q=True, normalize_v=False,
                    attn_mode=mode, causal_mask=causal_mask)


def build_ar_1d(d: int, temp: AttnMode = Hard(), causal_mask: bool = False) -> CatModel:
    """Plain recall with one-tap filters: F_k = D_1, F_q = F_v = D_0."""
    w, mode = _qk_weights(temp, d)
    return CatModel(f_k=Filter.delay(1), f_q=Filter.delay(0), f_v=Filter.delay(0),
                    w_k=w, w_q=w, w_v=np.eye(d), attn_mode=mode, causal_mask=causal_mask)


# ---------------------------------------------------------------------------
# Suite evaluation
# ---------------------------------------------------------------------------

@dataclass
class SuiteResult:
    """Accuracy of a recall model on a suite, plus the worst output deviation."""

    n_instances: int
    n_queries: int
    correct: int
    max_deviation: float
    failed_seeds: List[int] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.correct / self.n_queries if self.n_queries else 1.0

    def merge(self, other: 'SuiteResult') -> 'SuiteResult':
        return SuiteResult(self.n_instances + other.n_instances, self.n_queries + other.n_queries,
                           self.correct + other.correct, max(self.max_deviation, other.max_deviation),
                           self.failed_seeds + other.failed_seeds)

    def to_dict(self) -> dict:
        return {"n_instances": self.n_instances, "n_queries": self.n_queries,
                "accuracy": self.accuracy, "max_deviation": self.max_deviation,
                "failed_seeds": self.failed_seeds[:20]}


def predict(model: CatModel, inst: TaskInstance, vocab: Vocab) -> Tuple[List[int], List[np.ndarray]]:
    """
    Decoded answer and raw output vector for every query of a recall instance.

    Multi-query instances need a causally masked model; a query whose best
    key scores below its own squared norm is answered NO_MATCH.
    """
    x = vocab.embed(inst.tokens)
    if not inst.is_multi_query:
        out = cat_forward(x, model, inst.queries[0][0])
        return [nearest_token(out, vocab)], [out]
    if not model.causal_mask:
        raise ValueError("Multi-query evaluation needs a causally masked model")
    K, Q, V = project_all(x, model)
    preds, outs = [], []
    for p, _ in inst.queries:
        q = Q[p]
        scores = K[:p + 1] @ q
        weights = attention_weights(scores, model.attn_mode)
        out = V[:p + 1].T @ weights
        matched = scores.max() >= (1.0 - MATCH_TOL) * float(q @ q)
        preds.append(nearest_token(out, vocab) if matched else NO_MATCH)
        outs.append(out)
    return preds, outs


def _evaluate_chunk(model: CatModel, instances: Sequence[TaskInstance], vocab: Vocab) -> SuiteResult:
    result = SuiteResult(0, 0, 0, 0.0)
    for inst in instances:
        preds, outs = predict(model, inst, vocab)
        correct, deviation = 0, 0.0
        for pred, out, answer in zip(preds, outs, inst.answers):
            correct += int(pred == answer)
            if answer != NO_MATCH:
                deviation = max(deviation, float(np.linalg.norm(out - vocab.embeddings[answer])))
        failed = [inst.seed] if correct < len(inst.answers) else []
        result = result.merge(SuiteResult(1, len(inst.answers), correct, deviation, failed))
    return result


def evaluate_suite(model: CatModel, instances: Sequence[TaskInstance], vocab: Vocab,
                   jobs: int = 1, chunk_size: int = 250) -> SuiteResult:
    """Exact-match accuracy and max ||output - answer embedding|| over a suite."""
    chunks = [instances[s:s + chunk_size] for s in range(0, len(instances), chunk_size)]
    if jobs == 1 or len(chunks) <= 1:
        parts = [_evaluate_chunk(model, c, vocab) for c in chunks]
    else:
        parts = Parallel(n_jobs=jobs)(delayed(_evaluate_chunk)(model, c, vocab) for c in chunks)
    result = SuiteResult(0, 0, 0, 0.0)
    for part in parts:
        result = result.merge(part)
    logger.debug("Suite of %d instances: accuracy %.4f, max deviation %.3e",
                 result.n_instances, result.accuracy, result.max_deviation)
    return result


# ---------------------------------------------------------------------------
# Selective copying
# ---------------------------------------------------------------------------

INFINITE = 'infinite'
WINDOW = 'window'


@dataclass(frozen=True, eq=False)
class ScModel:
    """
    Selective-copy model over token embeddings [x', s, p].

    x' is one-hot over signals, the noise subspace and ⊥; s flags signals and
    ⊥; p = i/T is present only in the window variant. Attention scores are
    Z W z* with z* the decayed sum of the context (infinite variant) or the
    causal convolution of Z with taps rho^i, 0 <= i < window (window variant).
    """

    signal_size: int
    T: int
    variant: str = INFINITE
    n_noise_dims: int = 1
    n_noise_types: int = 1
    window: int = 0
    rho: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    theta: float = 1.0
    gamma: Optional[float] = None
    w: np.ndarray = field(default=None)

    @property
    def base_dim(self) -> int:
        return self.signal_size + self.n_noise_dims + 1

    @property
    def d(self) -> int:
        return self.base_dim + (2 if self.variant == WINDOW else 1)

    @property
    def bot(self) -> int:
        return sc_token_ids(self.signal_size, self.n_noise_types)[2]

    @property
    def attn_mode(self) -> AttnMode:
        return Soft(self.gamma) if self.gamma is not None else Hard()

    def base_vocab(self) -> Vocab:
        """Base embeddings x' indexed by token id (signals, noise types, ⊥)."""
        n_tokens = self.signal_size + self.n_noise_types + 1
        E = np.zeros((n_tokens, self.base_dim))
        for t in range(self.signal_size):
            E[t, t] = 1.0
        for k in range(self.n_noise_types):
            E[self.signal_size + k, self.signal_size + k % self.n_noise_dims] = 1.0
        E[-1, self.base_dim - 1] = 1.0
        return Vocab(E)

    def embed(self, tokens: Sequence[int], base: Optional[Vocab] = None) -> np.ndarray:
        base = base if base is not None else self.base_vocab()
        tokens = np.asarray(tokens, dtype=np.int64)
        Z = np.zeros((len(tokens), self.d))
        Z[:, :self.base_dim] = base.embeddings[tokens]
        Z[:, self.base_dim] = (tokens < self.signal_size) | (tokens == self.bot)
        if self.variant == WINDOW:
            Z[:, self.base_dim + 1] = np.arange(len(tokens)) / self.T
        return Z

    def to_dict(self) -> dict:
        return {"type": "selective_copy", "signal_size": self.signal_size, "T": self.T,
                "variant": self.variant, "n_noise_dims": self.n_noise_dims,
                "n_noise_types": self.n_noise_types, "window": self.window, "rho": self.rho,
                "alpha": self.alpha, "beta": self.beta, "theta": self.theta,
                "gamma": self.gamma, "w": self.w.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> 'ScModel':
        fields_ = {k: v for k, v in data.items() if k != "type"}
        fields_["w"] = np.asarray(fields_["w"], dtype=np.float64)
        return cls(**fields_)


def build_sc_model(signal_size: int, T: int, variant: str = INFINITE, n_noise_dims: int = 1,
                   n_noise_types: int = 1, window: Optional[int] = None,
                   gamma: Optional[float] = None) -> ScModel:
    """
    Selective-copy construction with rho = 2^(-1/T), theta = 1, alpha = 8T
    (8T * window for the window variant), beta = 8T alpha and
    W = diag(-alpha I, beta[, -theta]).

    In the window variant the penalty gap between two window offsets,
    alpha rho^W (1 - rho), must exceed the position term theta p* dp <= window;
    with window <= T that holds for alpha = 8T * window.

    Args:
        signal_size: Number of signal token types |S|
        T: Longest context the model decodes in (prompt + ⊥ + outputs)
        variant: "infinite" (no position, untruncated filter) or "window"
        n_noise_dims: Dimension of the noise subspace
        n_noise_types: Number of noise token ids
        window: Query filter length for the window variant (at least the
            largest number of signals per prompt); defaults to T
        gamma: Soft-attention global scale; None decodes in Hard mode
    """
    if signal_size < 1:
        raise ValueError("Selective copying needs at least one signal token")
    if T < 3:
        raise ValueError(f"T must be >= 3 (got {T})")
    if variant not in (INFINITE, WINDOW):
        raise ValueError(f"Unknown selective-copy variant: {variant}")
    if n_noise_dims < 1 or n_noise_types < 1:
        raise ValueError("Noise subspace and noise vocabulary must be nonempty")
    window = (window or T) if variant == WINDOW else 0
    if window > T:
        raise ValueError(f"Query window must not exceed T (got window={window}, T={T})")
    theta = 1.0
    alpha = 8.0 * T * max(window, 1)
    beta = 8.0 * T * alpha
    base_dim = signal_size + n_noise_dims + 1
    diag = [-alpha] * base_dim + [beta] + ([-theta] if variant == WINDOW else [])
    model = ScModel(signal_size=signal_size, T=T, variant=variant, n_noise_dims=n_noise_dims,
                    n_noise_types=n_noise_types, window=window, rho=2.0 ** (-1.0 / T),
                    alpha=alpha, beta=beta, theta=theta, gamma=gamma, w=np.diag(diag))
    logger.debug("Built %s selective-copy model: d=%d, T=%d", variant, model.d, T)
    return model


def _query_state(Z: np.ndarray, m: ScModel) -> np.ndarray:
    if m.variant == INFINITE:
        # running recurrence z*_t = rho z*_{t-1} + z_t
        return lfilter([1.0], [1.0, -m.rho], Z, axis=0)[-1]
    # causal filter F_i = rho^i for 0 <= i < window
    return convolve(Z, Filter.exp_decay(m.rho, m.window))[-1]


def decode_sc(m: ScModel, inst: TaskInstance) -> List[int]:
    """
    Autoregressively decode after the prompt [X ⊥].

    Decoding stops when the model emits ⊥ or a token it already emitted.

    Raises:
        NonTermination: If no stop occurs within T steps
    """
    base = m.base_vocab()
    tokens = list(inst.tokens)
    if tokens[-1] != m.bot:
        raise ValueError("Selective-copy prompt must end with ⊥")
    Z = m.embed(tokens, base)
    emitted: List[int] = []
    for _ in range(m.T):
        z_star = _query_state(Z, m)
        scores = Z @ (m.w @ z_star)
        out = Z.T @ attention_weights(scores, m.attn_mode)
        token = nearest_token(out[:m.base_dim], base)
        if token == m.bot or token in emitted:
            return emitted
        emitted.append(token)
        tokens.append(token)
        Z = m.embed(tokens, base)
    raise NonTermination(f"Selective-copy decoding did not stop within T={m.T} steps")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_dict(model) -> dict:
    if isinstance(model, ScModel):
        return model.to_dict()
    return {"type": "cat", **model.to_dict()}


def model_from_dict(data: dict):
    kind = data.get("type", "cat")
    if kind == "selective_copy":
        return ScModel.from_dict(data)
    if kind == "cat":
        return CatModel.from_dict({k: v for k, v in data.items() if k != "type"})
    raise ValueError(f"Unknown model type: {kind}")

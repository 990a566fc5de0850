"""
Landmark CAT: hard retrieval over block landmarks, then dense local attention.

Keys are summarized per block of B tokens (block sums, or an exponentially
smoothed prefix sampled at block ends). A query first picks the non-final
block whose landmark scores highest, then attends in Hard mode over the raw
tokens of that block and of its own final block. Values are 2 X * D_-1, so
when the planted copy and the query tie at 1/2 each the output is exactly the
token after the planted copy.

Random Context Model: the query is the unit vector e_0 and occurs twice (at
the end and at a planted position outside the final block); every other
token has i.i.d. N(0, sigma^2 / d) entries.

Reduced mode samples only the scalars the decision depends on (correlations
of landmarks and local tokens with the query). Its draws do not depend on d,
so with a fixed seed a trial that succeeds at d also succeeds at every larger
d.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.signal import lfilter
from scipy.stats import norm

from src.core.errors import InfeasibleSpec
from src.core.numerics import AttnMode, Hard, attention_weights
from src.core.tasks import derive_seed

logger = logging.getLogger(__name__)

BLOCK_MEAN = 'block_mean'
EXP_SMOOTHING = 'exp_smoothing'
FULL = 'full'
REDUCED = 'reduced'

FULL_MODE_MAX_L = 2 ** 16
VALUE_TOL = 1e-6


@dataclass(frozen=True)
class LcatConfig:
    """One Landmark-CAT experiment point."""

    L: int
    B: int
    d: int
    sigma2: float = 1.0
    filter_kind: str = BLOCK_MEAN
    rho: Optional[float] = None
    sim_mode: str = REDUCED
    local_mode: AttnMode = field(default_factory=Hard)

    def __post_init__(self):
        if self.B < 1 or self.d < 1 or self.L < 2:
            raise InfeasibleSpec(f"Need L >= 2, B >= 1, d >= 1 (got L={self.L}, B={self.B}, d={self.d})")
        if self.n_blocks < 2:
            raise InfeasibleSpec(f"B={self.B} leaves fewer than two blocks for L={self.L}")
        if not self.sigma2 > 0:
            raise InfeasibleSpec("sigma2 must be positive")
        if self.filter_kind not in (BLOCK_MEAN, EXP_SMOOTHING):
            raise InfeasibleSpec(f"Unknown filter kind: {self.filter_kind}")
        if self.sim_mode not in (FULL, REDUCED):
            raise InfeasibleSpec(f"Unknown simulation mode: {self.sim_mode}")
        if self.rho is not None and not 0 < self.rho < 1:
            raise InfeasibleSpec(f"rho must lie in (0, 1) (got {self.rho})")

    @property
    def n_blocks(self) -> int:
        return -(-self.L // self.B)

    @property
    def final_block_size(self) -> int:
        return self.L - (self.n_blocks - 1) * self.B

    @property
    def decay(self) -> float:
        """Exponential-smoothing rate; defaults to e^(-1/B)."""
        return self.rho if self.rho is not None else math.exp(-1.0 / self.B)

    @property
    def noise_scale(self) -> float:
        return math.sqrt(self.sigma2 / self.d)

    def with_d(self, d: int) -> 'LcatConfig':
        return replace(self, d=int(d))

    def to_dict(self) -> dict:
        return {"L": self.L, "B": self.B, "d": self.d, "sigma2": self.sigma2,
                "filter_kind": self.filter_kind, "rho": self.decay if self.filter_kind == EXP_SMOOTHING else None,
                "sim_mode": self.sim_mode, "local_mode": self.local_mode.to_dict()}


@dataclass
class TrialOutcome:
    block_correct: bool
    value_correct: bool
    seed: int
    planted: int = -1
    retrieved: int = -1
    ops: int = 0


# ---------------------------------------------------------------------------
# Random context
# ---------------------------------------------------------------------------

def _query(d: int) -> np.ndarray:
    q = np.zeros(d)
    q[0] = 1.0
    return q


def _sample_planted(cfg: LcatConfig, rng: np.random.Generator) -> int:
    if cfg.L < 3:
        raise InfeasibleSpec(f"L={cfg.L} is too short to plant a copy before the query")
    # uniform over positions of non-final blocks, never directly before the query
    last = min((cfg.n_blocks - 1) * cfg.B - 1, cfg.L - 3)
    return int(rng.integers(last + 1))


def sample_random_context(cfg: LcatConfig, seed: int) -> Tuple[np.ndarray, int, int]:
    """
    Materialize one context.

    Returns:
        (X of shape (L, d), query position L-1, planted position)
    """
    rng = np.random.default_rng(seed)
    p = _sample_planted(cfg, rng)
    X = cfg.noise_scale * rng.standard_normal((cfg.L, cfg.d))
    q = _query(cfg.d)
    X[p] = q
    X[cfg.L - 1] = q
    logger.debug("Context L=%d d=%d planted at %d (block %d)", cfg.L, cfg.d, p, p // cfg.B)
    return X, cfg.L - 1, p


def _block_ends(cfg: LcatConfig) -> np.ndarray:
    return np.minimum(np.arange(1, cfg.n_blocks + 1) * cfg.B, cfg.L) - 1


def build_landmarks(x, cfg: LcatConfig) -> np.ndarray:
    """
    One landmark per block, shape (ceil(L/B), d).

    block_mean: sum of the block's tokens (all-ones key filter of width B
    sampled at block ends). exp_smoothing: the smoothed prefix
    k_t = rho k_{t-1} + x_t sampled at block ends.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != cfg.L:
        raise ValueError(f"Expected a ({cfg.L}, d) context, got shape {x.shape}")
    if cfg.filter_kind == BLOCK_MEAN:
        starts = np.arange(cfg.n_blocks) * cfg.B
        return np.add.reduceat(x, starts, axis=0)
    smoothed = lfilter([1.0], [1.0, -cfg.decay], x, axis=0)
    return smoothed[_block_ends(cfg)]


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def _local_positions(cfg: LcatConfig, block: int) -> np.ndarray:
    final_start = (cfg.n_blocks - 1) * cfg.B
    retrieved = np.arange(block * cfg.B, min((block + 1) * cfg.B, cfg.L))
    return np.concatenate([retrieved, np.arange(final_start, cfg.L)])


def op_count(cfg: LcatConfig) -> int:
    """Multiply-accumulates for one query: landmark scores plus local scores and values."""
    n_local = cfg.B + cfg.final_block_size
    return (cfg.n_blocks - 1) * cfg.d + 2 * n_local * cfg.d


def _full_trial(cfg: LcatConfig, seed: int) -> TrialOutcome:
    X, query_pos, p = sample_random_context(cfg, seed)
    q = X[query_pos]
    ops = 0

    landmark_scores = build_landmarks(X, cfg)[:cfg.n_blocks - 1] @ q
    ops += (cfg.n_blocks - 1) * cfg.d
    b = int(np.argmax(landmark_scores))

    pos = _local_positions(cfg, b)
    scores = X[pos] @ q
    values = np.zeros((len(pos), cfg.d))
    ahead = pos + 1 < cfg.L
    values[ahead] = 2.0 * X[pos[ahead] + 1]
    out = values.T @ attention_weights(scores, cfg.local_mode)
    ops += 2 * len(pos) * cfg.d

    block_correct = b == p // cfg.B
    value_correct = bool(np.linalg.norm(out - X[p + 1]) <= VALUE_TOL)
    return TrialOutcome(block_correct, value_correct, seed, p, b, ops)


def _max_gaussian(rng: np.random.Generator, n: int) -> float:
    """A draw of the maximum of n i.i.d. standard normals (inverse CDF of the max)."""
    if n < 1:
        return -math.inf
    u = max(rng.random(), 1e-300)
    return float(norm.isf(-math.expm1(math.log(u) / n)))


def _reduced_trial(cfg: LcatConfig, seed: int) -> TrialOutcome:
    rng = np.random.default_rng(seed)
    p = _sample_planted(cfg, rng)
    beta, offset = divmod(p, cfg.B)
    n = cfg.n_blocks - 1
    s = cfg.noise_scale

    # query correlations of the other tokens in the planted block and the final block
    planted_noise = rng.standard_normal(cfg.B - 1)
    final_noise = rng.standard_normal(cfg.final_block_size - 1)

    if cfg.filter_kind == BLOCK_MEAN:
        g_beta = 1.0 + s * planted_noise.sum()
        noise_max = s * math.sqrt(cfg.B) * _max_gaussian(rng, n - 1)
        block_correct = g_beta > noise_max
        b = beta if block_correct else -1
    else:
        weights = cfg.decay ** np.arange(cfg.B - 1, -1, -1)
        others = np.delete(weights, offset)
        innovations = s * math.sqrt(float(weights @ weights)) * rng.standard_normal(n)
        innovations[beta] = weights[offset] + s * float(others @ planted_noise)
        g = lfilter([1.0], [1.0, -cfg.decay ** cfg.B], innovations)
        b = int(np.argmax(g))
        block_correct = b == beta

    local = np.concatenate([planted_noise, final_noise])
    local_max = s * local.max() if local.size else -math.inf
    value_correct = bool(block_correct and local_max < 1.0)
    return TrialOutcome(bool(block_correct), value_correct, seed, p, b, op_count(cfg))


def run_trial(cfg: LcatConfig, seed: int) -> TrialOutcome:
    """
    One Random Context Model trial.

    Full mode materializes the context and runs both attention stages; it is
    limited to L <= 2^16. Reduced mode samples the sufficient statistics.
    """
    if cfg.sim_mode == FULL:
        if cfg.L > FULL_MODE_MAX_L:
            raise InfeasibleSpec(f"Full mode is limited to L <= {FULL_MODE_MAX_L}")
        return _full_trial(cfg, seed)
    return _reduced_trial(cfg, seed)


# ---------------------------------------------------------------------------
# Success rates
# ---------------------------------------------------------------------------

@dataclass
class RateEstimate:
    successes: int
    block_successes: int
    trials: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def block_rate(self) -> float:
        return self.block_successes / self.trials if self.trials else 0.0

    @property
    def stderr(self) -> float:
        r = self.rate
        return math.sqrt(r * (1 - r) / self.trials) if self.trials else 0.0

    def merge(self, other: 'RateEstimate') -> 'RateEstimate':
        return RateEstimate(self.successes + other.successes,
                            self.block_successes + other.block_successes,
                            self.trials + other.trials)


def _rate_chunk(cfg: LcatConfig, seed: int, start: int, stop: int) -> RateEstimate:
    wins = blocks = 0
    for k in range(start, stop):
        outcome = run_trial(cfg, derive_seed(seed, k))
        wins += outcome.value_correct
        blocks += outcome.block_correct
    return RateEstimate(wins, blocks, stop - start)


def _run_chunks(fn, args: tuple, trials: int, jobs: int, chunk_size: int) -> RateEstimate:
    bounds = [(s, min(s + chunk_size, trials)) for s in range(0, trials, chunk_size)]
    if jobs == 1 or len(bounds) <= 1:
        parts = [fn(*args, s, e) for s, e in bounds]
    else:
        parts = Parallel(n_jobs=jobs)(delayed(fn)(*args, s, e) for s, e in bounds)
    total = RateEstimate(0, 0, 0)
    for part in parts:
        total = total.merge(part)
    return total


def success_rate(cfg: LcatConfig, trials: int, seed: int = 0, jobs: int = 1,
                 chunk_size: int = 250) -> RateEstimate:
    """
    Fraction of trials that retrieve the value token.

    Trial k uses derive_seed(seed, k), so the counts do not depend on jobs or
    chunk_size.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return _run_chunks(_rate_chunk, (cfg, seed), trials, jobs, chunk_size)


# ---------------------------------------------------------------------------
# Uniform queries over a subspace
# ---------------------------------------------------------------------------

def _uniform_context(cfg: LcatConfig, r: int, M: int, seed: int) -> bool:
    rng = np.random.default_rng(seed)
    X = cfg.noise_scale * rng.standard_normal((cfg.L, cfg.d))
    base = build_landmarks(X, cfg)[:cfg.n_blocks - 1]
    ends = _block_ends(cfg)[:cfg.n_blocks - 1]

    # query k draws only after query k-1, so the first M' < M queries are shared
    for _ in range(M):
        if r == 0:
            q = _query(cfg.d)
        else:
            coords = rng.standard_normal(r)
            q = np.zeros(cfg.d)
            q[:r] = coords / np.linalg.norm(coords)
        p = _sample_planted(cfg, rng)
        beta = p // cfg.B
        delta = q - X[p]
        if cfg.filter_kind == BLOCK_MEAN:
            coef = (np.arange(cfg.n_blocks - 1) == beta).astype(float)
        else:
            coef = np.where(ends >= p, cfg.decay ** np.maximum(ends - p, 0), 0.0)
        b = int(np.argmax(base @ q + coef * float(delta @ q)))
        if b != beta:
            return False

        pos = _local_positions(cfg, b)
        keys = X[pos].copy()
        keys[pos == p] = q
        keys[pos == cfg.L - 1] = q
        nxt = pos + 1
        values = np.zeros((len(pos), cfg.d))
        ahead = nxt < cfg.L
        values[ahead] = 2.0 * X[nxt[ahead]]
        values[nxt == p] = 2.0 * q
        out = values.T @ attention_weights(keys @ q, cfg.local_mode)
        if np.linalg.norm(out - X[p + 1]) > VALUE_TOL:
            return False
    return True


def _uniform_chunk(cfg: LcatConfig, r: int, M: int, seed: int, start: int, stop: int) -> RateEstimate:
    wins = sum(_uniform_context(cfg, r, M, derive_seed(seed, k)) for k in range(start, stop))
    return RateEstimate(wins, wins, stop - start)


def uniform_query_rate(cfg: LcatConfig, r: int, M: int = 64, trials: int = 100, seed: int = 0,
                       jobs: int = 1, chunk_size: int = 25) -> RateEstimate:
    """
    Fraction of contexts in which M queries drawn from an r-dimensional
    subspace all succeed, each with its own planted copy in a shared noise
    context. r = 0 means the single fixed query e_0.

    All-M success lower-bounds the failure probability of uniform recall over
    the subspace. Runs on materialized contexts regardless of sim_mode.
    """
    if r < 0 or r > cfg.d:
        raise InfeasibleSpec(f"Subspace dimension r={r} must lie in [0, d={cfg.d}]")
    if cfg.L > FULL_MODE_MAX_L:
        raise InfeasibleSpec(f"Uniform-query trials are limited to L <= {FULL_MODE_MAX_L}")
    M = 1 if r == 0 else M
    return _run_chunks(_uniform_chunk, (cfg, r, M, seed), trials, jobs, chunk_size)


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sufficient:
    """d >= 2 sigma^2 B (sqrt(log Lbar) + t)^2."""


@dataclass(frozen=True)
class Converse:
    """Failure for d <= 2 sigma^2 B (sqrt((1 - eps) log Lbar) - t)^2."""

    eps: float = 0.1


@dataclass(frozen=True)
class Uniform:
    """d >= 2 sigma^2 B (sqrt(log Lbar) + sqrt(r) + t)^2."""

    r: int = 0


@dataclass(frozen=True)
class ExpSmoothing:
    """d >= 50 sigma^2 B (sqrt(log Lbar) + t)^2."""


ThresholdKind = Union[Sufficient, Converse, Uniform, ExpSmoothing]


def theoretical_threshold(cfg: LcatConfig, t: float, kind: ThresholdKind = Sufficient()) -> int:
    """
    Embedding dimension from the recall bounds, rounded up (natural log).

    Sufficient-type kinds are clamped to at least 1; a converse whose inner
    term is negative returns 0 (no dimension is small enough).
    """
    log_lbar = math.log(cfg.n_blocks)
    B, s2 = cfg.B, cfg.sigma2
    if isinstance(kind, Converse):
        inner = math.sqrt((1 - kind.eps) * log_lbar) - t
        return 0 if inner <= 0 else int(math.ceil(2 * s2 * B * inner ** 2))
    if isinstance(kind, Uniform):
        value = 2 * s2 * B * (math.sqrt(log_lbar) + math.sqrt(kind.r) + t) ** 2
    elif isinstance(kind, ExpSmoothing):
        value = 50 * s2 * B * (math.sqrt(log_lbar) + t) ** 2
    else:
        value = 2 * s2 * B * (math.sqrt(log_lbar) + t) ** 2
    return max(1, int(math.ceil(value - 1e-9)))


# ---------------------------------------------------------------------------
# Complexity
# ---------------------------------------------------------------------------

@dataclass
class ComplexityCount:
    lcat_ops: int
    dense_ops: int
    recall_capacity: int
    required_memory: int

    @property
    def capacity_ok(self) -> bool:
        return self.recall_capacity >= self.required_memory


def complexity_count(cfg: LcatConfig) -> ComplexityCount:
    """
    Per-query multiply-accumulates of LCAT against dense attention.

    Landmark construction is shared by all queries and not counted. Retrieving
    sub-blocks hierarchically would replace the local B term by log B; that
    variant is not simulated.
    """
    return ComplexityCount(lcat_ops=op_count(cfg), dense_ops=2 * cfg.L * cfg.d,
                           recall_capacity=cfg.d * cfg.n_blocks, required_memory=cfg.L)


# ---------------------------------------------------------------------------
# Phase transition
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    B: int
    L: int
    sigma2: float
    filter_kind: str
    d_10: Optional[int]
    d_50: Optional[int]
    d_90: Optional[int]
    d_theory: int
    trials: int
    non_monotone: bool = False

    CSV_COLUMNS = ('B', 'L', 'sigma2', 'filter_kind', 'd_10', 'd_50', 'd_90', 'd_theory', 'trials')

    def csv_row(self) -> list:
        return [self.B, self.L, self.sigma2, self.filter_kind,
                self.d_10 if self.d_10 is not None else '',
                self.d_50 if self.d_50 is not None else '',
                self.d_90 if self.d_90 is not None else '',
                self.d_theory, self.trials]


@dataclass
class SweepResult:
    rows: List[SweepRow]

    def linear_fit_r2(self) -> float:
        """R^2 of a least-squares line d_50 ~ a B + c."""
        pts = [(r.B, r.d_50) for r in self.rows if r.d_50 is not None]
        if len(pts) < 3:
            return float('nan')
        x, y = np.array(pts, dtype=float).T
        A = np.vstack([x, np.ones_like(x)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        total = float(((y - y.mean()) ** 2).sum())
        return 1.0 - float(resid @ resid) / total if total > 0 else 1.0

    @property
    def non_monotone(self) -> bool:
        return any(r.non_monotone for r in self.rows)


class _RateCache:
    def __init__(self, cfg: LcatConfig, trials: int, seed: int, jobs: int):
        self.cfg, self.trials, self.seed, self.jobs = cfg, trials, seed, jobs
        self.rates = {}

    def __call__(self, d: int) -> float:
        if d not in self.rates:
            self.rates[d] = success_rate(self.cfg.with_d(d), self.trials, self.seed, self.jobs).rate
        return self.rates[d]


def _bisect_dimension(rate: _RateCache, target: float, hi: int) -> Tuple[Optional[int], bool]:
    """Smallest d with rate(d) >= target; (None, True) when no bracket is found."""
    lo = 1
    if rate(lo) >= target:
        return lo, False
    for _ in range(3):
        if rate(hi) >= target:
            break
        hi *= 4
    else:
        return None, True
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if rate(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi, False


def phase_transition(base: LcatConfig, block_sizes: Sequence[int],
                     target_rates: Sequence[float] = (0.1, 0.5, 0.9), trials: int = 1000,
                     seed: int = 0, jobs: int = 1, t: float = 0.0,
                     progress=None) -> SweepResult:
    """
    For each block size, bisect over d for the dimension reaching each target
    success rate.

    Args:
        base: Config supplying L, sigma2, filter kind and simulation mode
        block_sizes: Block sizes B to sweep
        target_rates: Success rates to locate (the 0.1/0.5/0.9 columns)
        trials: Trials per evaluated (B, d)
        seed: Sweep seed; every (B, d) reuses the same trial seeds
        jobs: Parallel workers
        t: Deviation parameter of the reported theoretical threshold
        progress: Optional callable invoked after each block size

    Returns:
        SweepResult with one row per block size
    """
    if base.L > FULL_MODE_MAX_L and base.sim_mode == FULL:
        raise InfeasibleSpec("Use reduced mode for L > 2^16")
    theory_kind = ExpSmoothing() if base.filter_kind == EXP_SMOOTHING else Sufficient()
    rows = []
    for B in block_sizes:
        cfg = replace(base, B=int(B), d=1)
        rate = _RateCache(cfg, trials, seed, jobs)
        start = max(2, theoretical_threshold(cfg, 2.0, theory_kind))
        found, flagged = {}, False
        for target in sorted(target_rates):
            found[target], bad = _bisect_dimension(rate, target, start)
            flagged |= bad
        ordered = [found[t] for t in sorted(target_rates) if found[t] is not None]
        if any(a > b for a, b in zip(ordered, ordered[1:])):
            flagged = True
        if flagged:
            logger.warning("Non-monotone success curve at B=%d", B)
        d_theory = theoretical_threshold(cfg, t, theory_kind)
        row = SweepRow(B=int(B), L=cfg.L, sigma2=cfg.sigma2, filter_kind=cfg.filter_kind,
                       d_10=found.get(0.1), d_50=found.get(0.5), d_90=found.get(0.9),
                       d_theory=d_theory, trials=trials, non_monotone=flagged)
        logger.info("B=%d: d_10=%s d_50=%s d_90=%s d_theory=%d", B, row.d_10, row.d_50, row.d_90, d_theory)
        rows.append(row)
        if progress is not None:
            progress()
    return SweepResult(rows)


# ---------------------------------------------------------------------------
# Mode equivalence
# ---------------------------------------------------------------------------

@dataclass
class ModeComparison:
    cfg: LcatConfig
    full: RateEstimate
    reduced: RateEstimate
    z: float
    p_value: float

    @property
    def passes(self) -> bool:
        return self.p_value > 0.01


def two_proportion_z(a: RateEstimate, b: RateEstimate) -> Tuple[float, float]:
    """Pooled two-proportion z statistic and its two-sided p-value."""
    pooled = (a.successes + b.successes) / (a.trials + b.trials)
    if pooled in (0.0, 1.0):
        return 0.0, 1.0
    se = math.sqrt(pooled * (1 - pooled) * (1 / a.trials + 1 / b.trials))
    z = (a.rate - b.rate) / se
    return z, float(2 * norm.sf(abs(z)))


def mode_equivalence(configs: Sequence[LcatConfig], trials: int, seed: int = 0,
                     jobs: int = 1) -> List[ModeComparison]:
    """Compare Full and Reduced success rates at each config with independent seeds."""
    results = []
    for i, cfg in enumerate(configs):
        full = success_rate(replace(cfg, sim_mode=FULL), trials, derive_seed(seed, 2 * i), jobs)
        reduced = success_rate(replace(cfg, sim_mode=REDUCED), trials, derive_seed(seed, 2 * i + 1), jobs)
        z, p = two_proportion_z(full, reduced)
        results.append(ModeComparison(cfg, full, reduced, z, p))
        logger.info("L=%d B=%d d=%d: full %.4f reduced %.4f p=%.3f",
                    cfg.L, cfg.B, cfg.d, full.rate, reduced.rate, p)
    return results

"""
Length-generalization audit for single-layer recall models.

A model of the audited form computes f(X) = V^T attention(X W x_{L-1}) with
identity key/query filters, W = W_k W_q^T and value stream g * (X * F_v) for
a nonnegative, possibly two-sided F_v. The audit measures its recall error at
one length and checks the certified consequences: the value filter stays near
(2/g) D_-1, the attention map stays near the golden map, and the error grows
at most linearly with the test length.

Audit suites never place the earlier occurrence directly before the query;
there the answer is the query token itself and a model that retrieves the key
instead of the value would look correct.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.core.cat_layer import CatModel, cat_forward_with_map
from src.core.constructions import build_nar_value_delay, signature_gap, temperature_for
from src.core.errors import DegenerateVocab, StructureViolation
from src.core.numerics import (
    Filter,
    Soft,
    Vocab,
    gram_schmidt_delta,
    min_embedding_distance,
    nearest_token,
)
from src.core.tasks import TaskInstance, derive_seed, gen_ar

logger = logging.getLogger(__name__)

# Regime gate on epsilon0 used by the adversarial-sequence argument.
R0 = 1.0 / 8.0

FAMILY = ('exact', 'perturbed', 'corrupted', 'soft')


# ---------------------------------------------------------------------------
# Golden map
# ---------------------------------------------------------------------------

@dataclass
class GoldenMap:
    """Attention map with mass 1/2 on each occurrence of the query token."""

    weights: np.ndarray

    def l1_distance(self, attention: np.ndarray) -> float:
        return float(np.abs(np.asarray(attention) - self.weights).sum())


def golden_map(tokens: Sequence[int], query_index: Optional[int] = None) -> GoldenMap:
    """
    Raises:
        ValueError: If the query token does not occur exactly twice
    """
    tokens = np.asarray(tokens)
    query_index = len(tokens) - 1 if query_index is None else query_index
    hits = tokens[:query_index + 1] == tokens[query_index]
    if hits.sum() != 2:
        raise ValueError(f"Golden map needs exactly two query occurrences, found {int(hits.sum())}")
    weights = np.zeros(len(tokens))
    weights[hits] = 0.5
    return GoldenMap(weights)


def golden_map_distance(m: CatModel, x: TaskInstance, vocab: Vocab) -> float:
    """l1 distance between the model's final-position attention map and the golden map."""
    _, weights = cat_forward_with_map(vocab.embed(x.tokens), m, x.L - 1)
    return golden_map(x.tokens).l1_distance(weights)


# ---------------------------------------------------------------------------
# Model form
# ---------------------------------------------------------------------------

def check_audited_form(m: CatModel) -> float:
    """
    Verify the audited form and return the value gain g (W_v = g I).

    Raises:
        StructureViolation: If the filters, value weights or flags do not match
    """
    identity = Filter.delay(0)
    problems = []
    if m.f_k.l1_distance(identity) != 0.0 or m.f_q.l1_distance(identity) != 0.0:
        problems.append("key and query filters must both be D_0")
    if any(t < 0 for t in m.f_v.taps):
        problems.append(f"value filter has negative taps {list(m.f_v.taps)}")
    if m.normalize_v:
        problems.append("value stream must not be normalized")
    if m.causal_mask:
        problems.append("audited models attend over the full sequence")
    g = float(m.w_v[0, 0])
    if not g > 0 or not np.allclose(m.w_v, g * np.eye(m.d), rtol=0, atol=1e-12):
        problems.append("W_v must be a positive multiple of the identity")
    if problems:
        raise StructureViolation("; ".join(problems))
    return g


def filter_l1_to_delay(m: CatModel) -> float:
    """||(g/2) F_v - D_-1||_1 for a model of the audited form."""
    g = check_audited_form(m)
    return m.f_v.scaled(g / 2.0).l1_distance(Filter.delay(-1))


def build_family_member(kind: str, vocab: Vocab, L: int = 128, eta: float = 0.0,
                        epsilon: float = 1e-3) -> CatModel:
    """
    One model of the audited family.

    exact:      F_v = D_-1, W_v = 2I, Hard
    perturbed:  F_v = D_-1 + eta D_0, W_v = 2I, Hard
    corrupted:  F_v = D_0, W_v = I (retrieves the key, not the value)
    soft:       exact filters with Soft(c), c = log(2L/epsilon) / gap
    """
    d = vocab.dim
    exact = build_nar_value_delay(Filter.delay(0), d)
    if kind == 'exact':
        return exact
    if kind == 'perturbed':
        return exact.with_changes(f_v=Filter((1.0, eta), t_min=-1))
    if kind == 'corrupted':
        return exact.with_changes(f_v=Filter.delay(0), w_v=np.eye(d))
    if kind == 'soft':
        c = temperature_for(L, epsilon, signature_gap(Filter.delay(0), vocab, 1))
        return build_nar_value_delay(Filter.delay(0), d, temp=Soft(c))
    raise ValueError(f"Unknown family member: {kind} (expected one of {', '.join(FAMILY)})")


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def adversarial_family(q: int, v: int, L: int) -> List[TaskInstance]:
    """
    Sequences with q at position i and at the end, v everywhere else.

    i runs over 0 .. L-3, so the answer is always v.
    """
    if q == v:
        raise ValueError("Query and filler tokens must differ")
    if L < 3:
        raise ValueError(f"L must be >= 3 (got {L})")
    family = []
    for i in range(L - 2):
        tokens = [v] * L
        tokens[i] = q
        tokens[L - 1] = q
        family.append(TaskInstance(kind='AR', tokens=tokens, queries=[(L - 1, 1)], answers=[v]))
    return family


def _adversarial_suite(vocab: Vocab, L: int, seed: int, n_pairs: int,
                       max_positions: int) -> List[TaskInstance]:
    rng = np.random.default_rng(derive_seed(seed, L))
    pairs = [(0, 1)]
    while len(pairs) < min(n_pairs, vocab.size * (vocab.size - 1)):
        q, v = (int(t) for t in rng.choice(vocab.size, size=2, replace=False))
        if (q, v) not in pairs:
            pairs.append((q, v))
    suite = []
    for q, v in pairs:
        family = adversarial_family(q, v, L)
        if len(family) > max_positions:
            keep = np.unique(np.linspace(0, len(family) - 1, max_positions).round().astype(int))
            family = [family[i] for i in keep]
        suite.extend(family)
    return suite


def audit_suite(vocab: Vocab, L: int, suite_size: int, seed: int = 0,
                include_adversarial: bool = True, n_pairs: int = 4,
                max_positions: int = 256) -> List[TaskInstance]:
    """Random recall instances of length L plus the adversarial family."""
    suite = [gen_ar(L, vocab.size, derive_seed(seed, i), allow_adjacent=False)
             for i in range(suite_size)]
    if include_adversarial:
        suite.extend(_adversarial_suite(vocab, L, seed, n_pairs, max_positions))
    return suite


@dataclass
class SuiteErrors:
    max_error: float
    correct: int
    total: int
    map_l1_max: float

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 1.0

    def merge(self, other: 'SuiteErrors') -> 'SuiteErrors':
        return SuiteErrors(max(self.max_error, other.max_error), self.correct + other.correct,
                           self.total + other.total, max(self.map_l1_max, other.map_l1_max))


def _errors_chunk(m: CatModel, vocab: Vocab, instances: Sequence[TaskInstance]) -> SuiteErrors:
    result = SuiteErrors(0.0, 0, 0, 0.0)
    for inst in instances:
        out, weights = cat_forward_with_map(vocab.embed(inst.tokens), m, inst.L - 1)
        answer = inst.answers[0]
        err = float(np.linalg.norm(vocab.embeddings[answer] - out))
        dist = golden_map(inst.tokens).l1_distance(weights)
        result = result.merge(SuiteErrors(err, int(nearest_token(out, vocab) == answer), 1, dist))
    return result


def suite_errors(m: CatModel, vocab: Vocab, instances: Sequence[TaskInstance],
                 jobs: int = 1, chunk_size: int = 200) -> SuiteErrors:
    chunks = [instances[s:s + chunk_size] for s in range(0, len(instances), chunk_size)]
    if jobs == 1 or len(chunks) <= 1:
        parts = [_errors_chunk(m, vocab, c) for c in chunks]
    else:
        parts = Parallel(n_jobs=jobs)(delayed(_errors_chunk)(m, vocab, c) for c in chunks)
    result = SuiteErrors(0.0, 0, 0, 0.0)
    for part in parts:
        result = result.merge(part)
    return result


def measure_epsilon(m: CatModel, vocab: Vocab, L: int, suite_size: int,
                    include_adversarial: bool = True, seed: int = 0, strict: bool = True,
                    instances: Optional[Sequence[TaskInstance]] = None, jobs: int = 1) -> float:
    """
    Max ||y - f(X)|| over a recall suite of length L.

    Args:
        m: Model under audit
        vocab: Token embeddings
        L: Sequence length
        suite_size: Number of random instances
        include_adversarial: Add the adversarial family
        seed: Suite seed
        strict: Require the audited model form
        instances: Explicit suite replacing the generated one
        jobs: Parallel workers

    Raises:
        StructureViolation: If strict and the model is not of the audited form
    """
    if strict:
        check_audited_form(m)
    if instances is None:
        instances = audit_suite(vocab, L, suite_size, seed, include_adversarial)
    return suite_errors(m, vocab, instances, jobs).max_error


# ---------------------------------------------------------------------------
# Normalized error
# ---------------------------------------------------------------------------

def epsilon0(eps: float, vocab: Optional[Vocab] = None, assumption: str = 'A',
             N: int = 1, tokens=None) -> float:
    """
    Normalized recall error.

    Assumption "A": eps / Delta over the vocabulary.
    Assumption "B": eps * exp(2N / delta) / delta, where delta is the
    Gram-Schmidt gap of the ordered token subset `tokens` (vectors, or ids
    into vocab).

    Raises:
        DegenerateVocab: If Delta or delta is zero
    """
    if assumption == 'A':
        if vocab is None:
            raise ValueError("Assumption A needs the vocabulary")
        delta = min_embedding_distance(vocab)
        if delta <= 0:
            raise DegenerateVocab("Minimum embedding distance is 0")
        return eps / delta
    if assumption == 'B':
        if tokens is None:
            raise ValueError("Assumption B needs an ordered token subset")
        vectors = np.asarray(tokens)
        if vectors.ndim == 1:
            if vocab is None:
                raise ValueError("Token ids need the vocabulary")
            vectors = vocab.embeddings[vectors.astype(np.int64)]
        delta = gram_schmidt_delta(vectors)
        if delta <= 0:
            raise DegenerateVocab("Token subset is linearly dependent (Gram-Schmidt gap 0)")
        return eps * np.exp(2 * N / delta) / delta
    raise ValueError(f"Unknown assumption: {assumption}")


# ---------------------------------------------------------------------------
# Length generalization
# ---------------------------------------------------------------------------

@dataclass
class CurvePoint:
    L_prime: int
    max_error: float
    accuracy: float


@dataclass
class LengthGenCurve:
    points: List[CurvePoint]
    epsilon0: float
    r_hat_by_length: Dict[int, float] = field(default_factory=dict)

    @property
    def r_hat(self) -> float:
        return max(self.r_hat_by_length.values(), default=0.0)

    @property
    def r_hat_stability(self) -> float:
        """
        Largest growth of R-hat from any test length to a longer one.

        max over L'' >= L' of R-hat(L'') / R-hat(L'); 1.0 for a flat or
        shrinking curve, infinite when R-hat leaves zero.
        """
        values = [self.r_hat_by_length[p.L_prime] for p in self.points if p.L_prime in self.r_hat_by_length]
        stability, floor = 1.0, float('inf')
        for value in values:
            floor = min(floor, value)
            if value == 0.0:
                continue
            if floor == 0.0:
                return float('inf')
            stability = max(stability, value / floor)
        return stability

    def rows(self) -> List[Tuple[int, float, float]]:
        return [(p.L_prime, p.max_error, p.accuracy) for p in self.points]


def length_gen_curve(m: CatModel, vocab: Vocab, lengths: Sequence[int], suite_size: int,
                     eps0: float = 0.0, seed: int = 0, include_adversarial: bool = True,
                     jobs: int = 1) -> LengthGenCurve:
    """
    Max error and accuracy at each test length, plus R-hat = error / (L' eps0)
    when eps0 > 0.
    """
    points, r_hat = [], {}
    for L_prime in sorted(lengths):
        suite = audit_suite(vocab, L_prime, suite_size, seed, include_adversarial)
        errs = suite_errors(m, vocab, suite, jobs)
        points.append(CurvePoint(L_prime, errs.max_error, errs.accuracy))
        if eps0 > 0:
            r_hat[L_prime] = errs.max_error / (L_prime * eps0)
        logger.info("L'=%d: max error %.3e, accuracy %.4f", L_prime, errs.max_error, errs.accuracy)
    return LengthGenCurve(points, eps0, r_hat)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    """Measured error at the audit length and the certified consequences."""

    L: int
    epsilon: float
    epsilon0: float
    delta: float
    filter_l1_to_delay: float
    map_l1_max: float
    lengen_errors: Dict[int, float]
    lengen_accuracy: Dict[int, float]
    r_hat: float
    r_hat_stability: float
    model: str = ''

    @property
    def in_regime(self) -> bool:
        return self.epsilon0 <= R0

    @property
    def in_strict_regime(self) -> bool:
        return self.epsilon0 <= R0 / self.L

    @property
    def golden_map_bound_holds(self) -> bool:
        return self.map_l1_max <= self.L * self.epsilon0 + 1e-12

    def to_dict(self) -> dict:
        d = asdict(self)
        d['lengen_errors'] = {str(k): v for k, v in self.lengen_errors.items()}
        d['lengen_accuracy'] = {str(k): v for k, v in self.lengen_accuracy.items()}
        d['r_hat_stability'] = None if not np.isfinite(self.r_hat_stability) else self.r_hat_stability
        d['R0'] = R0
        d['in_regime'] = self.in_regime
        d['in_strict_regime'] = self.in_strict_regime
        d['filter_bound_holds'] = check_filter_bound(self)
        d['golden_map_bound_holds'] = self.golden_map_bound_holds
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def check_filter_bound(report: AuditReport) -> bool:
    """||F - D_-1||_1 <= L eps0."""
    return report.filter_l1_to_delay <= report.L * report.epsilon0 + 1e-12


def audit(m: CatModel, vocab: Vocab, L: int, lengths: Sequence[int], suite_size: int,
          seed: int = 0, jobs: int = 1, model_name: str = '') -> AuditReport:
    """
    Measure epsilon at L, then evaluate every certified consequence.

    Raises:
        StructureViolation: If the model is not of the audited form
        DegenerateVocab: If the vocabulary has zero minimum embedding distance
    """
    filter_l1 = filter_l1_to_delay(m)
    suite = audit_suite(vocab, L, suite_size, seed)
    errs = suite_errors(m, vocab, suite, jobs)
    eps0 = epsilon0(errs.max_error, vocab, 'A')
    curve = length_gen_curve(m, vocab, lengths, suite_size, eps0, seed, jobs=jobs)
    report = AuditReport(
        L=L, epsilon=errs.max_error, epsilon0=eps0, delta=min_embedding_distance(vocab),
        filter_l1_to_delay=filter_l1, map_l1_max=errs.map_l1_max,
        lengen_errors={p.L_prime: p.max_error for p in curve.points},
        lengen_accuracy={p.L_prime: p.accuracy for p in curve.points},
        r_hat=curve.r_hat, r_hat_stability=curve.r_hat_stability, model=model_name)
    logger.info("Audit at L=%d: eps=%.3e eps0=%.3e filter l1=%.3e map l1=%.3e",
                L, report.epsilon, eps0, filter_l1, errs.map_l1_max)
    return report

"""
Seeded generators and verifiers for the mechanistic recall and copying tasks.

Token ids are contiguous integers. Every generator is a pure function of its
arguments and seed; suites derive one seed per instance from (suite seed,
index) so they can be generated in any order or in parallel.
"""
import logging
import re
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.core.errors import InfeasibleSpec, LengthMismatch

logger = logging.getLogger(__name__)

# Answer recorded for a multi-query whose N-gram never occurred earlier.
NO_MATCH = -1

MAX_ATTEMPTS = 200

_KIND_RE = re.compile(r'^(AR|MQAR|SC|NAR\((\d+)\)|MQNAR\((\d+)\))$')


@dataclass
class TaskInstance:
    """One task sequence with its query positions and expected answers."""

    kind: str
    tokens: List[int]
    queries: List[Tuple[int, int]]
    answers: List[int]
    seed: int = 0

    def __post_init__(self):
        if not _KIND_RE.match(self.kind):
            raise ValueError(f"Unknown task kind: {self.kind}")
        self.tokens = [int(t) for t in self.tokens]
        self.queries = [(int(p), int(n)) for p, n in self.queries]
        self.answers = [int(a) for a in self.answers]
        if len(self.queries) != len(self.answers):
            raise ValueError("Every query needs exactly one answer")

    @property
    def L(self) -> int:
        return len(self.tokens)

    @property
    def n_gram(self) -> int:
        m = _KIND_RE.match(self.kind)
        if m.group(2):
            return int(m.group(2))
        if m.group(3):
            return int(m.group(3))
        return 0 if self.kind == 'SC' else 1

    @property
    def is_multi_query(self) -> bool:
        return self.kind.startswith('MQ')

    def to_dict(self) -> dict:
        d = asdict(self)
        d['queries'] = [list(q) for q in self.queries]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> 'TaskInstance':
        return cls(kind=data['kind'], tokens=data['tokens'],
                   queries=[tuple(q) for q in data['queries']],
                   answers=data['answers'], seed=int(data.get('seed', 0)))


@dataclass
class TaskSuiteSpec:
    """Parameters of a generated suite. For SC, L = signals + noise and k = signals."""

    kind: str
    L: int
    vocab_size: int
    k: int = 1
    n_instances: int = 1
    seed: int = 0
    N: int = 1
    no_match_fraction: float = 0.0
    n_noise_types: int = 1
    unique: bool = True

    def validate(self):
        if self.kind not in ('AR', 'NAR', 'MQAR', 'MQNAR', 'SC'):
            raise InfeasibleSpec(f"Unknown task kind: {self.kind}")
        if self.n_instances < 1:
            raise InfeasibleSpec("A suite needs at least one instance")
        if self.kind in ('MQAR', 'MQNAR'):
            n_queries = self.k + _n_unmatched(self.k, self.no_match_fraction)
            if self.k * (self.N + 1) + n_queries * self.N > self.L:
                raise InfeasibleSpec(
                    f"k={self.k} pairs of {self.N}-grams plus {n_queries} queries do not fit in L={self.L}")
            if self.vocab_size < 2 * self.k:
                raise InfeasibleSpec(f"vocab_size={self.vocab_size} must be >= 2k={2 * self.k}")


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def derive_seed(seed: int, index: int) -> int:
    """Platform-independent 63-bit seed for item `index` of a seeded collection."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed))


def _draw_excluding(rng: np.random.Generator, vocab_size: int, excluded: set, size: int) -> np.ndarray:
    pool = np.setdiff1d(np.arange(vocab_size), np.fromiter(excluded, dtype=np.int64, count=len(excluded)))
    if pool.size == 0:
        raise InfeasibleSpec("No tokens left to draw from")
    return pool[rng.integers(pool.size, size=size)]


# ---------------------------------------------------------------------------
# Brute-force scans
# ---------------------------------------------------------------------------

def ngram_ends(tokens: Sequence[int], gram: Sequence[int]) -> List[int]:
    """End positions e of every window tokens[e-N+1 .. e] equal to gram."""
    n = len(gram)
    gram = list(gram)
    return [e for e in range(n - 1, len(tokens)) if list(tokens[e - n + 1:e + 1]) == gram]


def boundary_clean(tokens: Sequence[int], gram: Sequence[int]) -> bool:
    """
    False when a zero-padded prefix window at the sequence start uses exactly
    the token set of gram.

    Such a prefix (tokens[0..j], j < N-1) has a signature parallel to the
    gram's under orthonormal embeddings and would tie with it.
    """
    target = set(gram)
    for j in range(len(gram) - 1):
        if set(tokens[:j + 1]) == target:
            return False
    return True


def validate_instance(inst: TaskInstance) -> List[str]:
    """Independent brute-force check; returns the list of problems found."""
    problems = []
    tokens = inst.tokens
    if inst.kind == 'SC':
        return _validate_sc(inst)
    n = inst.n_gram
    for (p, qn), answer in zip(inst.queries, inst.answers):
        if qn != n:
            problems.append(f"query at {p} has n-gram length {qn}, kind says {n}")
            continue
        if p < n - 1 or p >= len(tokens):
            problems.append(f"query position {p} out of range")
            continue
        gram = tokens[p - n + 1:p + 1]
        ends = [e for e in ngram_ends(tokens[:p], gram)]
        if inst.is_multi_query:
            if answer == NO_MATCH:
                if ends:
                    problems.append(f"unmatched query at {p} occurs earlier at {ends}")
                continue
        else:
            # single query: occurrence must start before L-N
            ends = [e for e in ends if e - n + 1 < len(tokens) - n]
        if len(ends) != 1:
            problems.append(f"query at {p} occurs {len(ends)} times earlier")
            continue
        if tokens[ends[0] + 1] != answer:
            problems.append(f"query at {p}: answer {answer} != successor {tokens[ends[0] + 1]}")
    if not inst.is_multi_query and (len(inst.queries) != 1 or inst.queries[0][0] != len(tokens) - 1):
        problems.append("single-query task must query the final position")
    return problems


def _validate_sc(inst: TaskInstance) -> List[str]:
    # the final token is ⊥ and the answers are an ordered subsequence of the prompt
    if not inst.tokens:
        return ["empty sequence"]
    problems = []
    prompt, bot = inst.tokens[:-1], inst.tokens[-1]
    if bot in prompt:
        problems.append("⊥ appears before the end")
    it = iter(prompt)
    if not all(any(t == a for t in it) for a in inst.answers):
        problems.append("answers are not an ordered subsequence of the prompt")
    expected = [(len(prompt) + m, 0) for m in range(len(inst.answers))]
    if inst.queries != expected:
        problems.append("selective-copy queries must follow ⊥ one per answer")
    return problems


def is_valid(inst: TaskInstance) -> bool:
    return not validate_instance(inst)


# ---------------------------------------------------------------------------
# Associative recall
# ---------------------------------------------------------------------------

def gen_ar(L: int, vocab_size: int, seed: int, allow_adjacent: bool = True) -> TaskInstance:
    """
    Single-query AR: the final token occurs exactly once earlier; the answer
    is the token after that occurrence.

    With allow_adjacent=False the earlier occurrence is never at L-2, where
    the answer would be the query token itself.
    """
    if L < 3:
        raise InfeasibleSpec(f"AR needs L >= 3 (got {L})")
    if vocab_size < 2:
        raise InfeasibleSpec(f"AR needs at least 2 tokens to avoid collisions (got {vocab_size})")
    rng = _rng(seed)
    q = int(rng.integers(vocab_size))
    i = int(rng.integers(L - 1 if allow_adjacent else L - 2))
    tokens = _draw_excluding(rng, vocab_size, {q}, L).tolist()
    tokens[i] = q
    tokens[L - 1] = q
    return TaskInstance(kind='AR', tokens=tokens, queries=[(L - 1, 1)],
                        answers=[tokens[i + 1]], seed=seed)


def _fill_avoiding(L: int, fixed: Dict[int, int], gram: Tuple[int, ...], allowed_starts: set,
                   vocab_size: int, rng: np.random.Generator) -> Optional[List[int]]:
    """
    Fill the non-fixed positions left to right so that no window outside
    allowed_starts equals gram. Windows made only of fixed positions are not
    checked here. Returns None when a position has no admissible token.
    """
    n = len(gram)
    tokens = [fixed.get(j, -1) for j in range(L)]
    for j in range(L):
        if j in fixed:
            continue
        banned = set()
        for s in range(max(0, j - n + 1), min(j, L - n) + 1):
            if s in allowed_starts:
                continue
            ok = True
            for pos in range(s, s + n):
                if pos == j:
                    continue
                if not (pos < j or pos in fixed) or tokens[pos] != gram[pos - s]:
                    ok = False
                    break
            if ok:
                banned.add(gram[j - s])
        if len(banned) >= vocab_size:
            return None
        tokens[j] = int(_draw_excluding(rng, vocab_size, banned, 1)[0]) if banned else int(rng.integers(vocab_size))
    return tokens


def gen_nar(N: int, L: int, vocab_size: int, seed: int) -> TaskInstance:
    """
    N-gram AR: the final N tokens occur exactly once earlier (starting before
    L-N); the answer is the token after that occurrence.
    """
    if N < 1:
        raise InfeasibleSpec(f"N must be >= 1 (got {N})")
    if L < 2 * N + 1:
        raise InfeasibleSpec(f"NAR with N={N} needs L >= {2 * N + 1} (got {L})")
    if vocab_size < 2:
        raise InfeasibleSpec("NAR needs at least 2 tokens")
    rng = _rng(seed)
    for _ in range(MAX_ATTEMPTS):
        gram = tuple(int(t) for t in rng.integers(vocab_size, size=N))
        i = int(rng.integers(L - 2 * N + 1))
        fixed = {i + r: gram[r] for r in range(N)}
        fixed.update({L - N + r: gram[r] for r in range(N)})
        tokens = _fill_avoiding(L, fixed, gram, {i, L - N}, vocab_size, rng)
        if tokens is None or not boundary_clean(tokens, gram):
            continue
        inst = TaskInstance(kind=f'NAR({N})', tokens=tokens, queries=[(L - 1, N)],
                            answers=[tokens[i + N]], seed=seed)
        if is_valid(inst):
            return inst
    raise InfeasibleSpec(f"Could not plant a unique {N}-gram in L={L} over {vocab_size} tokens")


# ---------------------------------------------------------------------------
# Multi-query associative recall
# ---------------------------------------------------------------------------

def _n_unmatched(k: int, no_match_fraction: float) -> int:
    return int(np.ceil(no_match_fraction * k)) if no_match_fraction > 0 else 0


def _random_composition(total: int, parts: int, rng: np.random.Generator) -> List[int]:
    """Uniformly random split of `total` into `parts` nonnegative integers."""
    cuts = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False)) if parts > 1 else []
    edges = np.concatenate([[-1], cuts, [total + parts - 1]])
    return [int(x) for x in np.diff(edges) - 1]


def gen_mq(N: int, L: int, k: int, vocab_size: int, seed: int,
           no_match_fraction: float = 0.0) -> TaskInstance:
    """
    Multi-query (N-gram) AR.

    k unique key N-grams with values are laid out in shuffled order, then the
    queries (a permutation of the keys, plus optional unmatched N-grams) sit
    in the remaining positions separated by filler tokens. Key tokens come
    from a random alphabet of max(k, 2) tokens; values and filler are drawn
    from the rest of the vocabulary.
    """
    if N < 1 or k < 1:
        raise InfeasibleSpec("MQ tasks need N >= 1 and k >= 1")
    spec = TaskSuiteSpec(kind='MQAR' if N == 1 else 'MQNAR', L=L, vocab_size=vocab_size, k=k,
                         N=N, no_match_fraction=no_match_fraction)
    spec.validate()
    n_unmatched = _n_unmatched(k, no_match_fraction)
    alphabet_size = k if N == 1 else max(k, 2)
    if N > 1 and alphabet_size ** N < k + n_unmatched:
        raise InfeasibleSpec(f"Not enough distinct {N}-grams for {k + n_unmatched} queries")
    if vocab_size - alphabet_size - (n_unmatched if N == 1 else 0) < 1:
        raise InfeasibleSpec("No tokens left for values and filler")
    kind = 'MQAR' if N == 1 else f'MQNAR({N})'
    rng = _rng(seed)

    for _ in range(MAX_ATTEMPTS):
        alphabet = rng.choice(vocab_size, size=alphabet_size, replace=False)
        rest = np.setdiff1d(np.arange(vocab_size), alphabet)
        if N == 1:
            grams = [(int(a),) for a in rng.permutation(alphabet)]
            fresh = rng.choice(rest, size=n_unmatched, replace=False) if n_unmatched else np.array([], int)
            unmatched = [(int(t),) for t in fresh]
            rest = np.setdiff1d(rest, fresh)
        else:
            seen = set()
            while len(seen) < k + n_unmatched:
                seen.add(tuple(int(t) for t in rng.choice(alphabet, size=N)))
            drawn = list(seen)
            drawn = [drawn[i] for i in rng.permutation(len(drawn))]
            grams, unmatched = drawn[:k], drawn[k:]
        values = rest[rng.integers(rest.size, size=k)]

        tokens: List[int] = []
        for gram, value in zip(grams, values):
            tokens.extend(gram)
            tokens.append(int(value))

        query_grams = [grams[i] for i in rng.permutation(k)] + unmatched
        query_grams = [query_grams[i] for i in rng.permutation(len(query_grams))]
        free = L - len(tokens) - N * len(query_grams)
        gaps = _random_composition(free, len(query_grams) + 1, rng)
        queries = []
        for gap, gram in zip(gaps, query_grams):
            tokens.extend(int(t) for t in rest[rng.integers(rest.size, size=gap)])
            tokens.extend(gram)
            queries.append(len(tokens) - 1)
        tokens.extend(int(t) for t in rest[rng.integers(rest.size, size=gaps[-1])])

        answers = []
        for p in queries:
            gram = tuple(tokens[p - N + 1:p + 1])
            ends = ngram_ends(tokens[:p], gram)
            answers.append(tokens[ends[0] + 1] if len(ends) == 1 else NO_MATCH)
        inst = TaskInstance(kind=kind, tokens=tokens, queries=[(p, N) for p in queries],
                            answers=answers, seed=seed)
        matched = sum(a != NO_MATCH for a in answers)
        if (matched == k and is_valid(inst)
                and all(boundary_clean(tokens, g) for g in query_grams)):
            return inst
    raise InfeasibleSpec(f"Could not lay out k={k} {N}-gram queries in L={L}")


# ---------------------------------------------------------------------------
# Selective copying
# ---------------------------------------------------------------------------

def sc_token_ids(signal_size: int, n_noise_types: int = 1) -> Tuple[range, range, int]:
    """(signal ids, noise ids, ⊥ id) for a selective-copy vocabulary."""
    signals = range(signal_size)
    noise = range(signal_size, signal_size + n_noise_types)
    return signals, noise, signal_size + n_noise_types


def gen_sc(n_signal: int, n_noise: int, signal_size: int, seed: int,
           unique: bool = True, n_noise_types: int = 1) -> TaskInstance:
    """
    Selective copying: signal and noise tokens interleaved, then ⊥. The
    answer is the ordered signal subsequence; the m-th answer is produced at
    context position (prompt length - 1 + m).
    """
    if n_signal < 0 or n_noise < 0 or n_signal + n_noise < 1:
        raise InfeasibleSpec("Selective copying needs at least one input token")
    if signal_size < 1 or n_noise_types < 1:
        raise InfeasibleSpec("Selective copying needs signal and noise token types")
    if unique and n_signal > signal_size:
        raise InfeasibleSpec(f"{n_signal} unique signals do not fit in |S|={signal_size}")
    rng = _rng(seed)
    signals, noise, bot = sc_token_ids(signal_size, n_noise_types)
    L = n_signal + n_noise
    signal_pos = np.sort(rng.choice(L, size=n_signal, replace=False))
    signal_tok = rng.choice(signal_size, size=n_signal, replace=not unique)
    tokens = (noise.start + rng.integers(n_noise_types, size=L)).tolist()
    for pos, tok in zip(signal_pos, signal_tok):
        tokens[int(pos)] = int(tok)
    tokens.append(bot)
    answers = [int(t) for t in signal_tok]
    queries = [(L + m, 0) for m in range(len(answers))]
    return TaskInstance(kind='SC', tokens=tokens, queries=queries, answers=answers, seed=seed)


def signal_subsequence(tokens: Sequence[int], signal_size: int) -> List[int]:
    """Membership-filter oracle: the signal tokens of a prompt, in order."""
    return [t for t in tokens if 0 <= t < signal_size]


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def verify(instance: TaskInstance, predicted: Sequence[int]) -> float:
    """Fraction of queries answered exactly."""
    if len(predicted) != len(instance.answers):
        raise LengthMismatch(
            f"{len(predicted)} predictions for {len(instance.answers)} queries")
    if not instance.answers:
        return 1.0
    hits = sum(int(p) == int(a) for p, a in zip(predicted, instance.answers))
    return hits / len(instance.answers)


def exact_match(instance: TaskInstance, predicted: Sequence[int]) -> bool:
    """Whole-sequence match, tolerant of length differences."""
    return list(map(int, predicted)) == list(instance.answers)


# ---------------------------------------------------------------------------
# Suites and presets
# ---------------------------------------------------------------------------

TASK_PRESETS: Dict[str, dict] = {
    **{f'mqar-L{L}': dict(kind='MQAR', N=1, L=L, k=k, n_train=100000, n_test=3000)
       for L, k in ((64, 16), (128, 32), (256, 64), (512, 128))},
    **{f'mqnar-L{L}': dict(kind='MQNAR', N=2, L=L, k=k, n_train=200000, n_test=3000)
       for L, k in ((64, 10), (128, 20), (256, 40))},
}


def generate_one(spec: TaskSuiteSpec, index: int) -> TaskInstance:
    seed = derive_seed(spec.seed, index)
    if spec.kind == 'AR':
        return gen_ar(spec.L, spec.vocab_size, seed)
    if spec.kind == 'NAR':
        return gen_nar(spec.N, spec.L, spec.vocab_size, seed)
    if spec.kind in ('MQAR', 'MQNAR'):
        return gen_mq(spec.N, spec.L, spec.k, spec.vocab_size, seed, spec.no_match_fraction)
    return gen_sc(spec.k, spec.L - spec.k, spec.vocab_size, seed,
                  unique=spec.unique, n_noise_types=spec.n_noise_types)


def _generate_range(spec: TaskSuiteSpec, start: int, stop: int) -> List[TaskInstance]:
    return [generate_one(spec, i) for i in range(start, stop)]


def generate_suite(spec: TaskSuiteSpec, jobs: int = 1, chunk_size: int = 1000) -> List[TaskInstance]:
    """Generate spec.n_instances instances; the result does not depend on jobs."""
    spec.validate()
    bounds = [(s, min(s + chunk_size, spec.n_instances)) for s in range(0, spec.n_instances, chunk_size)]
    if jobs == 1 or len(bounds) == 1:
        chunks = [_generate_range(spec, s, e) for s, e in bounds]
    else:
        chunks = Parallel(n_jobs=jobs)(delayed(_generate_range)(spec, s, e) for s, e in bounds)
    suite = [inst for chunk in chunks for inst in chunk]
    logger.info("Generated %d %s instances (L=%d, seed=%d)", len(suite), spec.kind, spec.L, spec.seed)
    return suite

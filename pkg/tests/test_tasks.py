"""Tests for the synthetic task generators and verifiers."""

import pytest

from src.core.errors import InfeasibleSpec, LengthMismatch
from src.core.tasks import (
    TASK_PRESETS,
    NO_MATCH,
    TaskInstance,
    TaskSuiteSpec,
    boundary_clean,
    exact_match,
    gen_ar,
    gen_mq,
    gen_nar,
    gen_sc,
    generate_suite,
    ngram_ends,
    signal_subsequence,
    validate_instance,
    verify,
)


class TestAssociativeRecall:

    def test_generated_instances_verify(self):
        for seed in range(100):
            inst = gen_ar(16, 8, seed)
            assert validate_instance(inst) == []
            assert inst.tokens.count(inst.tokens[-1]) == 2

    def test_non_adjacent_occurrence(self):
        for seed in range(100):
            inst = gen_ar(8, 4, seed, allow_adjacent=False)
            q = inst.tokens[-1]
            assert inst.tokens.index(q) <= len(inst.tokens) - 3

    def test_deterministic(self):
        assert gen_ar(32, 10, 7) == gen_ar(32, 10, 7)

    def test_too_short(self):
        with pytest.raises(InfeasibleSpec):
            gen_ar(2, 8, 0)


class TestNgramRecall:

    @pytest.mark.parametrize("N", [1, 2, 3])
    def test_generated_instances_verify(self, N):
        for seed in range(100):
            inst = gen_nar(N, 24, 6, seed)
            assert inst.kind == (f'NAR({N})')
            assert validate_instance(inst) == []
            gram = inst.tokens[-N:]
            assert boundary_clean(inst.tokens, gram)

    def test_needs_room(self):
        with pytest.raises(InfeasibleSpec):
            gen_nar(3, 6, 8, 0)

    def test_ngram_ends(self):
        assert ngram_ends([1, 2, 1, 2, 3], [1, 2]) == [1, 3]

    def test_boundary_clean(self):
        assert not boundary_clean([5, 5, 1, 2], [5, 5])
        assert not boundary_clean([2, 1, 4], [1, 2, 2])
        assert boundary_clean([1, 2, 3, 4], [1, 2])


class TestMultiQuery:

    def test_mqar_instances_verify(self):
        for seed in range(100):
            inst = gen_mq(1, 64, 8, 40, seed)
            assert validate_instance(inst) == []
            assert len(inst.queries) == 8
            assert NO_MATCH not in inst.answers

    def test_mqnar_instances_verify(self):
        for seed in range(100):
            inst = gen_mq(2, 64, 6, 40, seed)
            assert inst.kind == 'MQNAR(2)'
            assert validate_instance(inst) == []

    def test_unmatched_queries(self):
        for seed in range(100):
            inst = gen_mq(1, 64, 8, 40, seed, no_match_fraction=0.25)
            assert inst.answers.count(NO_MATCH) == 2
            assert validate_instance(inst) == []

    def test_does_not_fit(self):
        with pytest.raises(InfeasibleSpec):
            gen_mq(1, 16, 8, 40, 0)


class TestSelectiveCopy:

    def test_answers_are_signal_subsequence(self):
        for seed in range(100):
            inst = gen_sc(4, 12, 8, seed)
            assert inst.tokens[-1] == 9
            assert inst.answers == signal_subsequence(inst.tokens[:-1], 8)
            assert len(set(inst.answers)) == 4
            assert validate_instance(inst) == []

    def test_non_unique_variant(self):
        for seed in range(100):
            inst = gen_sc(6, 4, 2, seed, unique=False)
            assert inst.answers == signal_subsequence(inst.tokens[:-1], 2)

    def test_unique_needs_enough_signals(self):
        with pytest.raises(InfeasibleSpec):
            gen_sc(9, 4, 8, 0)

    def test_validator_catches_reordering(self):
        inst = gen_sc(3, 5, 8, 1)
        bad = TaskInstance(kind='SC', tokens=inst.tokens, queries=inst.queries,
                           answers=list(reversed(inst.answers)))
        assert validate_instance(bad)


class TestScoring:

    def test_verify_fraction(self):
        inst = TaskInstance(kind='MQAR', tokens=[0, 1, 2, 3, 0, 2], queries=[(4, 1), (5, 1)], answers=[1, 3])
        assert verify(inst, [1, 3]) == 1.0
        assert verify(inst, [1, 0]) == 0.5

    def test_verify_length_mismatch(self):
        inst = gen_ar(8, 4, 0)
        with pytest.raises(LengthMismatch):
            verify(inst, [])

    def test_exact_match(self):
        inst = gen_sc(3, 3, 4, 0)
        assert exact_match(inst, inst.answers)
        assert not exact_match(inst, inst.answers[:-1])

    def test_instance_dict_round_trip(self):
        inst = gen_mq(2, 48, 4, 20, 3)
        assert TaskInstance.from_dict(inst.to_dict()) == inst


class TestSuites:

    def test_presets(self):
        assert TASK_PRESETS['mqar-L64']['k'] == 16
        assert TASK_PRESETS['mqar-L64']['n_train'] == 100000
        assert TASK_PRESETS['mqar-L64']['n_test'] == 3000
        assert TASK_PRESETS['mqnar-L128'] == dict(kind='MQNAR', N=2, L=128, k=20, n_train=200000, n_test=3000)

    def test_suite_independent_of_jobs(self):
        spec = TaskSuiteSpec(kind='MQAR', L=32, vocab_size=16, k=4, n_instances=30, seed=5)
        serial = generate_suite(spec, jobs=1, chunk_size=7)
        parallel = generate_suite(spec, jobs=2, chunk_size=7)
        assert serial == parallel
        assert len(serial) == 30

    def test_suite_is_reproducible(self):
        spec = TaskSuiteSpec(kind='NAR', L=20, vocab_size=8, n_instances=20, seed=9, N=2)
        assert generate_suite(spec) == generate_suite(spec)

    def test_invalid_spec(self):
        with pytest.raises(InfeasibleSpec):
            TaskSuiteSpec(kind='XYZ', L=10, vocab_size=4).validate()
        with pytest.raises(InfeasibleSpec):
            TaskSuiteSpec(kind='MQAR', L=64, vocab_size=8, k=16).validate()

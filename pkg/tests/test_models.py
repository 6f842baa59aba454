from __future__ import annotations

import numpy as np
import pytest

from decon.errors import EmptyCorpus, UnknownContext
from decon.models import (
    ContaminationSpec,
    TableModel,
    VocabInfo,
    build_ngram_base,
    logits,
    mixed_next_distribution,
    softmax,
    validate_logits,
)

V4 = VocabInfo(vocab_size=4, eos_id=3)


class TestVocabInfo:
    def test_rejects_single_token_vocab(self):
        with pytest.raises(ValueError):
            VocabInfo(vocab_size=1, eos_id=0)

    @pytest.mark.parametrize("eos", [-1, 4, 7])
    def test_rejects_out_of_range_eos(self, eos):
        with pytest.raises(ValueError):
            VocabInfo(vocab_size=4, eos_id=eos)


class TestLogitsContract:
    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            validate_logits(np.zeros(3), 4)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            validate_logits(np.array([0.0, np.nan, 0.0, 0.0]), 4)

    def test_pos_inf_rejected(self):
        with pytest.raises(ValueError):
            validate_logits(np.array([0.0, np.inf, 0.0, 0.0]), 4)

    def test_all_neg_inf_rejected(self):
        with pytest.raises(ValueError):
            validate_logits(np.full(4, -np.inf), 4)

    def test_partial_neg_inf_ok(self):
        arr = validate_logits(np.array([0.0, -np.inf, 1.0, -np.inf]), 4)
        assert arr.shape == (4,)

    def test_softmax_of_neg_inf_is_exactly_zero(self):
        probs = softmax(np.array([0.0, -np.inf, 1.0, -np.inf]))
        assert probs[1] == 0.0 and probs[3] == 0.0
        assert abs(probs.sum() - 1.0) <= 1e-9


class TestTableModel:
    def test_uniform_default(self):
        model = TableModel(V4, {}, default=[0.0, 0.0, 0.0, 0.0])
        probs = softmax(logits(model, (0,), ()))
        assert np.allclose(probs, [0.25, 0.25, 0.25, 0.25], atol=1e-12)

    def test_unknown_context_without_default(self):
        model = TableModel(V4, {(0,): [1.0, 0.0, 0.0, 0.0]})
        with pytest.raises(UnknownContext):
            logits(model, (1,), ())

    def test_mapped_context_over_default(self):
        model = TableModel(V4, {(0,): [9.0, 0.0, 0.0, 0.0]}, default=[0.0] * 4)
        assert logits(model, (0,), ())[0] == 9.0
        assert logits(model, (1,), ())[0] == 0.0

    def test_determinism_bitwise(self):
        model = TableModel(V4, {(0, 1): [0.5, -1.0, 2.0, 0.0]}, default=[0.0] * 4)
        a = logits(model, (0,), (1,))
        b = logits(model, (0,), (1,))
        assert a.tobytes() == b.tobytes()

    def test_rejects_empty_prompt(self):
        model = TableModel(V4, {}, default=[0.0] * 4)
        with pytest.raises(ValueError):
            logits(model, (), ())

    def test_rejects_bad_token_ids(self):
        model = TableModel(V4, {}, default=[0.0] * 4)
        with pytest.raises(ValueError):
            logits(model, (4,), ())


class TestMixedNextDistribution:
    def test_alpha_zero_is_identity(self):
        base = np.array([0.25, 0.25, 0.25, 0.25])
        spec = ContaminationSpec(alpha=0.0)
        out = mixed_next_distribution(base, spec, matched_next=2)
        assert np.allclose(out, base, atol=1e-15)

    def test_alpha_one_is_delta(self):
        base = np.array([0.25, 0.25, 0.25, 0.25])
        spec = ContaminationSpec(alpha=1.0)
        out = mixed_next_distribution(base, spec, matched_next=2)
        assert np.allclose(out, [0.0, 0.0, 1.0, 0.0], atol=1e-15)

    def test_half_mixture_hand_values(self):
        base = np.array([0.4, 0.3, 0.2, 0.1])
        spec = ContaminationSpec(alpha=0.5)
        out = mixed_next_distribution(base, spec, matched_next=0)
        assert np.allclose(out, [0.7, 0.15, 0.1, 0.05], atol=1e-12)
        assert abs(out.sum() - 1.0) <= 1e-9

    def test_no_match_returns_base(self):
        base = np.array([0.4, 0.3, 0.2, 0.1])
        spec = ContaminationSpec(alpha=0.9)
        assert np.allclose(mixed_next_distribution(base, spec, None), base)

    def test_rejects_unnormalized_base(self):
        with pytest.raises(ValueError):
            mixed_next_distribution(np.array([0.5, 0.5, 0.5, 0.5]),
                                    ContaminationSpec(alpha=0.5), 0)


class TestContaminationSpec:
    def test_alpha_range_enforced(self):
        with pytest.raises(ValueError):
            ContaminationSpec(alpha=1.5)

    def test_references_must_end_with_eos(self):
        with pytest.raises(ValueError):
            ContaminationSpec(alpha=0.5, records=(((0,), (1, 2)),), eos_id=3)
        ContaminationSpec(alpha=0.5, records=(((0,), (1, 3)),), eos_id=3)

    def test_matching_requires_exact_prompt_and_prefix(self):
        spec = ContaminationSpec(alpha=0.5, records=(((0, 1), (2, 2, 3)),), eos_id=3)
        assert spec.matched_next((0, 1), ()) == 2
        assert spec.matched_next((0, 1), (2,)) == 2
        assert spec.matched_next((0, 1), (2, 2)) == 3
        assert spec.matched_next((0, 1), (2, 2, 3)) is None  # reference exhausted
        assert spec.matched_next((0, 1), (1,)) is None  # prefix diverged
        assert spec.matched_next((0,), ()) is None  # different prompt


class TestNGramModel:
    def test_bigram_counts_hand_example(self):
        # one sequence [1,2,1,2,eos]: count((1,),2)=2, count((1,))=2
        model = build_ngram_base([[1, 2, 1, 2, 3]], V4, order=2, smoothing=1.0)
        probs = model.base_probs((1,))
        assert probs[2] == pytest.approx((2 + 1) / (2 + 4), abs=1e-12)

    def test_unseen_context_backs_off_to_unigram(self):
        model = build_ngram_base([[1, 2, 1, 2, 3]], V4, order=2, smoothing=1.0)
        assert np.array_equal(model.base_probs((0,)), model.base_probs(()))

    def test_huge_smoothing_approaches_uniform(self):
        model = build_ngram_base([[1, 2, 1, 2, 3]], V4, order=2, smoothing=1e6)
        probs = model.base_probs((1,))
        assert np.abs(probs - 0.25).max() < 1e-3

    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpus):
            build_ngram_base([], V4)

    def test_distributions_normalized_everywhere(self):
        model = build_ngram_base([[1, 2, 1, 2, 3], [2, 2, 0, 3]], V4, order=3, smoothing=0.1)
        for ctx in [(), (1,), (2,), (1, 2), (9, 9)]:
            probs = softmax(model.logits((1,), ctx))
            assert probs.shape == (4,)
            assert abs(probs.sum() - 1.0) <= 1e-9

    def test_alpha_zero_is_exactly_base(self):
        base = build_ngram_base([[1, 2, 1, 2, 3]], V4, order=2, smoothing=0.5)
        spec = ContaminationSpec(alpha=0.0, records=(((1,), (2, 3)),), eos_id=3)
        contaminated = base.with_contamination(spec)
        a = base.logits((1,), (2,))
        b = contaminated.logits((1,), (2,))
        assert np.allclose(a, b, atol=1e-15)

    def test_alpha_one_puts_all_mass_on_reference(self):
        base = build_ngram_base([[1, 2, 1, 2, 3]], V4, order=2, smoothing=0.5)
        spec = ContaminationSpec(alpha=1.0, records=(((1,), (0, 2, 3)),), eos_id=3)
        model = base.with_contamination(spec)
        probs = softmax(model.logits((1,), (0,)))  # on-record prefix, next ref token 2
        assert probs[2] == pytest.approx(1.0, abs=1e-12)

    def test_half_mixture_from_known_base_probability(self):
        # context (1,) with 6 continuations, none of them token 3:
        # base P(3 | 1) = (0 + 1) / (6 + 4) = 0.1
        corpus = [[1, 2]] * 6
        model = build_ngram_base(corpus, V4, order=2, smoothing=1.0)
        assert model.base_probs((1,))[3] == pytest.approx(0.1, abs=1e-12)
        spec = ContaminationSpec(alpha=0.5, records=(((1,), (3,)),), eos_id=3)
        mixed = softmax(model.with_contamination(spec).logits((1,), ()))
        assert mixed[3] == pytest.approx(0.55, abs=1e-12)

    def test_memorized_probability_monotone_in_alpha(self):
        # reference tokens are not the base argmax at any step of this record
        corpus = [[1, 2, 2, 3]] * 8
        base = build_ngram_base(corpus, V4, order=3, smoothing=0.2)
        record = ((1,), (0, 1, 3))
        previous = None
        for alpha in [0.0, 0.2, 0.5, 0.8, 0.95, 1.0]:
            model = base.with_contamination(
                ContaminationSpec(alpha=alpha, records=(record,), eos_id=3)
            )
            probs_along_ref = []
            reference = record[1]
            for i in range(len(reference)):
                probs = softmax(model.logits(record[0], reference[:i]))
                probs_along_ref.append(probs[reference[i]])
            if previous is not None:
                assert all(
                    current >= prior - 1e-12
                    for current, prior in zip(probs_along_ref, previous)
                )
            previous = probs_along_ref

    def test_determinism_bitwise(self):
        model = build_ngram_base([[1, 2, 1, 2, 3]], V4, order=3, smoothing=0.1)
        assert model.logits((1,), (2,)).tobytes() == model.logits((1,), (2,)).tobytes()

    def test_off_record_prefix_breaks_match_permanently(self):
        base = build_ngram_base([[1, 2, 1, 2, 3]], V4, order=2, smoothing=0.5)
        spec = ContaminationSpec(alpha=1.0, records=(((1,), (0, 2, 3)),), eos_id=3)
        model = base.with_contamination(spec)
        on_record = model.next_probs((1,), (0,))
        off_record = model.next_probs((1,), (2,))
        assert on_record[2] == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(off_record, base.next_probs((1,), (2,)))

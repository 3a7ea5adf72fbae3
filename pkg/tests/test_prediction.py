from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procplan.corpus import build_vocabulary, make_enhanced_descriptions, make_task_specs
from procplan.errors import ValidationError
from procplan.prediction import (
    ActionLookupProvider,
    CaptionBagOfWordsProvider,
    Prediction,
    RougeVariant,
    VisualPassthroughProvider,
    build_action_lookup,
    embed_caption,
    embed_prediction,
    embed_visual,
    hashed_bag_of_words,
    load_embedding_table,
    predict_action,
    randomize_unknown,
    restrict_to_task,
    rouge1,
    rouge2,
    save_embedding_table,
)


def oracle_rouge(candidate, reference, n, variant):
    """Brute-force clipped n-gram overlap: enumerate candidate n-grams and
    consume reference n-grams one by one."""
    cand = [tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1)]
    ref = [tuple(reference[i : i + n]) for i in range(len(reference) - n + 1)]
    if not cand or not ref:
        return 0.0
    pool = list(ref)
    overlap = 0
    for gram in cand:
        if gram in pool:
            pool.remove(gram)
            overlap += 1
    p = overlap / len(cand)
    r = overlap / len(ref)
    if variant is RougeVariant.PRECISION:
        return p
    if variant is RougeVariant.RECALL:
        return r
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


WORDS = ["add", "coffee", "pour", "water", "milk", "press", "the", "cup"]


class TestRougeHandCases:
    def test_identity_scores_one_for_all_variants(self):
        toks = ("add", "coffee", "now")
        for variant in RougeVariant:
            assert rouge1(toks, toks, variant) == 1.0
            assert rouge2(toks, toks, variant) == 1.0

    def test_overlap_hand_count(self):
        cand = ("add", "coffee", "to", "filter")
        ref = ("add", "coffee")
        assert rouge1(cand, ref, RougeVariant.PRECISION) == 0.5
        assert rouge1(cand, ref, RougeVariant.RECALL) == 1.0
        assert rouge1(cand, ref, RougeVariant.F1) == pytest.approx(2 / 3)

    def test_disjoint_scores_zero(self):
        assert rouge1(("a", "b"), ("c", "d"), RougeVariant.F1) == 0.0

    def test_bigram_hand_count(self):
        assert rouge2(("a", "b", "c"), ("b", "c", "d"), RougeVariant.RECALL) == 0.5

    def test_single_token_candidate_has_no_bigrams(self):
        assert rouge2(("a",), ("a", "b"), RougeVariant.PRECISION) == 0.0

    def test_empty_candidate_scores_zero(self):
        assert rouge1((), ("a",), RougeVariant.PRECISION) == 0.0

    def test_empty_reference_rejected(self):
        with pytest.raises(ValidationError):
            rouge1(("a",), (), RougeVariant.PRECISION)

    def test_clipped_multiset_counts(self):
        # "the the the" vs "the": overlap clips at the reference count
        assert rouge1(("the", "the", "the"), ("the",), RougeVariant.PRECISION) == (
            pytest.approx(1 / 3)
        )


class TestRougeOracle:
    def test_thousand_random_pairs_match_oracle_exactly(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            cand = tuple(rng.choice(WORDS, size=rng.integers(0, 9)))
            ref = tuple(rng.choice(WORDS, size=rng.integers(1, 9)))
            variant = list(RougeVariant)[rng.integers(3)]
            assert rouge1(cand, ref, variant) == oracle_rouge(cand, ref, 1, variant)
            assert rouge2(cand, ref, variant) == oracle_rouge(cand, ref, 2, variant)

    @settings(max_examples=200, deadline=None)
    @given(
        cand=st.lists(st.sampled_from(WORDS), max_size=10),
        ref=st.lists(st.sampled_from(WORDS), min_size=1, max_size=10),
        variant=st.sampled_from(list(RougeVariant)),
    )
    def test_rouge_properties(self, cand, ref, variant):
        score = rouge1(tuple(cand), tuple(ref), variant)
        assert 0.0 <= score <= 1.0
        assert score == oracle_rouge(tuple(cand), tuple(ref), 1, variant)


def demo_candidates():
    return {
        1: ("add", "coffee"),
        2: ("pour", "water"),
        3: ("press", "coffee", "firmly"),
    }


class TestPredictAction:
    def test_exact_description_match(self):
        pred = predict_action([("press", "coffee", "firmly")], demo_candidates())
        assert pred.action_id == 3
        assert pred.best_score == 1.0
        assert pred.matched_caption_index == 0

    def test_all_below_threshold_is_unknown(self):
        pred = predict_action(
            [("steam", "milk", "gently", "x")], demo_candidates(), threshold=0.5
        )
        assert pred.is_unknown
        assert pred.best_score < 0.5
        assert pred.matched_caption_index is None

    def test_argmax_over_pairs(self):
        captions = [("add", "tea", "bag", "slowly", "x"), ("pour", "water")]
        pred = predict_action(captions, demo_candidates())
        assert pred.action_id == 2
        assert pred.matched_caption_index == 1

    def test_tie_breaks_to_lowest_action_then_caption(self):
        captions = [("pour", "coffee")]  # 0.5 vs action 1 and action 2
        pred = predict_action(captions, demo_candidates(), threshold=0.5)
        assert pred.action_id == 1
        captions = [("coffee", "zzz"), ("add", "zzz")]  # equal scores, two captions
        pred = predict_action(captions, demo_candidates(), threshold=0.5)
        assert (pred.action_id, pred.matched_caption_index) == (1, 0)

    def test_threshold_zero_never_unknown(self):
        pred = predict_action([("zzz",)], demo_candidates(), threshold=0.0)
        assert not pred.is_unknown

    def test_threshold_above_one_always_unknown(self):
        pred = predict_action(
            [("add", "coffee")], demo_candidates(), threshold=1.000001
        )
        assert pred.is_unknown

    def test_raising_threshold_only_flips_to_unknown(self):
        rng = np.random.default_rng(21)
        candidates = demo_candidates()
        for _ in range(300):
            captions = [
                tuple(rng.choice(WORDS, size=rng.integers(1, 6)))
                for _ in range(rng.integers(1, 4))
            ]
            low = predict_action(captions, candidates, threshold=0.5)
            high = predict_action(captions, candidates, threshold=0.9)
            if not high.is_unknown:
                assert high.action_id == low.action_id
            if low.is_unknown:
                assert high.is_unknown

    def test_empty_captions_rejected(self):
        with pytest.raises(ValidationError):
            predict_action([], demo_candidates())


class TestEmbeddings:
    def setup_method(self):
        specs = make_task_specs(5, (4, 4, 4, 3, 3))
        self.vocab = build_vocabulary(specs, None)
        self.enhanced = make_enhanced_descriptions(self.vocab)
        self.provider = build_action_lookup(self.vocab, 32, self.enhanced)

    def test_unknown_embeds_to_zero(self):
        vec = embed_prediction(Prediction(None, 0.1, None), self.provider)
        assert np.array_equal(vec, np.zeros(32))

    def test_action_embeds_to_table_row(self):
        vec = embed_prediction(Prediction(0, 1.0, 0), self.provider)
        assert np.array_equal(vec, self.provider.table[0])

    def test_distinct_actions_are_separable(self):
        table = self.provider.table
        for i in range(len(self.vocab)):
            for j in range(i + 1, len(self.vocab)):
                cos = float(table[i] @ table[j])
                assert cos < 1.0 - 1e-9
        assert float(table[0] @ table[0]) == pytest.approx(1.0)

    def test_caption_embedding_picks_least_nll(self):
        captions = [
            (("pour", "water"), 2.1),
            (("add", "coffee"), 0.3),
            (("press", "coffee"), 1.7),
        ]
        got = embed_caption(captions, CaptionBagOfWordsProvider(16))
        assert np.allclose(got, hashed_bag_of_words(("add", "coffee"), 16))

    def test_caption_embedding_deterministic(self):
        captions = [(("add", "coffee"), 0.5)]
        a = embed_caption(captions, CaptionBagOfWordsProvider(16))
        b = embed_caption(captions, CaptionBagOfWordsProvider(16))
        assert np.array_equal(a, b)

    def test_empty_caption_embeds_to_zero(self):
        got = embed_caption([((), 0.0)], CaptionBagOfWordsProvider(16))
        assert np.array_equal(got, np.zeros(16))

    def test_visual_identity(self):
        x = np.arange(8.0)
        got = embed_visual(x, VisualPassthroughProvider(8))
        assert np.array_equal(got, x)

    def test_visual_projection_shape(self):
        provider = VisualPassthroughProvider.projected(32, 16, seed=3)
        out = embed_visual(np.ones(32), provider)
        assert out.shape == (16,)
        assert np.array_equal(
            embed_visual(np.zeros(32), provider), np.zeros(16)
        )

    def test_visual_dim_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            embed_visual(np.ones(5), VisualPassthroughProvider(8))

    def test_restrict_to_task(self):
        cands = restrict_to_task(self.vocab, 3)
        assert set(cands) == set(self.vocab.task_map[3])
        assert len(restrict_to_task(self.vocab, None)) == 18

    def test_table_file_round_trip(self, tmp_path):
        path = tmp_path / "table.txt"
        save_embedding_table(self.provider, path)
        loaded = load_embedding_table(path)
        assert np.array_equal(loaded.table, self.provider.table)


class TestRandomizeUnknown:
    def setup_method(self):
        self.vocab = build_vocabulary(make_task_specs(5, (4, 4, 4, 3, 3)))

    def test_action_passes_through(self):
        pred = Prediction(5, 0.9, 0)
        assert randomize_unknown(pred, self.vocab, seed=1) is pred

    def test_deterministic_per_seed(self):
        pred = Prediction(None, 0.2, None)
        a = randomize_unknown(pred, self.vocab, seed=9)
        b = randomize_unknown(pred, self.vocab, seed=9)
        assert a.action_id == b.action_id

    def test_uniform_over_vocabulary(self):
        pred = Prediction(None, 0.2, None)
        counts = Counter(
            randomize_unknown(pred, self.vocab, seed=s).action_id
            for s in range(10000)
        )
        n, k = 10000, 18
        expected = n / k
        sigma = np.sqrt(n * (1 / k) * (1 - 1 / k))
        for action_id in range(k):
            assert abs(counts[action_id] - expected) <= 3 * sigma

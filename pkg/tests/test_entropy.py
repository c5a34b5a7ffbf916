import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import entropy as scipy_entropy

from cder.covertree import CoverTreeConfig, build_cover_tree
from cder.data import CloudCollection, PointCloud, assign_weights, pool
from cder.entropy import (
    ENTROPY_ONE_TOL,
    Decision,
    decide,
    delta_entropy,
    dominant_labels,
    entropy,
    gather_regions,
    region_label_weights,
    select_regions,
)
from cder.synth import gen_blobs

# 1.5 / log2(3), evaluated once with mpmath at 30 digits and frozen
THREE_LABEL_VALUE = 0.946394630357186

weight_vectors = st.lists(st.floats(0, 1e3, allow_nan=False), min_size=2, max_size=6).filter(lambda w: sum(w) > 1e-9)


class TestEntropy:
    def test_equal_weights(self):
        assert entropy([0.3, 0.3]) == pytest.approx(1.0, abs=1e-12)

    def test_one_hot(self):
        assert entropy([0.7, 0.0]) == 0.0

    def test_three_labels(self):
        assert abs(entropy([0.5, 0.25, 0.25]) - THREE_LABEL_VALUE) < 1e-12
        assert abs(entropy([0.5, 0.25, 0.25]) - 1.5 / math.log2(3)) < 1e-12

    def test_single_label_is_zero(self):
        assert entropy([4.0]) == 0.0

    @pytest.mark.parametrize("bad", [[0.0, 0.0], [0.5, -0.1], [np.nan, 1.0]])
    def test_errors(self, bad):
        with pytest.raises(ValueError):
            entropy(bad)

    def test_empty_region_message(self):
        with pytest.raises(ValueError, match="empty region"):
            entropy([0, 0, 0])

    @given(weight_vectors)
    def test_matches_scipy(self, w):
        assert abs(entropy(w) - scipy_entropy(w, base=len(w))) < 1e-9

    @given(weight_vectors, st.floats(1e-6, 1e6))
    def test_scale_invariant(self, w, c):
        assert abs(entropy(np.asarray(w) * c) - entropy(w)) < 1e-12

    @given(weight_vectors, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, w, rnd):
        p = list(w)
        rnd.shuffle(p)
        assert abs(entropy(p) - entropy(w)) < 1e-12

    @given(weight_vectors)
    def test_unit_range(self, w):
        assert 0.0 <= entropy(w) <= 1.0

    @given(st.integers(2, 20))
    def test_uniform_and_one_hot_exact(self, L):
        assert abs(entropy(np.full(L, 0.37)) - 1.0) < 1e-12
        hot = np.zeros(L)
        hot[L // 2] = 2.0
        assert entropy(hot) == 0.0


class TestDecide:
    def test_build(self):
        assert decide(0.2, 0.5, 0.9, (3, 7)) is Decision.BUILD

    def test_all_max(self):
        assert decide(1.0, 1.0, 1.0, (3, 7)) is Decision.APPEND_ALL_SUCCESSORS

    def test_annulus_may_be_purer(self):
        assert decide(0.5, 0.2, 0.9, (3, 7)) is Decision.APPEND_SUCCESSORS_EXCEPT_SELF

    def test_keep_self(self):
        assert decide(0.5, 0.6, 0.1, (3, 7)) is Decision.APPEND_SELF

    def test_successors_when_alpha_highest(self):
        assert decide(0.9, 0.2, 0.5, (3, 7)) is Decision.APPEND_SUCCESSORS_EXCEPT_SELF

    def test_pass(self):
        assert decide(0.9, 0.5, 0.2, (3, 7)) is Decision.PASS
        assert decide(0.9, 0.5, 0.2, (3, 7), parsimonious=False) is Decision.APPEND_ALL_SUCCESSORS

    @pytest.mark.parametrize("counts", [(1, 7), (3, 1), (1, 1)])
    def test_lone_child(self, counts):
        assert decide(0.2, 0.5, 0.9, counts) is Decision.PASS
        assert decide(0.2, 0.5, 0.9, counts, parsimonious=False) is Decision.APPEND_ALL_SUCCESSORS

    def test_any_entropy_at_one(self):
        assert decide(0.1, 0.2, 1.0, (3, 7)) is Decision.APPEND_ALL_SUCCESSORS
        assert decide(0.1, 1.0 - ENTROPY_ONE_TOL / 2, 0.3, (3, 7)) is Decision.APPEND_ALL_SUCCESSORS

    def test_ties_take_earliest_branch(self):
        assert decide(0.4, 0.4, 0.4, (2, 2)) is Decision.BUILD

    def test_nan(self):
        with pytest.raises(ValueError):
            decide(np.nan, 0.1, 0.1, (3, 3))

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.integers(0, 5), st.integers(0, 5), st.booleans())
    def test_total(self, a, b, g, na, nb, pars):
        d = decide(a, b, g, (na, nb), pars)
        assert isinstance(d, Decision)
        if not pars:
            assert d is not Decision.PASS


class TestDominantAndLoss:
    def test_dominant(self):
        assert dominant_labels(np.array([0.75, 0.25])).tolist() == [0]
        assert dominant_labels(np.array([0.4, 0.4, 0.2])).tolist() == [0, 1]
        assert dominant_labels(np.array([0.5, 0.5])).tolist() == []
        assert dominant_labels(np.array([0.3])).tolist() == [0]

    def test_delta_entropy(self):
        w = np.array([0.75, 0.25])
        assert delta_entropy(w, [0]) == pytest.approx(scipy_entropy(w, base=2), abs=1e-12)
        w3 = np.array([0.4, 0.4, 0.2])
        want = scipy_entropy(w3, base=3) - scipy_entropy([0.4, 0.4, 0.0], base=3)
        assert delta_entropy(w3, [0, 1]) == pytest.approx(want, abs=1e-12)
        assert delta_entropy(np.array([1.0, 0.0]), [0]) == 0.0


def random_collection(seed, n_clouds=6, n=40, L=2):
    rng = np.random.default_rng(seed)
    clouds = tuple(PointCloud(rng.normal(size=(n, 2)) + (k % L), label=k % L, id=k) for k in range(n_clouds))
    return CloudCollection(clouds, tuple(range(L)))


class TestRegions:
    def test_root_regions(self):
        tree = build_cover_tree(pool(assign_weights(random_collection(0))))
        r = gather_regions(tree, 0, 0)
        assert np.array_equal(r.beta, np.arange(tree.pooled.n))
        assert np.array_equal(r.gamma, r.beta)
        assert np.array_equal(r.alpha, tree.levels[1].children(0))

    @pytest.mark.parametrize("seed", range(4))
    def test_nesting_and_weights(self, seed):
        theta = [0.5, math.sqrt(2) - 1, (math.sqrt(5) - 1) / 2, 0.65][seed]
        pooled = pool(assign_weights(random_collection(seed, L=3)))
        tree = build_cover_tree(pooled, CoverTreeConfig(theta=theta))
        for ell in range(tree.depth):
            for a in range(tree.levels[ell].n_adults):
                r = gather_regions(tree, a, ell)
                A, B, G = set(r.alpha.tolist()), set(r.beta.tolist()), set(r.gamma.tolist())
                assert A <= B <= G
                wa, wb, wg = region_label_weights(tree, a, ell)
                for idx, w in ((r.alpha, wa), (r.beta, wb), (r.gamma, wg)):
                    direct = np.bincount(pooled.labels[idx], weights=pooled.weights[idx], minlength=3)
                    assert np.allclose(direct, w, rtol=1e-12, atol=1e-15)

    def test_unchanged_old_adult(self):
        tree = build_cover_tree(pool(assign_weights(random_collection(3))))
        seen = 0
        for ell in range(1, tree.depth):
            lvl, below = tree.levels[ell], tree.levels[ell - 1]
            for a in range(below.n_adults):
                if lvl.child_count[a] == below.child_count[a]:
                    r = gather_regions(tree, a, ell)
                    assert np.array_equal(r.beta, r.gamma)
                    seen += 1
        assert seen > 0


class TestSelect:
    def test_single_label_collapses(self):
        rng = np.random.default_rng(0)
        col = CloudCollection(tuple(PointCloud(rng.normal(size=(30, 2)), label=0, id=k) for k in range(3)), ("x",))
        sel = select_regions(pool(assign_weights(col)))
        assert len(sel.events) == 1
        ev = sel.events[0]
        assert ev.adult == 0 and ev.level == 0 and ev.delta_entropy == 0.0

    def test_blobs_shape(self):
        pooled = pool(assign_weights(gen_blobs(0)))
        sel = select_regions(pooled)
        full = build_cover_tree(pooled)
        assert sel.stop_level < full.depth
        for s in sel.stats:
            if s.level >= 3:
                assert s.n_candidates <= 0.5 * s.n_adults

    def test_each_adult_built_once(self):
        sel = select_regions(pool(assign_weights(gen_blobs(2))))
        adults = [ev.adult for ev in sel.events]
        assert len(adults) == len(set(adults))

    def test_events_coarse_to_fine(self):
        sel = select_regions(pool(assign_weights(gen_blobs(1))))
        levels = [ev.level for ev in sel.events]
        assert levels == sorted(levels)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_non_parsimonious_is_superset(self, seed):
        pooled = pool(assign_weights(random_collection(seed, n_clouds=8, n=30)))
        lean = select_regions(pooled)
        full = select_regions(pooled, parsimonious=False)
        key = lambda s: {(e.adult, e.level) for e in s.events}
        assert key(lean) <= key(full)
        by_level = {s.level: s.n_candidates for s in full.stats}
        for s in lean.stats:
            assert s.n_candidates <= by_level.get(s.level, 0)

    def test_dead_branch_logged_once(self, caplog):
        import cder.entropy as mod
        mod._dead_branch_logged = False
        with caplog.at_level("DEBUG", logger="cder.entropy"):
            decide(0.9, 0.5, 0.2, (3, 3))
            decide(0.9, 0.5, 0.2, (3, 3))
        assert sum("shadowed" in r.message for r in caplog.records) == 1

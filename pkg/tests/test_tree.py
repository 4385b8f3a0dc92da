"""Tests for clade bookkeeping, attenuation arithmetic, and freezing."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cladesearch.beliefs import beta_mean, make_rng
from cladesearch.dsl import parse
from cladesearch.tree import FrozenCladeError, SearchTree, TreeConfig

X = parse("x")


def build_random_tree(seed, n_ops=120, lam=0.8):
    """Random interleaving of attach and outcome events."""
    rng = make_rng(seed)
    t = SearchTree(TreeConfig(lambda_decay=lam))
    ids = [0]
    for _ in range(n_ops):
        if rng.random() < 0.4:
            parent = ids[int(rng.integers(len(ids)))]
            ids.append(t.add_child(parent, X))
        else:
            t.record_outcome(ids[int(rng.integers(len(ids)))], float(rng.random()))
    return t


class TestConstruction:
    def test_new_tree_root(self):
        t = SearchTree(TreeConfig(prior_alpha=2.0, prior_beta=2.0))
        root = t.root
        assert root.id == 0 and root.parent is None and root.depth == 0
        assert root.heuristic is None
        assert (root.local.alpha, root.local.beta) == (2.0, 2.0)
        assert (root.clade.alpha, root.clade.beta) == (2.0, 2.0)
        assert root.visits == 0 and root.own_evals == 0 and not root.frozen
        assert root.best_raw_score == -math.inf

    def test_add_child_ids_and_depth(self):
        t = SearchTree(TreeConfig())
        a = t.add_child(0, X, created_at_eval=3)
        b = t.add_child(a, X)
        assert (a, b) == (1, 2)
        assert t.node(b).depth == 2
        assert t.node(a).children == [b]
        assert t.node(a).created_at_eval == 3

    def test_add_child_rejects_frozen_parent(self):
        t = SearchTree(TreeConfig())
        a = t.add_child(0, X)
        t.freeze_clade(a)
        with pytest.raises(FrozenCladeError):
            t.add_child(a, X)

    def test_unknown_ids_raise(self):
        t = SearchTree(TreeConfig())
        with pytest.raises(KeyError):
            t.add_child(99, X)
        with pytest.raises(KeyError):
            t.record_outcome(99, 0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TreeConfig(lambda_decay=1.5)
        with pytest.raises(ValueError):
            TreeConfig(lambda_decay=-0.1)
        with pytest.raises(ValueError):
            TreeConfig(prior_alpha=0.0)
        with pytest.raises(ValueError):
            TreeConfig(v_min=0)
        TreeConfig(lambda_decay=0.0)
        TreeConfig(lambda_decay=1.0)


class TestOutcomePropagation:
    def test_depth_two_chain_attenuation(self):
        t = SearchTree(TreeConfig(lambda_decay=0.8))
        a = t.add_child(0, X)
        b = t.add_child(a, X)
        t.record_outcome(b, 1.0)
        nb, na, root = t.node(b), t.node(a), t.root
        assert (nb.local.alpha, nb.local.beta) == (2.0, 1.0)
        assert (nb.clade.alpha, nb.clade.beta) == (2.0, 1.0)
        assert na.clade.alpha == pytest.approx(1.8)
        assert na.clade.beta == 1.0
        assert root.clade.alpha == pytest.approx(1.0 + 0.64)
        assert root.clade.beta == 1.0
        assert (na.local.alpha, na.local.beta) == (1.0, 1.0)
        assert (nb.visits, na.visits, root.visits) == (1, 1, 1)
        assert (nb.own_evals, na.own_evals, root.own_evals) == (1, 0, 0)

    def test_fractional_outcome_splits_counts(self):
        t = SearchTree(TreeConfig())
        a = t.add_child(0, X)
        t.record_outcome(a, 0.25)
        assert t.node(a).local.alpha == 1.25
        assert t.node(a).local.beta == 1.75

    def test_outcome_range_enforced(self):
        t = SearchTree(TreeConfig())
        a = t.add_child(0, X)
        for bad in (-0.1, 1.1, math.nan):
            with pytest.raises(ValueError):
                t.record_outcome(a, bad)

    def test_lambda_one_conserves_mass(self):
        t = build_random_tree(1, n_ops=150, lam=1.0)
        root = t.root
        recorded = sum(n.own_evals for n in t.nodes.values())
        total = (root.clade.alpha - 1.0) + (root.clade.beta - 1.0)
        assert total == pytest.approx(recorded, abs=1e-9)

    def test_lambda_zero_makes_clades_local(self):
        t = build_random_tree(2, n_ops=150, lam=0.0)
        for n in t.nodes.values():
            assert n.clade.alpha == pytest.approx(n.local.alpha, abs=1e-12)
            assert n.clade.beta == pytest.approx(n.local.beta, abs=1e-12)

    def test_visits_count_whole_path(self):
        t = SearchTree(TreeConfig(lambda_decay=0.0))
        a = t.add_child(0, X)
        b = t.add_child(a, X)
        for _ in range(3):
            t.record_outcome(b, 0.5)
        t.record_outcome(a, 0.5)
        assert t.node(b).visits == 3
        assert t.node(a).visits == 4
        assert t.root.visits == 4

    @given(st.integers(0, 300), st.sampled_from([0.0, 0.3, 0.5, 0.8, 1.0]))
    @settings(max_examples=60, deadline=None)
    def test_incremental_matches_bruteforce(self, seed, lam):
        t = build_random_tree(seed, n_ops=90, lam=lam)
        for nid, node in t.nodes.items():
            oracle = t.clade_params_bruteforce(nid)
            assert node.clade.alpha == pytest.approx(oracle.alpha, abs=1e-9)
            assert node.clade.beta == pytest.approx(oracle.beta, abs=1e-9)

    def test_update_best_raw_is_path_maximum(self):
        t = SearchTree(TreeConfig())
        a = t.add_child(0, X)
        b = t.add_child(a, X)
        t.update_best_raw(b, -5.0)
        t.update_best_raw(a, -7.0)
        assert t.node(b).best_raw_score == -5.0
        assert t.node(a).best_raw_score == -5.0
        assert t.root.best_raw_score == -5.0
        t.update_best_raw(b, -2.0)
        assert t.node(a).best_raw_score == -2.0


class TestFreezing:
    def make_two_arm_tree(self):
        # arm a performs, arm b does not
        t = SearchTree(TreeConfig(lambda_decay=0.8, v_min=10, gamma_freeze=0.5))
        a = t.add_child(0, X)
        b = t.add_child(0, X)
        c = t.add_child(b, X)
        for _ in range(12):
            t.record_outcome(a, 1.0)
        for i in range(12):
            t.record_outcome(c if i % 2 else b, 0.0)
        return t, a, b, c

    def test_sweep_freezes_underperforming_clade(self):
        t, a, b, c = self.make_two_arm_tree()
        gb = t.best_unfrozen_clade_mean()
        assert gb == pytest.approx(beta_mean(t.node(a).clade))
        newly = t.freeze_sweep(gb)
        assert b in newly and c in newly
        assert a not in newly and 0 not in newly
        assert t.node(b).frozen and t.node(c).frozen

    def test_sweep_is_monotone_and_idempotent(self):
        t, a, b, c = self.make_two_arm_tree()
        gb = t.best_unfrozen_clade_mean()
        first = set(t.freeze_sweep(gb))
        second = t.freeze_sweep(t.best_unfrozen_clade_mean())
        assert second == []
        assert first == {b, c}

    def test_visits_below_vmin_protects(self):
        t = SearchTree(TreeConfig(v_min=50, gamma_freeze=1.0))
        a = t.add_child(0, X)
        for _ in range(10):
            t.record_outcome(a, 0.0)
        assert t.freeze_sweep(1.0) == []

    def test_cascade_includes_fresh_descendants(self):
        # a bad parent drags an unvisited child with it
        t = SearchTree(TreeConfig(v_min=5, gamma_freeze=0.9))
        a = t.add_child(0, X)
        for _ in range(20):
            t.record_outcome(a, 0.0)
        fresh = t.add_child(a, X)
        newly = t.freeze_sweep(0.9)
        assert fresh in newly

    def test_unfrozen_children_filter(self):
        t, a, b, c = self.make_two_arm_tree()
        assert t.unfrozen_children(0) == [a, b]
        t.freeze_sweep(t.best_unfrozen_clade_mean())
        assert t.unfrozen_children(0) == [a]

    def test_invalid_global_best(self):
        t = SearchTree(TreeConfig())
        with pytest.raises(ValueError):
            t.freeze_sweep(-1.0)
        with pytest.raises(ValueError):
            t.freeze_sweep(math.inf)


class TestSnapshot:
    def test_format_and_roundtrip_floats(self):
        t = SearchTree(TreeConfig(lambda_decay=0.8))
        a = t.add_child(0, parse("neg(x)"))
        t.record_outcome(a, 0.3)
        t.freeze_clade(a)
        text = t.to_text()
        lines = text.strip().split("\n")
        assert lines[0].startswith("# id")
        assert len(lines) == 3
        root_fields = lines[1].split("\t")
        assert root_fields[:3] == ["0", "-1", "0"]
        assert root_fields[8] == "-"
        child_fields = lines[2].split("\t")
        assert child_fields[:3] == ["1", "0", "1"]
        assert child_fields[7] == "1"
        assert child_fields[8] == "neg(x)"
        assert float(child_fields[3]) == t.node(a).local.alpha
        assert float(child_fields[6]) == t.node(a).clade.beta

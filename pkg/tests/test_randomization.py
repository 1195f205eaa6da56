"""Re-randomization draws, seed derivation, and p-value mechanics."""

from collections import Counter

import numpy as np
import pytest
from scipy import stats as sps

from villagenet.core import TreatmentDesign
from villagenet.effects import ContrastSpec
from villagenet.metrics import metric_table
from villagenet.randomization import (
    RandomizationError,
    derive_stream,
    permute_assignment,
    permutation_pvalue,
    permutation_suite,
    pvalue_from_draws,
)

from conftest import make_panel


class TestDeriveStream:
    def test_same_inputs_same_prefix(self):
        a = derive_stream(123, 7).random(16)
        b = derive_stream(123, 7).random(16)
        assert np.array_equal(a, b)

    def test_out_of_order_generation(self):
        forward = [derive_stream(9, i).random(4) for i in range(100)]
        backward = [derive_stream(9, i).random(4) for i in reversed(range(100))]
        for i in range(100):
            assert np.array_equal(forward[i], backward[99 - i])

    def test_distinct_draws_distinct_streams(self):
        assert not np.array_equal(derive_stream(5, 0).random(8),
                                  derive_stream(5, 1).random(8))

    def test_master_seeds_uncorrelated_chi2(self):
        u = derive_stream(1000, 0).random(4000)
        v = derive_stream(2000, 0).random(4000)
        counts = np.histogram2d(u, v, bins=4, range=[[0, 1], [0, 1]])[0]
        _, p, _, _ = sps.chi2_contingency(counts)
        assert p > 0.01


def two_arm_design():
    return TreatmentDesign(
        {"a": 0.0, "b": 1.0},
        {"a": {"a1": False, "a2": False}, "b": {"b1": True, "b2": True}},
    )


class TestPermuteAssignment:
    def test_two_villages_two_possible_stage1_draws(self):
        design = two_arm_design()
        seen = set()
        for i in range(64):
            draw = permute_assignment(design, derive_stream(3, i))
            seen.add((draw.village_dosages["a"], draw.village_dosages["b"]))
        assert seen == {(0.0, 1.0), (1.0, 0.0)}

    def test_zero_dosage_village_never_treated(self):
        design = two_arm_design()
        for i in range(32):
            draw = permute_assignment(design, derive_stream(4, i))
            for village, alpha in draw.village_dosages.items():
                n_treated = sum(draw.household_treatments[village].values())
                if alpha == 0.0:
                    assert n_treated == 0
                else:
                    assert n_treated == 2

    def test_dosage_multiset_preserved(self):
        design = TreatmentDesign(
            {"a": 0.0, "b": 0.2, "c": 0.5, "d": 0.5},
            {"a": {"h1": False, "h2": False},
             "b": {"h3": False, "h4": False, "h5": False, "h6": False, "h7": True},
             "c": {"h8": True, "h9": False},
             "d": {"ha": True, "hb": False}},
        )
        want = Counter(design.village_dosages.values())
        for i in range(10_000):
            draw = permute_assignment(design, derive_stream(5, i))
            assert Counter(draw.village_dosages.values()) == want

    def test_blocks_confine_permutation(self):
        design = TreatmentDesign(
            {"a": 0.0, "b": 1.0, "c": 0.0, "d": 1.0},
            {"a": {"h1": False}, "b": {"h2": True},
             "c": {"h3": False}, "d": {"h4": True}},
        )
        blocks = {"a": "x", "b": "x", "c": "y", "d": "y"}
        for i in range(50):
            draw = permute_assignment(design, derive_stream(6, i), blocks=blocks)
            assert {draw.village_dosages["a"], draw.village_dosages["b"]} == {0.0, 1.0}
            assert {draw.village_dosages["c"], draw.village_dosages["d"]} == {0.0, 1.0}

    def test_missing_block_label_errors(self):
        with pytest.raises(RandomizationError, match="block"):
            permute_assignment(two_arm_design(), derive_stream(1, 0), blocks={"a": "x"})


class TestPvalueFormula:
    def test_add_one_two_sided(self):
        draws = [2.0] * 68 + [0.5] * (1999 - 68)
        assert pvalue_from_draws(1.0, draws) == pytest.approx(69 / 2000)

    def test_constant_statistic_p_one(self):
        assert pvalue_from_draws(1.5, [1.5] * 100) == 1.0

    def test_monotone_in_observed(self):
        rng = np.random.default_rng(0)
        draws = rng.normal(size=200)
        ps = [pvalue_from_draws(obs, draws) for obs in (0.0, 0.5, 1.0, 2.0, 5.0)]
        assert ps == sorted(ps, reverse=True)

    def test_lower_bound(self):
        assert pvalue_from_draws(99.0, list(range(10))) == pytest.approx(1 / 11)

    def test_one_sided(self):
        draws = [-1.0, 0.0, 1.0, 2.0]
        assert pvalue_from_draws(1.0, draws, sided="right") == pytest.approx(3 / 5)
        assert pvalue_from_draws(1.0, draws, sided="left") == pytest.approx(4 / 5)


def _perm_panel():
    villages = {
        "c1": {"dosage": 0.0,
               "households": {f"ch{k}": [f"c{k}"] for k in range(6)}},
        "t1": {"dosage": 0.5,
               "households": {f"th{k}": [f"t{k}"] for k in range(6)},
               "treated": ["th0", "th1", "th2"]},
    }
    edges = {
        ("c1", 1, "health"): [("c0", "c1"), ("c1", "c2"), ("c3", "c4")],
        ("c1", 3, "health"): [("c0", "c1"), ("c3", "c4")],
        ("t1", 1, "health"): [("t0", "t3"), ("t1", "t4"), ("t2", "t5"), ("t3", "t4")],
        ("t1", 3, "health"): [("t0", "t3"), ("t1", "t4")],
    }
    return make_panel(villages, edges)


class TestPermutationPvalue:
    SPEC = ContrastSpec(kind="total", dosage_scope="all", layer="health",
                        metric="degree")

    def test_deterministic_given_seed(self):
        panel = _perm_panel()
        r1 = permutation_pvalue(panel, self.SPEC, permutations=60, master_seed=11)
        r2 = permutation_pvalue(panel, self.SPEC, permutations=60, master_seed=11)
        assert r1 == r2

    def test_thread_count_invariance(self):
        panel = _perm_panel()
        serial = permutation_pvalue(panel, self.SPEC, permutations=40,
                                    master_seed=2, threads=1)
        parallel = permutation_pvalue(panel, self.SPEC, permutations=40,
                                      master_seed=2, threads=2)
        assert serial.null_draws == parallel.null_draws
        assert serial.p_value == parallel.p_value

    def test_pvalue_bounds(self):
        panel = _perm_panel()
        res = permutation_pvalue(panel, self.SPEC, permutations=30, master_seed=5)
        assert 1 / 31 <= res.p_value <= 1.0

    def test_suite_matches_single_spec(self):
        panel = _perm_panel()
        table = metric_table(panel, "health")
        suite = permutation_suite(panel, table, [self.SPEC], permutations=25,
                                  master_seed=9)
        single = permutation_pvalue(panel, self.SPEC, permutations=25,
                                    master_seed=9, table=table)
        assert suite[0].p_value == single.p_value

    def test_all_draws_skipped_errors(self):
        # First-order spillover with an edgeless wave-1 network: the focal
        # group is empty under every draw.
        villages = {
            "c1": {"dosage": 0.0, "households": {"h1": ["a"], "h2": ["b"]}},
            "t1": {"dosage": 0.5,
                   "households": {"g1": ["p"], "g2": ["q"]}, "treated": ["g1"]},
        }
        edges = {("c1", 1, "health"): [("a", "b")], ("c1", 3, "health"): [("a", "b")]}
        panel = make_panel(villages, edges)
        spec = ContrastSpec(kind="spillover_first_order", dosage_scope="all",
                            layer="health", metric="degree")
        with pytest.raises((RandomizationError, Exception)):
            permutation_pvalue(panel, spec, permutations=20, master_seed=1)

    def test_partial_skips_reported(self):
        # 12 singleton households; exactly one node is isolated at wave 1, so
        # the first-order group is empty only when that household is drawn.
        n = 12
        chain = [(f"t{k}", f"t{k+1}") for k in range(n - 2)]  # t11 isolated
        villages = {
            "c1": {"dosage": 0.0,
                   "households": {f"ch{k}": [f"c{k}"] for k in range(n)}},
            "t1": {"dosage": 0.05,
                   "households": {f"th{k}": [f"t{k}"] for k in range(n)},
                   "treated": ["th0"]},
        }
        c_chain = [(f"c{k}", f"c{k+1}") for k in range(n - 1)]
        edges = {
            ("c1", 1, "health"): c_chain, ("c1", 3, "health"): c_chain[:-2],
            ("t1", 1, "health"): chain, ("t1", 3, "health"): chain[:-2],
        }
        panel = make_panel(villages, edges)
        spec = ContrastSpec(kind="spillover_first_order", dosage_scope="all",
                            layer="health", metric="degree")
        res = permutation_pvalue(panel, spec, permutations=300, master_seed=3)
        assert 0 < res.skipped <= 30
        assert len(res.null_draws) == 300 - res.skipped
        assert res.p_value >= 1 / (1 + 300)

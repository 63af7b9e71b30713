import json

import numpy as np
import pytest

from hsikit.scene import GroupClassMatrix
from hsikit import splitting as sp
from _oracles import brute_force_split


def problem(P, p_train=0.1, p_val=0.1, p_test=0.4):
    return sp.SplitProblem(
        GroupClassMatrix(np.asarray(P)), p_train=p_train, p_val=p_val, p_test=p_test
    )


def random_instance(rng, n_max=10, c_max=4, pixel_max=60, p_max=0.28):
    n = int(rng.integers(3, n_max + 1))
    c = int(rng.integers(1, c_max + 1))
    P = rng.integers(0, pixel_max, size=(n, c))
    for k in range(c):
        if P[:, k].sum() == 0:
            P[rng.integers(0, n), k] = 1 + rng.integers(0, 10)
    p = rng.uniform(0.0, p_max, size=3)
    return problem(P, *p)


class TestProblemValidation:
    def test_rejects_fractions_summing_to_one(self):
        with pytest.raises(ValueError):
            problem([[5]], 0.5, 0.3, 0.2)

    def test_rejects_empty_class(self):
        with pytest.raises(ValueError):
            problem([[5, 0]], 0.1, 0.1, 0.1)

    def test_rejects_negative_fraction(self):
        with pytest.raises(ValueError):
            problem([[5]], -0.1, 0.1, 0.1)


class TestVerifyAssignment:
    def test_all_pool_zero_proportions(self):
        prob = problem([[10], [20]], 0.0, 0.0, 0.0)
        report = sp.verify_assignment(prob, np.array([2, 2]))
        assert report.feasible
        assert report.objective == 0

    def test_all_pool_infeasible_with_test_demand(self):
        prob = problem([[10], [20]], 0.0, 0.0, 0.1)
        report = sp.verify_assignment(prob, np.array([2, 2]))
        assert not report.feasible
        assert any(v[0] == sp.TEST_SET for v in report.violations)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(0)
        prob = random_instance(rng, n_max=10)
        vec = rng.integers(1, 5, size=prob.n_groups).astype(np.int8)
        report = sp.verify_assignment(prob, vec)
        P = prob.P
        for s in sp.CONSTRAINED_SETS:
            expected = P[vec == s].sum(axis=0) / P.sum(axis=0)
            assert np.allclose(report.proportions[s], expected)
        assert report.objective == P[vec != sp.POOL_SET].sum()

    def test_missing_group_is_malformed(self):
        prob = problem([[10], [20]])
        with pytest.raises(sp.MalformedAssignmentError):
            sp.verify_assignment(prob, np.array([2]))
        with pytest.raises(sp.MalformedAssignmentError):
            sp.verify_assignment(prob, {0: 2})
        with pytest.raises(sp.MalformedAssignmentError):
            sp.verify_assignment(prob, np.array([2, 7]))


class TestSolveExact:
    def test_documented_six_group_instance(self):
        prob = problem(
            [[10, 0], [0, 10], [5, 5], [5, 5], [10, 10], [10, 10]], 0.2, 0.2, 0.2
        )
        result = sp.solve_exact(prob)
        best_obj, _ = brute_force_split(prob)
        assert result is not None
        assert result.objective == round(best_obj)
        assert sp.verify_assignment(prob, result).feasible

    def test_zero_proportions_prefer_pool(self):
        prob = problem([[10], [20], [30]], 0.0, 0.0, 0.0)
        result = sp.solve_exact(prob)
        assert result.objective == 0
        assert np.all(result.sets == sp.POOL_SET)

    def test_single_group_two_required_sets_infeasible(self):
        prob = problem([[10]], 0.1, 0.0, 0.1)
        assert sp.solve_exact(prob) is None

    def test_cap_enforced(self):
        P = np.ones((30, 1), dtype=int)
        with pytest.raises(sp.ProblemTooLargeError):
            sp.solve_exact(problem(P), cap=24)

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(15):
            prob = random_instance(rng, n_max=8)
            result = sp.solve_exact(prob)
            best_obj, _ = brute_force_split(prob)
            if result is None:
                assert best_obj is None
            else:
                assert best_obj is not None
                assert result.objective == round(best_obj)
                assert sp.verify_assignment(prob, result).feasible

    def test_lexicographic_tie_breaking(self):
        rng = np.random.default_rng(9)
        for _ in range(6):
            prob = random_instance(rng, n_max=6, c_max=2, pixel_max=8)
            result = sp.solve_exact(prob)
            if result is None:
                continue
            # enumerate all optimal assignments, pick lexicographically smallest
            n = prob.n_groups
            best = None
            for idx in range(4 ** n):
                vec = np.array(
                    [((idx >> (2 * i)) & 3) + 1 for i in range(n)], dtype=np.int8
                )
                report = sp.verify_assignment(prob, vec)
                if not report.feasible or report.objective != result.objective:
                    continue
                key = tuple(vec)
                if best is None or key < best:
                    best = key
            assert tuple(result.sets) == best

    def test_objective_identity(self):
        rng = np.random.default_rng(2)
        prob = random_instance(rng, n_max=8)
        result = sp.solve_heuristic(prob, seed=0, budget=2000)
        total = prob.P.sum()
        pool_pixels = prob.P[result.sets == sp.POOL_SET].sum()
        assert result.objective == total - pool_pixels

    def test_row_scaling_preserves_optimal_structure(self):
        rng = np.random.default_rng(21)
        prob = random_instance(rng, n_max=7, c_max=3)
        scaled = problem(prob.P * 3, prob.p_train, prob.p_val, prob.p_test)
        a, b = sp.solve_exact(prob), sp.solve_exact(scaled)
        if a is None:
            assert b is None
        else:
            assert b.objective == 3 * a.objective
            assert np.array_equal(a.sets, b.sets)


class TestSolveHeuristic:
    def test_tracks_exact_within_ten_percent(self):
        rng = np.random.default_rng(1234)
        checked = 0
        for trial in range(20):
            prob = random_instance(rng, n_max=9)
            exact = sp.solve_exact(prob)
            heur = sp.solve_heuristic(prob, seed=trial, budget=20000)
            if exact is None:
                continue
            checked += 1
            assert heur.feasible
            if exact.objective == 0:
                assert heur.objective == 0
            else:
                assert heur.objective <= 1.10 * exact.objective
        assert checked >= 10

    def test_zero_proportions(self):
        prob = problem([[7], [9]], 0.0, 0.0, 0.0)
        result = sp.solve_heuristic(prob, seed=0, budget=1000)
        assert result.feasible and result.objective == 0

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(77)
        prob = random_instance(rng)
        a = sp.solve_heuristic(prob, seed=5)
        b = sp.solve_heuristic(prob, seed=5)
        assert np.array_equal(a.sets, b.sets)
        assert a.objective == b.objective

    def test_flags_infeasible_instance(self):
        prob = problem([[10]], 0.1, 0.0, 0.1)
        result = sp.solve_heuristic(prob, seed=0, budget=2000)
        assert not result.feasible

    def test_requires_positive_budget(self):
        with pytest.raises(ValueError):
            sp.solve_heuristic(problem([[5]]), budget=0)


class TestDiverseSplits:
    def _feasible_12_group_instance(self):
        rng = np.random.default_rng(3)
        P = rng.integers(5, 40, size=(12, 3))
        return problem(P, 0.1, 0.1, 0.2)

    def test_k1_matches_single_solve(self):
        prob = self._feasible_12_group_instance()
        single = sp.solve_exact(prob)
        portfolio = sp.enumerate_diverse_splits(prob, k=1, min_hamming=2)
        assert len(portfolio.assignments) == 1
        assert np.array_equal(portfolio.assignments[0].sets, single.sets)

    def test_zero_hamming_allows_duplicates(self):
        prob = self._feasible_12_group_instance()
        portfolio = sp.enumerate_diverse_splits(prob, k=3, min_hamming=0)
        assert len(portfolio.assignments) == 3
        assert not portfolio.exhausted
        a = portfolio.assignments
        assert np.array_equal(a[0].sets, a[1].sets)

    def test_pairwise_hamming_floor(self):
        prob = self._feasible_12_group_instance()
        portfolio = sp.enumerate_diverse_splits(prob, k=3, min_hamming=3)
        assert len(portfolio.assignments) >= 2
        for i, a in enumerate(portfolio.assignments):
            assert sp.verify_assignment(prob, a).feasible
            for b in portfolio.assignments[i + 1 :]:
                assert a.hamming(b) >= 3

    def test_exhaustion_flag(self):
        # single group forced into the test set: no second assignment exists
        prob = problem([[10]], 0.0, 0.0, 0.1)
        portfolio = sp.enumerate_diverse_splits(prob, k=4, min_hamming=1)
        assert portfolio.exhausted
        assert len(portfolio.assignments) == 1
        assert portfolio.assignments[0].sets.tolist() == [sp.TEST_SET]


class TestRealizedProportions:
    def test_all_pool(self):
        prob = problem([[10], [20]], 0.0, 0.0, 0.0)
        props = sp.realized_proportions(prob, np.array([2, 2]))
        assert props == {1: 0.0, 2: 1.0, 3: 0.0, 4: 0.0}

    def test_two_equal_groups(self):
        prob = problem([[10], [10]], 0.0, 0.0, 0.0)
        props = sp.realized_proportions(prob, np.array([1, 4]))
        assert props[1] == 0.5 and props[4] == 0.5
        assert props[2] == 0.0 and props[3] == 0.0


class TestSplitFile:
    def test_roundtrip(self, tmp_path):
        prob = problem([[10, 2], [3, 9], [8, 8]], 0.1, 0.1, 0.2)
        result = sp.solve_exact(prob)
        path = tmp_path / "split.json"
        sp.save_split(prob, result, path)
        payload, again = sp.load_split(path)
        assert payload["problem_hash"] == sp.problem_hash(prob)
        assert np.array_equal(again.sets, result.sets)
        assert again.objective == result.objective
        assert again.feasible == result.feasible
        realized = sp.realized_proportions(prob, result)
        assert payload["realized"] == {str(k): v for k, v in realized.items()}

    def test_file_is_json_with_expected_keys(self, tmp_path):
        prob = problem([[10], [20]], 0.0, 0.0, 0.0)
        result = sp.solve_exact(prob)
        path = tmp_path / "split.json"
        sp.save_split(prob, result, path)
        payload = json.loads(path.read_text())
        assert set(payload) == {
            "problem_hash", "proportions", "assignment", "objective",
            "feasible", "realized",
        }

"""Spatially disjoint ground-truth split solvers.

Groups of neighboring polygons are assigned to one of four sets: labeled
training (1), labeled pool (2), validation (3) and test (4). The objective
minimizes the pixels placed in sets {1, 3, 4} (equivalently, maximizes the
labeled pool), subject to every class reaching at least the proportion
``p_s`` of its pixels in each constrained set s in {1, 3, 4}.

Solvers: an exact depth-first branch-and-bound with a fractional-completion
bound, and a greedy + simulated-annealing heuristic for larger instances.
``enumerate_diverse_splits`` stacks Hamming-distance constraints on top of
either solver to produce a portfolio of distinct splits.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .scene import GroupClassMatrix

TRAIN_SET = 1
POOL_SET = 2
VAL_SET = 3
TEST_SET = 4
ALL_SETS = (TRAIN_SET, POOL_SET, VAL_SET, TEST_SET)
CONSTRAINED_SETS = (TRAIN_SET, VAL_SET, TEST_SET)

# Constraint "pixels >= p * total" evaluated with a relative slack so that
# integer tallies sitting exactly on the threshold are not rejected by
# floating-point rounding of p * total.
FEASIBILITY_RTOL = 1e-9

DEFAULT_EXACT_CAP = 24


class MalformedAssignmentError(ValueError):
    """Assignment does not cover every group exactly once with a valid set id."""


class ProblemTooLargeError(ValueError):
    """Instance exceeds the exact-solver cap; use solve_heuristic."""


@dataclass(frozen=True)
class SplitProblem:
    """Pixel-count matrix plus minimum per-class proportions for sets 1, 3, 4."""

    counts: GroupClassMatrix
    p_train: float = 0.10
    p_val: float = 0.10
    p_test: float = 0.40

    def __post_init__(self):
        for name, p in (("p_train", self.p_train), ("p_val", self.p_val), ("p_test", self.p_test)):
            if not (0.0 <= p < 1.0):
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.p_train + self.p_val + self.p_test >= 1.0:
            raise ValueError("p_train + p_val + p_test must be < 1")
        if np.any(self.counts.P.sum(axis=0) < 1):
            raise ValueError("every class must have at least one pixel")

    @property
    def P(self) -> np.ndarray:
        return self.counts.P

    @property
    def n_groups(self) -> int:
        return self.counts.n_groups

    @property
    def n_classes(self) -> int:
        return self.counts.n_classes

    @property
    def proportions(self) -> dict[int, float]:
        return {TRAIN_SET: self.p_train, VAL_SET: self.p_val, TEST_SET: self.p_test}


@dataclass(frozen=True)
class SplitAssignment:
    """Group -> set assignment with its objective (pixels outside the pool)."""

    sets: np.ndarray
    objective: int
    feasible: bool

    def __post_init__(self):
        sets = np.asarray(self.sets, dtype=np.int8)
        if sets.ndim != 1:
            raise ValueError("sets must be a 1-D vector")
        object.__setattr__(self, "sets", sets)

    def hamming(self, other: "SplitAssignment") -> int:
        return int(np.count_nonzero(self.sets != other.sets))


@dataclass(frozen=True)
class SplitPortfolio:
    assignments: tuple
    min_hamming: int
    exhausted: bool

    def pairwise_min_hamming(self) -> int | None:
        if len(self.assignments) < 2:
            return None
        return min(
            a.hamming(b)
            for i, a in enumerate(self.assignments)
            for b in self.assignments[i + 1 :]
        )


@dataclass(frozen=True)
class FeasibilityReport:
    """Realized per-class proportions per constrained set plus violations."""

    proportions: dict
    violations: tuple
    feasible: bool
    objective: int


def _as_set_vector(problem: SplitProblem, u) -> np.ndarray:
    n = problem.n_groups
    if isinstance(u, SplitAssignment):
        vec = u.sets
    elif isinstance(u, Mapping):
        missing = [g for g in range(n) if g not in u]
        if missing:
            raise MalformedAssignmentError(f"groups missing from assignment: {missing}")
        vec = np.array([u[g] for g in range(n)], dtype=np.int8)
    else:
        vec = np.asarray(u, dtype=np.int8)
    if vec.shape != (n,):
        raise MalformedAssignmentError(
            f"assignment covers {vec.size} groups, expected {n}"
        )
    if not np.all(np.isin(vec, ALL_SETS)):
        raise MalformedAssignmentError("set ids must be one of 1, 2, 3, 4")
    return vec


def _threshold(p: float, total: float) -> float:
    return p * total - FEASIBILITY_RTOL * total - 1e-12


def verify_assignment(problem: SplitProblem, u) -> FeasibilityReport:
    """Recompute realized proportions and list every violated constraint."""
    vec = _as_set_vector(problem, u)
    P = problem.P
    totals = P.sum(axis=0).astype(np.float64)
    proportions: dict[int, np.ndarray] = {}
    violations = []
    for s in CONSTRAINED_SETS:
        in_set = P[vec == s].sum(axis=0).astype(np.float64)
        proportions[s] = in_set / totals
        required = problem.proportions[s]
        for k in range(problem.n_classes):
            if in_set[k] < _threshold(required, totals[k]):
                violations.append((s, k + 1, float(proportions[s][k]), required))
    objective = int(P[np.isin(vec, CONSTRAINED_SETS)].sum())
    return FeasibilityReport(
        proportions=proportions,
        violations=tuple(violations),
        feasible=not violations,
        objective=objective,
    )


def objective_value(problem: SplitProblem, sets: np.ndarray) -> int:
    return int(problem.P[np.isin(sets, CONSTRAINED_SETS)].sum())


def realized_proportions(problem: SplitProblem, u) -> dict[int, float]:
    """Class-averaged proportion of labeled pixels per set."""
    vec = _as_set_vector(problem, u)
    P = problem.P
    totals = P.sum(axis=0).astype(np.float64)
    out = {}
    for s in ALL_SETS:
        out[s] = float(np.mean(P[vec == s].sum(axis=0) / totals))
    return out


# -- exact branch and bound ----------------------------------------------------


def _completion_bound(cur_obj: float, need: np.ndarray) -> float:
    # Any completion must still move ceil(need) pixels of each (set, class)
    # into the constrained sets; those pixels are pairwise distinct.
    return cur_obj + np.ceil(np.maximum(need, 0.0) - 1e-12).sum()


def _completion_infeasible(need: np.ndarray, remaining: np.ndarray) -> bool:
    # Per class, the pixels still required across the three constrained sets
    # cannot exceed the pixels left in unassigned groups.
    return bool(np.any(np.maximum(need, 0.0).sum(axis=0) > remaining + 1e-9))


class _BranchAndBound:
    """DFS over group -> set choices with a fractional-completion bound."""

    def __init__(self, problem: SplitProblem, previous: Sequence[np.ndarray] = (),
                 min_hamming: int = 0):
        self.P = problem.P.astype(np.float64)
        self.n, self.c = self.P.shape
        self.group_totals = self.P.sum(axis=1)
        totals = self.P.sum(axis=0)
        self.required = np.array(
            [[_threshold(problem.proportions[s], totals[k]) for k in range(self.c)]
             for s in CONSTRAINED_SETS]
        )
        self.previous = [np.asarray(p, dtype=np.int8) for p in previous]
        self.min_hamming = min_hamming

    def _search(self, order: np.ndarray, set_order_fn, best_obj: float,
                stop_at_first_optimal: bool, opt_value: float | None):
        """Returns (best_objective, best_assignment or None)."""
        n = self.n
        sets = np.zeros(n, dtype=np.int8)
        need = self.required.copy()  # remaining requirement per (set, class)
        remaining = self.P[order].sum(axis=0) if n else np.zeros(self.c)
        mismatches = [0] * len(self.previous)
        best_assign = None
        limit = best_obj

        def recurse(depth: int, cur_obj: float):
            nonlocal best_assign, limit
            if _completion_infeasible(need, remaining):
                return False
            bound = _completion_bound(cur_obj, need)
            if opt_value is not None:
                if bound > opt_value + 1e-9:
                    return False
            elif bound >= limit - 1e-9 and best_assign is not None:
                return False
            elif bound > limit + 1e-9:
                return False
            for idx, m in enumerate(mismatches):
                if m + (n - depth) < self.min_hamming:
                    return False
            if depth == n:
                if np.any(need > 1e-9):
                    return False
                if opt_value is not None and cur_obj > opt_value + 1e-9:
                    return False
                if best_assign is None or cur_obj < limit - 1e-9:
                    limit = cur_obj
                    best_assign = sets.copy()
                return stop_at_first_optimal
            g = order[depth]
            row = self.P[g]
            tot = self.group_totals[g]
            for s in set_order_fn(depth, g, need, row):
                sets[g] = s
                if s != POOL_SET:
                    si = CONSTRAINED_SETS.index(s)
                    need[si] -= row
                remaining_delta = row
                remaining[:] -= remaining_delta
                for idx, prev in enumerate(self.previous):
                    if prev[g] != s:
                        mismatches[idx] += 1
                done = recurse(depth + 1, cur_obj + (tot if s != POOL_SET else 0.0))
                for idx, prev in enumerate(self.previous):
                    if prev[g] != s:
                        mismatches[idx] -= 1
                remaining[:] += remaining_delta
                if s != POOL_SET:
                    need[CONSTRAINED_SETS.index(s)] += row
                sets[g] = 0
                if done:
                    return True
            return False

        recurse(0, 0.0)
        return limit, best_assign

    def solve(self, warm_obj: float | None = None):
        """Optimal objective + lexicographically smallest optimal assignment."""
        # Phase 1: find the optimal value, branching large groups first.
        order = np.argsort(-self.group_totals, kind="stable")

        def value_set_order(depth, g, need, row):
            gains = [
                (float(np.minimum(row, np.maximum(need[i], 0.0)).sum()), s)
                for i, s in enumerate(CONSTRAINED_SETS)
            ]
            gains.sort(key=lambda t: (-t[0], t[1]))
            ordered = [POOL_SET] + [s for _, s in gains]
            if gains[0][0] > 0:
                ordered = [s for _, s in gains] + [POOL_SET]
            return ordered

        start = math.inf if warm_obj is None else float(warm_obj)
        value, assign = self._search(
            order, value_set_order, start, stop_at_first_optimal=False, opt_value=None
        )
        if assign is None and not math.isinf(start):
            # The warm start was already optimal but came from outside the DFS.
            value = start
        if assign is None and math.isinf(value):
            return None, None
        # Phase 2: first assignment found in lexicographic DFS order that
        # attains the optimal value is the lexicographically smallest one.
        lex_order = np.arange(self.n)
        _, lex_assign = self._search(
            lex_order,
            lambda depth, g, need, row: ALL_SETS,
            math.inf,
            stop_at_first_optimal=True,
            opt_value=value,
        )
        if lex_assign is None:
            return None, None
        return value, lex_assign


def solve_exact(
    problem: SplitProblem,
    cap: int = DEFAULT_EXACT_CAP,
    _previous: Sequence[np.ndarray] = (),
    _min_hamming: int = 0,
) -> SplitAssignment | None:
    """Optimal split or None when the instance is provably infeasible.

    Ties between optimal assignments are broken by the lexicographically
    smallest assignment vector. Instances with more than ``cap`` groups are
    rejected; use :func:`solve_heuristic` for those.
    """
    if problem.n_groups > cap:
        raise ProblemTooLargeError(
            f"{problem.n_groups} groups exceeds the exact cap of {cap}; "
            "use solve_heuristic"
        )
    warm = None
    if not _previous:
        candidate = solve_heuristic(problem, seed=0, budget=2000)
        if candidate.feasible:
            warm = candidate.objective + 1
    solver = _BranchAndBound(problem, previous=_previous, min_hamming=_min_hamming)
    value, assign = solver.solve(warm_obj=warm)
    if assign is None:
        return None
    return SplitAssignment(sets=assign, objective=int(round(value)), feasible=True)


# -- heuristic -----------------------------------------------------------------


def _greedy_assignment(problem: SplitProblem) -> np.ndarray:
    P = problem.P.astype(np.float64)
    totals = P.sum(axis=0)
    need = np.array(
        [[_threshold(problem.proportions[s], totals[k]) for k in range(problem.n_classes)]
         for s in CONSTRAINED_SETS]
    )
    sets = np.full(problem.n_groups, POOL_SET, dtype=np.int8)
    order = np.argsort(-P.sum(axis=1), kind="stable")
    for g in order:
        gains = np.array(
            [np.minimum(P[g], np.maximum(need[i], 0.0)).sum() for i in range(3)]
        )
        if gains.max() <= 0:
            continue
        i = int(np.argmax(gains))
        sets[g] = CONSTRAINED_SETS[i]
        need[i] -= P[g]
    return sets


class _MoveEvaluator:
    """Incremental (violation, objective) bookkeeping for single-group moves.

    The scalar energy is violation * big + objective, with big above any
    possible objective so that reducing missing pixels always dominates.
    """

    def __init__(self, problem: SplitProblem, sets: np.ndarray, extra_energy=None):
        self.P = problem.P.astype(np.float64)
        self.group_totals = self.P.sum(axis=1)
        totals = self.P.sum(axis=0)
        self.thr = np.array(
            [[_threshold(problem.proportions[s], totals[k])
              for k in range(problem.n_classes)] for s in CONSTRAINED_SETS]
        )
        self.big = float(self.P.sum() + 1)
        self.set_index = {s: i for i, s in enumerate(CONSTRAINED_SETS)}
        self.extra_energy = extra_energy
        self.load(sets)

    def load(self, sets: np.ndarray) -> None:
        self.sets = sets.copy()
        self.sums = np.stack(
            [self.P[self.sets == s].sum(axis=0) for s in CONSTRAINED_SETS]
        ).astype(np.float64)
        self.objective = float(self.P[self.sets != POOL_SET].sum())
        self.violation = float(np.maximum(self.thr - self.sums, 0.0).sum())

    def energy(self) -> float:
        e = self.violation * self.big + self.objective
        if self.extra_energy is not None:
            e += self.extra_energy(self.sets)
        return e

    def move_delta(self, g: int, new_set: int) -> tuple[float, float]:
        """(violation delta, objective delta) of moving group g, not applied."""
        old = self.sets[g]
        if old == new_set:
            return 0.0, 0.0
        row = self.P[g]
        dv = 0.0
        dobj = 0.0
        if old != POOL_SET:
            i = self.set_index[old]
            before = np.maximum(self.thr[i] - self.sums[i], 0.0).sum()
            after = np.maximum(self.thr[i] - (self.sums[i] - row), 0.0).sum()
            dv += after - before
            dobj -= self.group_totals[g]
        if new_set != POOL_SET:
            i = self.set_index[new_set]
            before = np.maximum(self.thr[i] - self.sums[i], 0.0).sum()
            after = np.maximum(self.thr[i] - (self.sums[i] + row), 0.0).sum()
            dv += after - before
            dobj += self.group_totals[g]
        return dv, dobj

    def energy_delta(self, g: int, new_set: int) -> float:
        old = self.sets[g]
        dv, dobj = self.move_delta(g, new_set)
        delta = dv * self.big + dobj
        if self.extra_energy is not None:
            before = self.extra_energy(self.sets)
            self.sets[g] = new_set
            delta += self.extra_energy(self.sets) - before
            self.sets[g] = old
        return delta

    def apply(self, g: int, new_set: int) -> None:
        old = self.sets[g]
        if old == new_set:
            return
        dv, dobj = self.move_delta(g, new_set)
        row = self.P[g]
        if old != POOL_SET:
            self.sums[self.set_index[old]] -= row
        if new_set != POOL_SET:
            self.sums[self.set_index[new_set]] += row
        self.sets[g] = new_set
        self.violation += dv
        self.objective += dobj


def _polish(state: _MoveEvaluator, pair_moves: bool) -> None:
    """Best-improvement descent over single moves, then pair moves."""
    n = state.sets.size
    improved = True
    while improved:
        improved = False
        for g in range(n):
            best_delta, best_set = -1e-9, None
            for s in ALL_SETS:
                if s == state.sets[g]:
                    continue
                delta = state.energy_delta(g, s)
                if delta < best_delta:
                    best_delta, best_set = delta, s
            if best_set is not None:
                state.apply(g, best_set)
                improved = True
        if improved or not pair_moves:
            continue
        for g1 in range(n):
            for s1 in ALL_SETS:
                if s1 == state.sets[g1]:
                    continue
                d1 = state.energy_delta(g1, s1)
                old1 = state.sets[g1]
                state.apply(g1, s1)
                done = False
                for g2 in range(g1 + 1, n):
                    for s2 in ALL_SETS:
                        if s2 == state.sets[g2]:
                            continue
                        if d1 + state.energy_delta(g2, s2) < -1e-9:
                            state.apply(g2, s2)
                            improved = done = True
                            break
                    if done:
                        break
                if not done:
                    state.apply(g1, old1)
                else:
                    break


def solve_heuristic(
    problem: SplitProblem,
    seed: int = 0,
    budget: int = 50000,
    restarts: int = 4,
    _extra_energy=None,
) -> SplitAssignment:
    """Greedy construction plus simulated-annealing repair.

    Always returns an assignment: the best feasible one found, or the
    lowest-penalty assignment flagged infeasible. Deterministic under seed.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    rng = np.random.default_rng(seed)
    n = problem.n_groups
    pair_moves = n <= 48
    state = _MoveEvaluator(problem, _greedy_assignment(problem), _extra_energy)
    big = state.big

    best_vec = None
    best_energy = math.inf

    def consider_current():
        nonlocal best_vec, best_energy
        e = state.energy()
        if e < best_energy - 1e-9:
            best_energy = e
            best_vec = state.sets.copy()

    _polish(state, pair_moves)
    consider_current()

    iters_per_restart = max(1, budget // max(1, restarts))
    # Start hot enough to cross one-pixel violation barriers (cost = big),
    # freeze far below single-pixel objective moves.
    t0 = 2.0 * big
    t_min = 0.5
    cooling = (t_min / t0) ** (1.0 / max(iters_per_restart - 1, 1))
    starts = [_greedy_assignment(problem), np.full(n, POOL_SET, dtype=np.int8)]
    for restart in range(restarts):
        if restart < len(starts):
            state.load(starts[restart])
        else:
            state.load(rng.integers(1, 5, size=n).astype(np.int8))
        consider_current()
        temp = t0
        cur_e = state.energy()
        for _ in range(iters_per_restart):
            g = int(rng.integers(0, n))
            s = int(rng.integers(1, 5))
            if s != state.sets[g]:
                delta = state.energy_delta(g, s)
                if delta <= 0 or rng.random() < math.exp(-delta / temp):
                    state.apply(g, s)
                    cur_e += delta
                    if cur_e < best_energy - 1e-9:
                        best_energy = cur_e
                        best_vec = state.sets.copy()
            temp *= cooling
        _polish(state, pair_moves)
        consider_current()

    state.load(best_vec)
    _polish(state, pair_moves)
    consider_current()
    state.load(best_vec)
    feasible = state.violation == 0.0 and (
        _extra_energy is None or _extra_energy(best_vec) == 0.0
    )
    return SplitAssignment(
        sets=best_vec,
        objective=int(round(state.objective)),
        feasible=feasible,
    )


def enumerate_diverse_splits(
    problem: SplitProblem,
    k: int,
    min_hamming: int = 0,
    seed: int = 0,
    cap: int = DEFAULT_EXACT_CAP,
    budget: int = 20000,
) -> SplitPortfolio:
    """Up to ``k`` feasible splits, each differing from all previous ones in at
    least ``min_hamming`` group assignments. Sets ``exhausted`` when fewer than
    ``k`` eligible solutions exist (exact mode) or can be found (heuristic)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    found: list[SplitAssignment] = []
    exhausted = False
    use_exact = problem.n_groups <= cap
    big = float(problem.P.sum() + 1)
    for i in range(k):
        previous = [a.sets for a in found]
        if use_exact:
            result = solve_exact(
                problem, cap=cap, _previous=previous, _min_hamming=min_hamming
            )
        else:
            def diversity_penalty(vec):
                pen = 0.0
                for prev in previous:
                    short = min_hamming - int(np.count_nonzero(vec != prev))
                    if short > 0:
                        pen += short * big
                return pen

            result = solve_heuristic(
                problem, seed=seed + i, budget=budget, _extra_energy=diversity_penalty
            )
            if result.feasible and any(
                int(np.count_nonzero(result.sets != prev)) < min_hamming
                for prev in previous
            ):
                result = None
            elif not result.feasible:
                result = None
        if result is None or not result.feasible:
            exhausted = True
            break
        found.append(result)
    return SplitPortfolio(
        assignments=tuple(found), min_hamming=min_hamming, exhausted=exhausted
    )


# -- serialization -------------------------------------------------------------


def problem_hash(problem: SplitProblem) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(problem.P, dtype="<i8").tobytes())
    h.update(
        json.dumps(
            {"p_train": problem.p_train, "p_val": problem.p_val, "p_test": problem.p_test}
        ).encode()
    )
    return h.hexdigest()


def save_split(
    problem: SplitProblem, assignment: SplitAssignment, path: str | Path
) -> None:
    payload = {
        "problem_hash": problem_hash(problem),
        "proportions": {
            str(TRAIN_SET): problem.p_train,
            str(VAL_SET): problem.p_val,
            str(TEST_SET): problem.p_test,
        },
        "assignment": {str(g): int(s) for g, s in enumerate(assignment.sets)},
        "objective": int(assignment.objective),
        "feasible": bool(assignment.feasible),
        "realized": {
            str(s): v for s, v in realized_proportions(problem, assignment).items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


def load_split(path: str | Path) -> tuple[dict, SplitAssignment]:
    payload = json.loads(Path(path).read_text())
    n = len(payload["assignment"])
    sets = np.array([payload["assignment"][str(g)] for g in range(n)], dtype=np.int8)
    assignment = SplitAssignment(
        sets=sets,
        objective=int(payload["objective"]),
        feasible=bool(payload["feasible"]),
    )
    return payload, assignment

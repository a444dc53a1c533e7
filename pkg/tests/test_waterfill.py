import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from netprotect.centrality import CentralityVector
from netprotect.errors import CentralityError, InfeasibleBudgetError
from netprotect.oracle import grid_minimum
from netprotect.waterfill import (
    ProtectionSolution,
    Thresholds,
    classify_regime,
    diffuse_baseline,
    f_eval,
    kkt_verify,
    objective_value,
    shock_value,
    solve,
    sweep,
    thresholds,
    worst_case_shock,
)

Y = [2.0, 1.0, 1.0]
S6 = np.sqrt(6.0)


def root_lambda(y, c):
    """Independent route: bracketed root of f(lam) = C^2 by Brent's method."""
    y = np.asarray(y, dtype=float)
    g = lambda lam: np.sum(np.maximum(1.0, y**2 / lam)) - c * c
    top = np.max(y) ** 2
    if g(top) >= 0:
        return top
    return brentq(g, 1e-300, top, xtol=1e-300, rtol=1e-15, maxiter=500)


centralities = st.lists(st.floats(0.1, 3.0), min_size=1, max_size=40)


@st.composite
def instances(draw, max_n=40):
    y = np.array(draw(st.lists(st.floats(0.1, 3.0), min_size=1, max_size=max_n)))
    n = y.size
    c = draw(st.floats(np.sqrt(n), 4 * np.sqrt(n) + 1))
    return y, c


class TestF:
    def test_hand_value(self):
        assert f_eval(Y, 1.0) == 6.0

    def test_at_top(self):
        assert f_eval(Y, 4.0) == 3.0

    def test_diverges_at_zero(self):
        vals = [f_eval(Y, lam) for lam in np.geomspace(4, 1e-12, 30)]
        assert np.all(np.diff(vals) > 0) and vals[-1] > 1e12

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            f_eval(Y, 0.0)


class TestSolveExamples:
    def test_low_budget(self):
        sol = solve(Y, 2.0)
        assert sol.lambda_star == pytest.approx(2.0, rel=1e-15)
        np.testing.assert_allclose(sol.q_star, [np.sqrt(2), 1, 1], rtol=1e-15)
        assert (sol.regime, sol.k_active) == ("low", 1)

    def test_high_budget(self):
        sol = solve(Y, 4.0)
        assert sol.lambda_star == pytest.approx(0.375, rel=1e-15)
        np.testing.assert_allclose(sol.q_star, np.array([8, 4, 4]) / np.sqrt(6), rtol=1e-15)
        assert (sol.regime, sol.k_active) == ("high", 3)
        assert np.linalg.norm(sol.q_star) == pytest.approx(4.0, rel=1e-15)

    def test_minimal_budget(self):
        sol = solve([1.0, 1.0], np.sqrt(2))
        assert sol.lambda_star == 1.0
        np.testing.assert_array_equal(sol.q_star, [1, 1])
        assert sol.k_active == 0

    def test_original_order(self):
        sol = solve([1.0, 2.0, 1.0], 2.0)
        np.testing.assert_allclose(sol.q_star, [1, np.sqrt(2), 1], rtol=1e-15)

    def test_infeasible_budget(self):
        with pytest.raises(InfeasibleBudgetError):
            solve(Y, 1.7)

    def test_budget_clamped_just_below_floor(self):
        sol = solve(Y, np.sqrt(3) - 5e-13)
        assert sol.budget == np.sqrt(3) and sol.k_active == 0

    def test_bad_centrality(self):
        with pytest.raises(CentralityError):
            solve([1.0, 0.0], 3.0)


class TestRegimes:
    def test_thresholds_coincide(self):
        t = thresholds(Y)
        assert t.low == pytest.approx(S6, rel=1e-15) and t.high == pytest.approx(S6, rel=1e-15)

    def test_threshold_formulas(self, rng):
        y = CentralityVector.from_values(rng.uniform(0.1, 3, 9))
        v = y.values
        t = thresholds(y)
        assert t.low == pytest.approx(np.sqrt(9 + v[0] ** 2 / v[1] ** 2 - 1), rel=1e-14)
        assert t.high == pytest.approx(np.linalg.norm(v) / v[-1], rel=1e-14)

    def test_low(self):
        assert classify_regime(Y, 2.0)[0] == "low"

    @pytest.mark.parametrize("c", [np.sqrt(3), 2.0, 10.0])
    def test_uniform_is_high(self, c):
        regime, t = classify_regime([1.0, 1.0, 1.0], c)
        assert regime == "high" and t == Thresholds(np.sqrt(3), np.sqrt(3))

    def test_intermediate(self):
        y = [3.0, 2.0, 1.0]
        t = thresholds(y)
        c = 0.5 * (t.low + t.high)
        sol = solve(y, c)
        assert sol.regime == "intermediate" and sol.k_active == 2

    @settings(max_examples=200, deadline=None)
    @given(instances())
    def test_regime_formulas(self, inst):
        y, c = inst
        sol = solve(y, c)
        ys = np.sort(y)[::-1]
        if sol.regime == "low":
            assert sol.lambda_star == pytest.approx(ys[0] ** 2 / (c * c - y.size + 1), rel=1e-12)
        if sol.regime == "high":
            assert sol.lambda_star == pytest.approx(np.sum(ys**2) / (c * c), rel=1e-12)

    @pytest.mark.parametrize("which", ["low", "high"])
    def test_continuity_at_thresholds(self, rng, which):
        y = rng.uniform(0.1, 3, 7)
        c0 = getattr(thresholds(y), which)
        eps = 1e-6
        below, above = solve(y, c0 - eps).lambda_star, solve(y, c0 + eps).lambda_star
        assert abs(below - above) <= 10 * eps * below


class TestSolveProperties:
    @settings(max_examples=200, deadline=None)
    @given(instances())
    def test_matches_independent_root(self, inst):
        y, c = inst
        assert solve(y, c).lambda_star == pytest.approx(root_lambda(y, c), rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(instances())
    def test_solution_invariants(self, inst):
        y, c = inst
        sol = solve(y, c)
        assert np.linalg.norm(sol.q_star) == pytest.approx(c, rel=1e-9)
        assert np.all(sol.q_star >= 1.0)
        assert objective_value(y, sol.q_star) == pytest.approx(sol.lambda_star, rel=1e-12)
        assert sol.k_active == np.count_nonzero(y > np.sqrt(sol.lambda_star) * (1 + 1e-12)) or \
            sol.k_active == np.count_nonzero(y > np.sqrt(sol.lambda_star) * (1 - 1e-12))

    def test_f_identity_large(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 501))
            y = rng.uniform(0.1, 3, n)
            c = rng.uniform(np.sqrt(n), 5 * np.sqrt(n))
            lam = solve(y, c).lambda_star
            assert f_eval(y, lam) == pytest.approx(c * c, rel=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(centralities, st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_budget(self, values, a, b):
        y = np.array(values)
        lo = np.sqrt(y.size)
        c1, c2 = sorted([lo + 10 * a, lo + 10 * b])
        assert solve(y, c1).lambda_star >= solve(y, c2).lambda_star - 1e-12

    @settings(max_examples=100, deadline=None)
    @given(instances())
    def test_active_protection_proportional(self, inst):
        y, c = inst
        q = solve(y, c).q_star
        active = np.flatnonzero(q > 1)
        assume(active.size >= 2)
        i, j = active[0], active[-1]
        assert q[i] / q[j] == pytest.approx(y[i] / y[j], rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(instances(), st.floats(0.1, 10))
    def test_scale_equivariance(self, inst, a):
        y, c = inst
        base, scaled = solve(y, c), solve(a * y, c)
        assume(base.k_active == scaled.k_active)
        assert scaled.lambda_star == pytest.approx(a * a * base.lambda_star, rel=1e-12)
        np.testing.assert_allclose(scaled.q_star, base.q_star, rtol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0.1, 3.0), min_size=2, max_size=3), st.floats(0, 1))
    def test_grid_oracle(self, values, u):
        y = np.array(values)
        r = 0.01
        c = np.sqrt(y.size) * (1 + 2 * u)
        lam = solve(y, c).lambda_star
        grid, _ = grid_minimum(y, c, r)
        assert lam <= grid + 1e-12
        assert grid <= lam / (1 - r) ** 2 + 1e-12


class TestObjectiveAndShock:
    def test_objective_examples(self):
        assert objective_value(Y, [np.sqrt(2), 1, 1]) == pytest.approx(2.0, rel=1e-15)
        assert objective_value([1, 1], [1, 1]) == 1.0

    def test_objective_homogeneity(self, rng):
        y, q = rng.uniform(0.1, 3, 5), 1 + rng.uniform(size=5)
        assert objective_value(y, 2 * q) == pytest.approx(objective_value(y, q) / 4, rel=1e-15)

    def test_shock_unique_argmax(self):
        np.testing.assert_array_equal(worst_case_shock([2, 1], [1, 1]), [1, 0])
        np.testing.assert_array_equal(worst_case_shock(Y, [np.sqrt(2), 1, 1]), [1, 0, 0])

    def test_shock_full_tie(self):
        sigma = worst_case_shock([1, 1], [1, 1])
        np.testing.assert_allclose(sigma**2, [0.5, 0.5], rtol=1e-15)
        assert shock_value([1, 1], [1, 1], sigma) == pytest.approx(1.0, rel=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(instances())
    def test_shock_attains_inner_max(self, inst):
        y, c = inst
        q = solve(y, c).q_star
        sigma = worst_case_shock(y, q)
        assert np.sum(sigma**2) == pytest.approx(1.0, rel=1e-14)
        assert shock_value(y, q, sigma) == pytest.approx(objective_value(y, q), rel=1e-14)


class TestKKT:
    @pytest.mark.parametrize("c", [2.0, 4.0, S6, np.sqrt(3)])
    def test_examples(self, c):
        cert = kkt_verify(Y, solve(Y, c))
        assert cert.valid and cert.max_violation <= 1e-9
        assert np.all(cert.alpha >= 0) and cert.alpha.sum() == pytest.approx(1.0)
        assert np.all(cert.delta >= 0) and cert.gamma >= 0

    def test_low_budget_multipliers(self):
        cert = kkt_verify(Y, solve(Y, 2.0))
        np.testing.assert_allclose(cert.alpha, [1, 0, 0])
        assert cert.psi == pytest.approx(2.0)
        # gamma = psi^2 / S_k with a single active node
        assert cert.gamma == pytest.approx(4.0 / 4.0)

    def test_tampered_solution_rejected(self):
        sol = solve(Y, 2.0)
        q = sol.q_star.copy()
        q[0] += 0.1
        q *= 2.0 / np.linalg.norm(q)
        bad = ProtectionSolution(q, sol.lambda_star, sol.k_active, sol.regime, sol.budget, sol.thresholds)
        cert = kkt_verify(Y, bad)
        assert not cert.valid and cert.max_violation > 1e-3

    def test_slack_budget_rejected(self):
        sol = solve(Y, 4.0)
        bad = ProtectionSolution(sol.q_star * 0.9, sol.lambda_star, 3, "high", 4.0, sol.thresholds)
        cert = kkt_verify(Y, bad)
        assert not cert.valid

    def test_unbalanced_active_rejected(self):
        # both nodes above the floor but not on a common water level
        sol = solve([2.0, 1.0], 4.0)
        q = np.array([3.0, np.sqrt(16 - 9)])
        bad = ProtectionSolution(q, sol.lambda_star, 2, "high", 4.0, sol.thresholds)
        cert = kkt_verify([2.0, 1.0], bad)
        assert cert.worst in {"slackness alpha", "closed form q = max(1, y/sqrt(psi))", "f(psi) = C^2"}
        assert not cert.valid

    def test_random_instances(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 200))
            y = rng.uniform(0.1, 3, n)
            c = rng.uniform(np.sqrt(n), 4 * np.sqrt(n))
            assert kkt_verify(y, solve(y, c)).max_violation <= 1e-9


class TestDiffuse:
    def test_high_budget_coincides(self):
        base = diffuse_baseline(Y, 4.0)
        np.testing.assert_allclose(base.q, np.array([8, 4, 4]) / np.sqrt(6), rtol=1e-15)
        assert base.value == pytest.approx(0.375, rel=1e-15) and base.feasible
        assert base.value == pytest.approx(solve(Y, 4.0).lambda_star, rel=1e-15)

    def test_low_budget_infeasible(self):
        base = diffuse_baseline(Y, 2.0)
        np.testing.assert_allclose(base.q, np.array([4, 2, 2]) / np.sqrt(6), rtol=1e-15)
        assert base.value == pytest.approx(1.5) and not base.feasible

    def test_uniform(self):
        base = diffuse_baseline([1.0, 1.0], np.sqrt(2))
        np.testing.assert_allclose(base.q, [1, 1], rtol=1e-15)
        assert base.value == pytest.approx(1.0) and base.feasible

    @settings(max_examples=200, deadline=None)
    @given(instances())
    def test_never_beats_optimum_when_feasible(self, inst):
        y, c = inst
        base = diffuse_baseline(y, c)
        assert base.value == pytest.approx(objective_value(y, base.q), rel=1e-12)
        if base.feasible:
            assert solve(y, c).lambda_star <= base.value * (1 + 1e-12)


class TestSweep:
    def test_two_point(self):
        res = sweep(Y, [2.0, 4.0])
        a, b = res.rows
        assert (a.lambda_opt, a.lambda_diff, a.k_active, a.regime) == (2.0, 1.5, 1, "low")
        assert a.ratio == pytest.approx(4 / 3)
        assert b.ratio == pytest.approx(1.0, rel=1e-12) and b.regime == "high"

    def test_rejects_unsorted_and_infeasible(self):
        with pytest.raises(ValueError, match="increasing"):
            sweep(Y, [4.0, 2.0])
        with pytest.raises(InfeasibleBudgetError):
            sweep(Y, [1.0, 2.0])

    def test_parallel_matches_serial(self, rng):
        y = rng.uniform(0.1, 3, 30)
        grid = np.linspace(np.sqrt(30), 30, 40)
        serial, par = sweep(y, grid), sweep(y, grid, workers=4)
        np.testing.assert_array_equal(serial.q_matrix(), par.q_matrix())

    def test_trajectories_flat_until_activation(self, rng):
        y = rng.uniform(0.1, 3, 8)
        res = sweep(y, np.linspace(np.sqrt(8), 8, 200))
        q = res.q_matrix()
        assert np.all(np.diff(q, axis=0) >= -1e-12)
        for i in range(8):
            active = q[:, i] > 1
            # once activated, a node stays active
            if active.any():
                assert active[np.argmax(active):].all()

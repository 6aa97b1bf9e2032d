import math

import numpy as np
import pytest

from _support import policy_draws, raw_draws
from platoongain.dynamics import PlatoonState
from platoongain.gainopt import (
    GainSolution,
    _pick,
    dense_grid_oracle,
    evaluate_mu,
    optimize_mu,
    optimize_mu_batch,
)
from platoongain.params import ControllerParams, OptConfig, SimConfig
from platoongain.simulation import accel_cost, simulate

P = ControllerParams()
EQ = PlatoonState.from_spacings([25.0] * 6, [30.0] * 7)
CRUSH = PlatoonState.from_spacings([6.0], [27.0, 34.0])  # no gain keeps this within bounds


class TestEvaluate:
    @pytest.mark.parametrize("mu", [0.01, 0.5, 2.0])
    def test_equilibrium(self, mu):
        assert evaluate_mu(EQ, mu, P) == (0.0, True, (0.0, 0.0))

    def test_composition(self):
        s0 = raw_draws(1, seed=4)[0]
        cost, _, peak = evaluate_mu(s0, 0.7, P)
        traj = simulate(s0, P, mu=0.7)
        assert cost == accel_cost(traj)
        assert peak == (traj.accels.max(), traj.accels.min())

    def test_violating_draw_is_infeasible(self):
        found = False
        for s0 in raw_draws(100, seed=23):
            cost, feasible, (hi, lo) = evaluate_mu(s0, 0.5, P)
            if hi > P.accel_max or lo < P.accel_min:
                assert not feasible
                found = True
        assert found

    def test_domain(self):
        with pytest.raises(ValueError):
            evaluate_mu(EQ, 0.0, P)
        with pytest.raises(ValueError):
            evaluate_mu(EQ, 2.5, P)

    def test_collision_marks_infeasible(self):
        s0 = PlatoonState.from_spacings([5.2], [0.0, 35.0])
        cost, feasible, peak = evaluate_mu(s0, 0.5, P, SimConfig(dt=0.5, t_end=10.0))
        assert math.isinf(cost) and not feasible and math.isnan(peak[0])


class TestPick:
    def test_tie_goes_to_smaller_mu(self):
        pts = [(0.8, 1.0, True, 0.0, (0, 0)), (0.3, 1.0 + 5e-10, True, 0.0, (0, 0)),
               (0.5, 2.0, True, 0.0, (0, 0))]
        assert _pick(pts).mu_star == 0.3

    def test_beyond_tie_tolerance(self):
        pts = [(0.8, 1.0, True, 0.0, (0, 0)), (0.3, 1.0 + 1e-8, True, 0.0, (0, 0))]
        assert _pick(pts).mu_star == 0.8

    def test_least_violating_when_nothing_feasible(self):
        pts = [(0.2, 5.0, False, 0.4, (0, 0)), (1.0, 9.0, False, 0.1, (0, 0)),
               (1.5, 1.0, False, 0.3, (0, 0))]
        sol = _pick(pts)
        assert (sol.mu_star, sol.feasible) == (1.0, False)


class TestOptimize:
    def test_equilibrium_picks_lower_bound(self):
        sol = optimize_mu(EQ, P)
        assert sol == GainSolution(0.01, 0.0, True, (0.0, 0.0))
        assert optimize_mu(EQ, P, opt=OptConfig(mu_lo=0.2)).mu_star == 0.2

    def test_infeasible_everywhere(self):
        sol = optimize_mu(CRUSH, P, SimConfig(t_end=10.0))
        assert not sol.feasible
        grid = np.linspace(0.01, 2.0, 40)
        assert np.min(np.abs(grid - sol.mu_star)) < 1e-12

    @pytest.mark.parametrize("n, seed", [(2, 1), (3, 2)])
    def test_matches_dense_oracle_small(self, n, seed):
        s0 = policy_draws(1, seed=seed, n=n)[0]
        sol = optimize_mu(s0, P)
        ref = dense_grid_oracle(s0, P)
        assert sol.feasible == ref.feasible
        assert abs(sol.mu_star - ref.mu_star) <= 1e-3
        assert abs(sol.cost - ref.cost) <= 1e-6 * ref.cost

    def test_dominates_fixed_gain(self):
        states = raw_draws(30, seed=77)
        for s0, sol in zip(states, optimize_mu_batch(states, P)):
            cost05, feas05, _ = evaluate_mu(s0, 0.5, P)
            if feas05:
                assert sol.feasible
                assert sol.cost <= cost05 + 1e-9

    def test_solution_invariants(self):
        states = raw_draws(15, seed=78, n=4)
        for sol in optimize_mu_batch(states, P):
            assert 0.0 < sol.mu_star <= 2.0
            assert sol.cost >= 0.0
            if sol.feasible:
                assert P.accel_min <= sol.peak[1] and sol.peak[0] <= P.accel_max

    def test_feasible_at_both_ends_means_feasible(self):
        for s0 in raw_draws(15, seed=79):
            if evaluate_mu(s0, 0.01, P)[1] and evaluate_mu(s0, 2.0, P)[1]:
                assert optimize_mu(s0, P).feasible

    def test_batch_equals_single_and_deterministic(self):
        states = raw_draws(4, seed=80)
        batch = optimize_mu_batch(states, P)
        assert batch == [optimize_mu(s, P) for s in states]
        assert batch == optimize_mu_batch(states, P, workers=2)

    def test_empty_batch(self):
        assert optimize_mu_batch([], P) == []

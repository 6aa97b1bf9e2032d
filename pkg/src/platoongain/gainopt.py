"""Acceleration-optimal gain selection.

For one initial condition, pick the gain in (0, 2] that minimizes the integral
of the summed squared accelerations, subject to every recorded acceleration
staying inside ``[accel_min, accel_max]``. The objective is not guaranteed to
be unimodal, so a coarse grid scan locates the best feasible cell and a
golden-section search refines inside the neighbouring bracket.

All searches are batched: many initial conditions advance through the grid and
the refinement together, which is what makes dataset generation affordable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import PlatoonState
from .params import ControllerParams, OptConfig, SimConfig
from .simulation import SimulationError, accel_cost, peak_accel, rollout, simulate

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
# candidates whose costs differ by at most this much count as tied
TIE_TOL = 1e-9


@dataclass(frozen=True)
class GainSolution:
    mu_star: float
    cost: float
    feasible: bool
    peak: tuple[float, float]  # (max accel, min accel) at mu_star


def evaluate_mu(state0: PlatoonState, mu: float, params: ControllerParams,
                cfg: SimConfig = SimConfig()) -> tuple[float, bool, tuple[float, float]]:
    """Cost, feasibility and acceleration extrema of one gain.

    A near-collision abort marks the gain infeasible with an infinite cost.
    """
    if not 0.0 < mu <= 2.0:
        raise ValueError(f"mu must lie in (0, 2], got {mu}")
    try:
        traj = simulate(state0, params, cfg, mu=mu)
    except SimulationError:
        return math.inf, False, (math.nan, math.nan)
    hi, lo = peak_accel(traj)
    feasible = params.accel_min <= lo and hi <= params.accel_max
    return accel_cost(traj), feasible, (hi, lo)


class _Evaluator:
    """Runs batched rollouts and keeps every evaluated point per instance."""

    def __init__(self, x0, v0, params, cfg, workers):
        self.x0, self.v0 = x0, v0
        self.params, self.cfg, self.workers = params, cfg, workers
        self.points: list[list[tuple]] = [[] for _ in range(len(x0))]

    def __call__(self, rows: np.ndarray, mus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate gain ``mus[j]`` on instance ``rows[j]``; return cost and feasibility."""
        p = self.params
        res = rollout(self.x0[rows], self.v0[rows], p, self.cfg, mu=mus, workers=self.workers)
        feasible = ((~res.failed) & res.in_omega
                    & (res.peak_max <= p.accel_max) & (res.peak_min >= p.accel_min))
        violation = np.maximum.reduce([
            res.peak_max - p.accel_max, p.accel_min - res.peak_min, np.zeros(len(rows))])
        violation = np.where(res.failed, np.inf, violation)
        for j, r in enumerate(rows):
            self.points[r].append((float(mus[j]), float(res.cost[j]), bool(feasible[j]),
                                   float(violation[j]),
                                   (float(res.peak_max[j]), float(res.peak_min[j]))))
        return res.cost, feasible


def _pick(points) -> GainSolution:
    """Smallest-cost feasible point (ties -> smallest mu), else least violating."""
    feas = [pt for pt in points if pt[2]]
    if feas:
        best = min(pt[1] for pt in feas)
        mu, cost, _, _, peak = min(pt for pt in feas if pt[1] <= best + TIE_TOL)
        return GainSolution(mu, cost, True, peak)
    least = min(pt[3] for pt in points)
    mu, cost, _, _, peak = min(pt for pt in points if pt[3] <= least)
    return GainSolution(mu, cost, False, peak)


def optimize_mu_batch(states, params: ControllerParams, cfg: SimConfig = SimConfig(),
                      opt: OptConfig = OptConfig(), workers: int = 1) -> list[GainSolution]:
    """Solve the gain problem for many initial conditions of equal platoon size."""
    if not states:
        return []
    x0 = np.array([s.positions for s in states])
    v0 = np.array([s.speeds for s in states])
    B = len(states)
    ev = _Evaluator(x0, v0, params, cfg, workers)

    grid = np.linspace(opt.mu_lo, opt.mu_hi, opt.coarse_grid)
    G = grid.size
    rows = np.repeat(np.arange(B), G)
    cost, feas = ev(rows, np.tile(grid, B))
    cost = np.where(feas, cost, np.inf).reshape(B, G)

    # bracket around the best feasible grid cell
    lo = np.empty(B)
    hi = np.empty(B)
    active = np.zeros(B, dtype=bool)
    for b in range(B):
        if np.isfinite(cost[b]).any():
            best = cost[b].min()
            j = int(np.flatnonzero(cost[b] <= best + TIE_TOL)[0])
            lo[b] = grid[max(j - 1, 0)]
            hi[b] = grid[min(j + 1, G - 1)]
            active[b] = True

    # golden-section refinement, vectorized over the active instances
    idx = np.flatnonzero(active)
    if idx.size:
        a, bb = lo[idx], hi[idx]
        c = bb - INV_PHI * (bb - a)
        d = a + INV_PHI * (bb - a)
        fc, okc = ev(idx, c)
        fd, okd = ev(idx, d)
        fc = np.where(okc, fc, np.inf)
        fd = np.where(okd, fd, np.inf)
        while idx.size:
            go = (bb - a) > opt.refine_tol
            idx, a, bb, c, d, fc, fd = (arr[go] for arr in (idx, a, bb, c, d, fc, fd))
            if not idx.size:
                break
            left = fc <= fd  # ties shrink toward the smaller gain
            bb = np.where(left, d, bb)
            a = np.where(left, a, c)
            new_c = bb - INV_PHI * (bb - a)
            new_d = a + INV_PHI * (bb - a)
            probe = np.where(left, new_c, new_d)
            fp, okp = ev(idx, probe)
            fp = np.where(okp, fp, np.inf)
            c, d, fc, fd = (np.where(left, new_c, d), np.where(left, c, new_d),
                            np.where(left, fp, fd), np.where(left, fc, fp))
    return [_pick(ev.points[b]) for b in range(B)]


def optimize_mu(state0: PlatoonState, params: ControllerParams, cfg: SimConfig = SimConfig(),
                opt: OptConfig = OptConfig(), workers: int = 1) -> GainSolution:
    """Acceleration-optimal gain for one initial condition.

    Returns the least-violating grid gain with ``feasible=False`` when no grid
    gain keeps the accelerations inside the bounds.
    """
    return optimize_mu_batch([state0], params, cfg, opt, workers)[0]


def dense_grid_oracle(state0: PlatoonState, params: ControllerParams, cfg: SimConfig = SimConfig(),
                      mu_lo: float = 0.01, mu_hi: float = 2.0, step: float = 5e-4,
                      workers: int = 1) -> GainSolution:
    """Brute-force reference: evaluate every gain on a fine grid."""
    count = int(round((mu_hi - mu_lo) / step)) + 1
    grid = mu_lo + step * np.arange(count)
    grid = grid[grid <= mu_hi + 1e-12]
    x0 = np.repeat(state0.positions[None, :], grid.size, axis=0)
    v0 = np.repeat(state0.speeds[None, :], grid.size, axis=0)
    ev = _Evaluator(x0, v0, params, cfg, workers)
    ev(np.arange(grid.size), grid)
    return _pick([pt for pts in ev.points for pt in pts])

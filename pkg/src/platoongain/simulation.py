"""Fixed-step RK4 integration of the closed-loop platoon.

Two entry points share one compiled stepping kernel: :func:`simulate` records a
full trajectory for a single platoon, :func:`rollout` keeps only the cost and
acceleration extrema for a whole batch of platoons. Both produce bit-identical
numbers for the same initial condition.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernel
from .dynamics import DomainError, PlatoonSizeError, PlatoonState, in_state_space
from .params import ControllerParams, SimConfig, SpacingPolicy

# stage spacings at or below L + COLLISION_MARGIN abort the run
COLLISION_MARGIN = 1e-6


class SimulationError(DomainError):
    """Integration left the admissible region; ``time`` is the failing step start."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"t={time:.4f}s: {message}")
        self.time = time


@dataclass
class Trajectory:
    times: np.ndarray  # (T,)
    positions: np.ndarray  # (T, n)
    speeds: np.ndarray  # (T, n)
    accels: np.ndarray  # (T, n)
    dt: float

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def state(self, k: int) -> PlatoonState:
        return PlatoonState(self.positions[k], self.speeds[k])

    @property
    def states(self) -> list[PlatoonState]:
        return [self.state(k) for k in range(len(self.times))]

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self)


def _require_omega(state: PlatoonState, params: ControllerParams):
    if state.n < 2:
        raise PlatoonSizeError("the bidirectional law needs at least two vehicles")
    if not in_state_space(state, params):
        raise DomainError("initial state lies outside the invariant set")


def _mu_matrix(mu, B: int, n: int) -> np.ndarray:
    """Broadcast a scalar, per-row (B,) or per-vehicle (n,) / (B, n) gain."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1 and B > 1 and mu.size == B:
        mu = mu[:, None]
    return np.ascontiguousarray(np.broadcast_to(mu, (B, n)), dtype=float)


def _run(x0, v0, params: ControllerParams, dt: float, steps: int, mu, record: bool):
    B, n = x0.shape
    shape = (steps + 1, n) if record else (1, 1)
    rec = [np.empty(shape) for _ in range(3)]
    out = dict(
        cost=np.empty(B), a_hi=np.empty(B), a_lo=np.empty(B),
        status=np.empty(B, dtype=np.int64), fail_step=np.empty(B, dtype=np.int64),
        omega=np.empty(B, dtype=np.bool_), v_final=np.empty((B, n)),
    )
    _kernel.run_batch(
        np.ascontiguousarray(x0, dtype=float), np.ascontiguousarray(v0, dtype=float),
        _mu_matrix(mu, B, n), params.L, params.lam, params.v_star, params.v_max,
        params.epsilon, float(dt), int(steps), COLLISION_MARGIN, record, *rec,
        out["cost"], out["a_hi"], out["a_lo"], out["status"], out["fail_step"],
        out["omega"], out["v_final"],
    )
    return out, rec


def step_rk4(state: PlatoonState, params: ControllerParams, dt: float, mu=None) -> PlatoonState:
    """Advance a platoon by one classical Runge-Kutta step."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    _require_omega(state, params)
    out, rec = _run(state.positions[None, :], state.speeds[None, :], params, dt, 1,
                    params.mu if mu is None else mu, record=True)
    if out["status"][0] != _kernel.OK:
        raise DomainError("near collision inside an RK4 stage")
    return PlatoonState(rec[0][1], rec[1][1])


def simulate(state0: PlatoonState, params: ControllerParams, cfg: SimConfig = SimConfig(),
             mu=None) -> Trajectory:
    """Integrate from ``state0`` over the configured horizon.

    ``mu`` overrides ``params.mu``; it may be a scalar or one gain per vehicle.
    Recorded accelerations are the feedback values at each recorded state.
    """
    _require_omega(state0, params)
    steps = cfg.steps
    out, (xs, vs, acc) = _run(state0.positions[None, :], state0.speeds[None, :], params,
                              cfg.dt, steps, params.mu if mu is None else mu, record=True)
    if out["status"][0] != _kernel.OK:
        k = int(out["fail_step"][0])
        raise SimulationError("near collision inside an RK4 stage", cfg.t_start + k * cfg.dt)
    times = cfg.t_start + cfg.dt * np.arange(steps + 1)
    return Trajectory(times, xs, vs, acc, cfg.dt)


def accel_cost(traj: Trajectory) -> float:
    """Trapezoidal integral over time of the summed squared accelerations."""
    if len(traj.times) < 2:
        return 0.0
    return float(_kernel.trapezoid_cost(np.ascontiguousarray(traj.accels, dtype=float), traj.dt))


def peak_accel(traj: Trajectory) -> tuple[float, float]:
    return float(np.max(traj.accels)), float(np.min(traj.accels))


def spacing_feasible(state: PlatoonState, policy: SpacingPolicy) -> bool:
    """Headway policy check ``s_i >= s_bar + rho * v_i`` for every rear vehicle."""
    threshold = policy.s_bar + policy.rho * state.speeds[1:]
    return bool(np.all(state.spacings >= threshold))


@dataclass
class RolloutResult:
    cost: np.ndarray  # inf where the run failed
    peak_max: np.ndarray
    peak_min: np.ndarray
    failed: np.ndarray  # near-collision abort
    in_omega: np.ndarray  # every recorded state inside the invariant set
    final_speeds: np.ndarray


def rollout(x0, v0, params: ControllerParams, cfg: SimConfig = SimConfig(), mu=None,
            workers: int = 1) -> RolloutResult:
    """Batched simulation that keeps only summary metrics.

    Args:
        x0, v0: arrays of shape (B, n).
        mu: gains of shape (B,), (B, n) or a scalar; defaults to ``params.mu``.
        workers: threads sharing the rows; results do not depend on it.

    Returns:
        Per-row cost (same quadrature as :func:`accel_cost`), acceleration
        extrema, failure flags and invariant-set membership. Rows that hit the
        near-collision abort report an infinite cost.
    """
    x = np.asarray(x0, dtype=float)
    v = np.asarray(v0, dtype=float)
    if x.ndim != 2 or x.shape != v.shape:
        raise ValueError("x0 and v0 must share a (batch, vehicles) shape")
    if x.shape[1] < 2:
        raise PlatoonSizeError("the bidirectional law needs at least two vehicles")
    B, n = x.shape
    mu = _mu_matrix(params.mu if mu is None else mu, B, n)
    if workers > 1 and B > 1:
        bounds = np.linspace(0, B, min(workers, B) + 1).astype(int)
        chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(
                lambda sl: _run(x[sl], v[sl], params, cfg.dt, cfg.steps, mu[sl], False)[0],
                chunks))
        out = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    else:
        out, _ = _run(x, v, params, cfg.dt, cfg.steps, mu, record=False)
    failed = out["status"] != _kernel.OK
    return RolloutResult(out["cost"], out["a_hi"], out["a_lo"], failed, out["omega"],
                         out["v_final"])


def write_trajectory_csv(path, traj: Trajectory, columns: list[str] | None = None) -> None:
    """Header ``t,x1..xn,v1..vn,a1..an``; shortest round-trip floats, blanks for NaN."""
    n = traj.n
    ids = columns or [str(i) for i in range(1, n + 1)]
    header = ["t"] + [f"x{i}" for i in ids] + [f"v{i}" for i in ids] + [f"a{i}" for i in ids]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj.times)):
            row = [traj.times[k], *traj.positions[k], *traj.speeds[k], *traj.accels[k]]
            w.writerow([_fmt(val) for val in row])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = (len(header) - 1) // 3
    if header[0] != "t" or len(header) != 3 * n + 1:
        raise ValueError(f"{path}: line 1: not a trajectory header")
    try:
        data = np.array([[_parse(val) for val in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed number ({exc})") from None
    dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.0
    return Trajectory(data[:, 0], data[:, 1:n + 1], data[:, n + 1:2 * n + 1],
                      data[:, 2 * n + 1:], dt)


def _fmt(val: float) -> str:
    return "" if np.isnan(val) else repr(float(val))


def _parse(text: str) -> float:
    return float("nan") if text == "" else float(text)

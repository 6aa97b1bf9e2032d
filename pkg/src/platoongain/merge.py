"""On-ramp merging with a control-zone coordinator.

Ramp vehicles follow cubic position profiles (affine acceleration) from their
spawn point to the merge point. Each arrival time is the earliest one on a
fixed grid that respects speed and acceleration limits, the headway to the
preceding ramp vehicle and a minimum time gap to every other vehicle crossing
the merge point. When a ramp vehicle reaches the merge point it joins the
main-road platoon; the coordinator then re-solves the gain for the vehicles
inside its control zone (the merged vehicle included) and the main road keeps
integrating from the merged state. The zone reaches ``zone_length`` upstream
and ``zone_ahead`` downstream of the merge point, so the vehicle the newcomer
ends up following is part of the re-solved platoon.

Geometry is one-dimensional: ramp positions are measured on the same axis as
the main road, so ``merge_point - x`` is the remaining distance to the merge.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PlatoonState, feedback, in_state_space
from .gainopt import optimize_mu
from .params import ControllerParams, OptConfig, SimConfig, SpacingPolicy
from .simulation import Trajectory, _require_omega, simulate

EXIT_SPEED_MIN = 23.0  # lower end of the random exit-speed interval [m/s]
MIN_MAIN_SPACING = 50.0  # initial main-road gaps must exceed this [m]
FEAS_TOL = 1e-9
MAX_REPLAN = 8


class SchedulingError(RuntimeError):
    """Arrival times cannot be made consistent with the time-gap rule."""


class NoFeasibleArrivalError(SchedulingError):
    pass


class MergeRejectedError(SchedulingError):
    """Inserting the incoming vehicle would leave the invariant set."""


@dataclass(frozen=True)
class CubicPlan:
    """Cubic position profile ``x = a t^3/6 + b t^2/2 + c t + d`` on ``[t0, t_f]``.

    The start state (``x0``, ``v0``, ``acc0``) is kept alongside the absolute
    coefficients; evaluation expands around ``t0``, which avoids the
    cancellation the absolute form suffers when ``t0`` is large.
    """

    a: float
    b: float
    c: float
    d: float
    t0: float
    t_f: float
    x0: float = field(default=math.nan, repr=False, compare=False)
    v0: float = field(default=math.nan, repr=False, compare=False)
    acc0: float = field(default=math.nan, repr=False, compare=False)

    def __post_init__(self):
        if math.isnan(self.x0):
            t = self.t0
            object.__setattr__(self, "x0", self.a * t ** 3 / 6 + self.b * t ** 2 / 2 + self.c * t + self.d)
            object.__setattr__(self, "v0", self.a * t ** 2 / 2 + self.b * t + self.c)
            object.__setattr__(self, "acc0", self.a * t + self.b)


@dataclass(frozen=True)
class Limits:
    v_min: float
    v_max: float
    accel_min: float
    accel_max: float

    @classmethod
    def from_params(cls, params: ControllerParams, v_min: float = 0.0) -> "Limits":
        return cls(v_min, params.v_max, params.accel_min, params.accel_max)


def cubic_coeffs(t0: float, x0: float, v0: float, t_f: float, x_f: float, v_f: float) -> CubicPlan:
    """Coefficients matching position and speed at ``t0`` and ``t_f``.

    The boundary system is solved in local time ``tau = t - t0`` and the
    result expanded to absolute-time coefficients.
    """
    if not t_f > t0:
        raise ValueError(f"arrival time {t_f} must come after start time {t0}")
    T = t_f - t0
    A = np.array([[T ** 3 / 6.0, T ** 2 / 2.0], [T ** 2 / 2.0, T]])
    alpha, beta = np.linalg.solve(A, np.array([x_f - x0 - v0 * T, v_f - v0], dtype=float))
    alpha, beta = float(alpha), float(beta)
    a = alpha
    b = beta - alpha * t0
    c = v0 - beta * t0 + alpha * t0 ** 2 / 2.0
    d = x0 - v0 * t0 + beta * t0 ** 2 / 2.0 - alpha * t0 ** 3 / 6.0
    return CubicPlan(a, b, c, d, float(t0), float(t_f), float(x0), float(v0), beta)


def cubic_eval(plan: CubicPlan, t):
    """Position, speed and acceleration of a plan inside its time window."""
    t = np.asarray(t, dtype=float)
    if np.any(t < plan.t0 - FEAS_TOL) or np.any(t > plan.t_f + FEAS_TOL):
        raise ValueError(f"t outside plan window [{plan.t0}, {plan.t_f}]")
    tau = t - plan.t0
    x = plan.x0 + tau * (plan.v0 + tau * (plan.acc0 / 2.0 + tau * plan.a / 6.0))
    v = plan.v0 + tau * (plan.acc0 + tau * plan.a / 2.0)
    acc = plan.acc0 + plan.a * tau
    if t.ndim == 0:
        return float(x), float(v), float(acc)
    return x, v, acc


def _sample_times(t0: float, t_f: float, sample_dt: float) -> np.ndarray:
    count = int(math.floor((t_f - t0) / sample_dt + 1e-9))
    return np.append(t0 + sample_dt * np.arange(count + 1), t_f)


def plan_violations(plan: CubicPlan, limits: Limits, scheduled_tf=(), t_min: float = 1.5,
                    preceding: CubicPlan | None = None,
                    policy: SpacingPolicy = SpacingPolicy(), sample_dt: float = 0.05) -> list[str]:
    """Names of the constraints a plan breaks (empty when feasible)."""
    out = []
    if any(abs(plan.t_f - tj) < t_min - FEAS_TOL for tj in scheduled_tf):
        out.append("time gap")
    ts = _sample_times(plan.t0, plan.t_f, sample_dt)
    _, v, acc = cubic_eval(plan, ts)
    if np.any(v <= limits.v_min) or np.any(v > limits.v_max + FEAS_TOL):
        out.append("speed")
    if np.any(acc < limits.accel_min - FEAS_TOL) or np.any(acc > limits.accel_max + FEAS_TOL):
        out.append("acceleration")
    if preceding is not None:
        overlap = ts[ts <= preceding.t_f + FEAS_TOL]
        overlap = overlap[overlap >= preceding.t0 - FEAS_TOL]
        if overlap.size:
            x_lead, _, _ = cubic_eval(preceding, np.clip(overlap, preceding.t0, preceding.t_f))
            x, v_o, _ = cubic_eval(plan, overlap)
            if np.any(x_lead - x < policy.s_bar + policy.rho * v_o - FEAS_TOL):
                out.append("headway")
    return out


def min_tf(t0: float, x0: float, v0: float, v_f: float, merge_point: float, limits: Limits,
           scheduled_tf=(), t_min: float = 1.5, step: float = 0.01,
           preceding: CubicPlan | None = None, policy: SpacingPolicy = SpacingPolicy(),
           sample_dt: float = 0.05, ceiling: float = 300.0) -> float:
    """Earliest arrival time on the grid ``t0 + k*step`` with a feasible cubic plan.

    Raises:
        NoFeasibleArrivalError: nothing feasible before ``t0 + ceiling``.
    """
    if not x0 < merge_point:
        raise ValueError("the ramp vehicle must start upstream of the merge point")
    if not EXIT_SPEED_MIN <= v_f <= limits.v_max:
        raise ValueError(f"exit speed {v_f} outside [{EXIT_SPEED_MIN}, {limits.v_max}]")
    scheduled_tf = list(scheduled_tf)
    for k in range(1, int(math.ceil(ceiling / step)) + 1):
        t_f = round(t0 + k * step, 10)
        if any(abs(t_f - tj) < t_min - FEAS_TOL for tj in scheduled_tf):
            continue
        plan = cubic_coeffs(t0, x0, v0, t_f, merge_point, v_f)
        if not plan_violations(plan, limits, (), t_min, preceding, policy, sample_dt):
            return t_f
    raise NoFeasibleArrivalError(
        f"no feasible arrival within {ceiling}s of t={t0} (x0={x0}, v0={v0}, v_f={v_f})")


def coordinator_on_merge(zone: PlatoonState | None, incoming: tuple[float, float],
                         params: ControllerParams, cfg: SimConfig = SimConfig(),
                         opt: OptConfig = OptConfig(), model=None,
                         cache: dict | None = None) -> tuple[float | None, PlatoonState | None]:
    """Gain for the control zone right after a vehicle merges.

    Args:
        zone: main-road vehicles inside the control zone (may be None or empty).
        incoming: (position, speed) of the merging vehicle.
        model: trained surrogate; when absent, or sized for a different
            platoon, the optimizer is called instead.

    Returns:
        ``(mu, merged_state)``; ``mu`` is None when the merged zone holds fewer
        than two vehicles, in which case no gain is defined.

    Raises:
        MergeRejectedError: the merged zone leaves the invariant set.
    """
    xs = [] if zone is None else list(zone.positions)
    vs = [] if zone is None else list(zone.speeds)
    xs.append(float(incoming[0]))
    vs.append(float(incoming[1]))
    order = np.argsort(-np.asarray(xs), kind="stable")
    merged = PlatoonState(np.asarray(xs)[order], np.asarray(vs)[order])
    if merged.n < 2:
        return None, merged
    if not in_state_space(merged, params):
        raise MergeRejectedError(
            f"merged zone violates the invariant set (spacings {merged.spacings.round(3).tolist()})")
    if model is not None and model.n == merged.n:
        from .surrogate.mlp import mlp_forward
        return mlp_forward(model, merged.speeds, merged.positions), merged
    key = (merged.positions.tobytes(), merged.speeds.tobytes())
    if cache is not None and key in cache:
        return cache[key], merged
    mu = optimize_mu(merged, params, cfg, opt).mu_star
    if cache is not None:
        cache[key] = mu
    return mu, merged


@dataclass(frozen=True)
class RampVehicle:
    spawn_time: float
    position: float
    speed: float
    exit_speed: float | None = None
    t_f: float | None = None  # committed arrival time, validated instead of searched


@dataclass
class MergeScenario:
    main: PlatoonState
    ramp: list[RampVehicle]
    merge_point: float
    zone_length: float = 400.0
    t_min: float = 1.5
    zone_ahead: float = 150.0  # zone extent downstream of the merge point
    policy: SpacingPolicy = SpacingPolicy()
    scheduled_tf: list[float] = field(default_factory=list)
    seed: int = 0

    def exit_speeds(self, v_max: float) -> list[float]:
        """Exit speeds, drawing the unspecified ones uniformly in [23, v_max]."""
        rng = np.random.default_rng(self.seed)
        out = []
        for r in self.ramp:
            draw = rng.uniform(EXIT_SPEED_MIN, v_max)
            out.append(draw if r.exit_speed is None else r.exit_speed)
        return out


@dataclass(frozen=True)
class MergeEvent:
    t: float
    vehicle_id: int
    mu_assigned: float
    size_before: int
    size_after: int


@dataclass
class MergeResult:
    trajectory: Trajectory  # NaN where a vehicle is not on the main road
    ids: list[int]
    plans: dict[int, CubicPlan]
    events: list[MergeEvent]
    crossings: dict[int, float]  # merge-point crossing time of every vehicle that crossed

    def column(self, vehicle_id: int) -> int:
        return self.ids.index(vehicle_id)

    def incoming_peak(self, vehicle_id: int) -> float:
        """Largest |acceleration| of a merged vehicle from its merge instant on."""
        a = self.trajectory.accels[:, self.column(vehicle_id)]
        return float(np.nanmax(np.abs(a)))

    def arrival_times(self) -> list[float]:
        return sorted(self.crossings.values())


def validate_scenario(sc: MergeScenario, params: ControllerParams, exit_speeds=None) -> None:
    if sc.zone_length <= 0.0:
        raise ValueError("zone_length must be positive")
    if sc.zone_ahead < 0.0:
        raise ValueError("zone_ahead must be non-negative")
    if sc.t_min <= 0.0:
        raise ValueError("t_min must be positive")
    _require_omega(sc.main, params)
    if np.any(sc.main.spacings <= MIN_MAIN_SPACING):
        raise ValueError(f"initial main-road spacings must exceed {MIN_MAIN_SPACING} m")
    for k, r in enumerate(sc.ramp):
        if not r.position < sc.merge_point:
            raise ValueError(f"ramp vehicle {k + 1} starts at or past the merge point")
        if not 0.0 < r.speed <= params.v_max:
            raise ValueError(f"ramp vehicle {k + 1} speed {r.speed} outside (0, v_max]")
    for k, v_f in enumerate(exit_speeds or []):
        if not EXIT_SPEED_MIN <= v_f <= params.v_max:
            raise ValueError(f"ramp vehicle {k + 1} exit speed {v_f} outside "
                             f"[{EXIT_SPEED_MIN}, {params.v_max}]")
    fixed = sorted(list(sc.scheduled_tf) + [r.t_f for r in sc.ramp if r.t_f is not None])
    for t1, t2 in zip(fixed[:-1], fixed[1:]):
        if t2 - t1 < sc.t_min - FEAS_TOL:
            raise SchedulingError(f"committed arrivals {t1} and {t2} are closer than t_min={sc.t_min}")


def _crossings(traj: Trajectory, ids, merge_point: float) -> dict[int, float]:
    """First time each column passes the merge point, linearly interpolated.

    Vehicles still upstream at the end of the horizon are extrapolated at
    their final speed.
    """
    out = {}
    x = traj.positions
    for j, vid in enumerate(ids):
        col = x[:, j]
        valid = ~np.isnan(col)
        if not valid.any():
            continue
        k0 = int(np.flatnonzero(valid)[0])
        if col[k0] >= merge_point:
            continue  # entered at or beyond the merge point; crossing handled by the caller
        after = np.flatnonzero(valid & (col >= merge_point))
        if after.size:
            k = int(after[0])
            x1, x2 = col[k - 1], col[k]
            t1, t2 = traj.times[k - 1], traj.times[k]
            out[vid] = float(t1 + (merge_point - x1) / (x2 - x1) * (t2 - t1))
        else:
            v_end = traj.speeds[-1, j]
            if v_end > 0.0:
                out[vid] = float(traj.times[-1] + (merge_point - col[-1]) / v_end)
    return out


def _execute(sc: MergeScenario, plans: dict[int, tuple[CubicPlan, float]],
             params: ControllerParams, cfg: SimConfig, opt: OptConfig, model,
             coordinator: bool, fixed_mu: float, cache: dict) -> MergeResult:
    """Integrate the main road through the merge events implied by ``plans``."""
    n_main = sc.main.n
    ids = list(range(1, n_main + 1 + len(sc.ramp)))
    steps = cfg.steps
    T = steps + 1
    N = len(ids)
    X = np.full((T, N), np.nan)
    V = np.full((T, N), np.nan)
    A = np.full((T, N), np.nan)
    active = list(range(1, n_main + 1))  # front to back
    x = np.array(sc.main.positions)
    v = np.array(sc.main.speeds)
    base_mu = params.mu if coordinator else fixed_mu
    mu = {vid: base_mu for vid in active}
    zone_mu = base_mu
    events = []

    def step_of(t):
        k = (t - cfg.t_start) / cfg.dt
        if abs(k - round(k)) > 1e-6:
            raise SchedulingError(f"arrival time {t} is off the integration grid (dt={cfg.dt})")
        return int(round(k))

    schedule = sorted((p.t_f, vid, v_f) for vid, (p, v_f) in plans.items())
    k_cur = 0
    for t_f, vid, v_f in schedule + [(None, None, None)]:
        k_next = steps if t_f is None else step_of(t_f)
        if k_next > steps:
            raise SchedulingError(f"vehicle {vid} arrives at t={t_f}, after the horizon")
        cols = [ids.index(i) for i in active]
        if k_next > k_cur:
            seg_cfg = SimConfig(cfg.dt, cfg.t_start + k_cur * cfg.dt, cfg.t_start + k_next * cfg.dt)
            seg = simulate(PlatoonState(x, v), params, seg_cfg,
                           mu=np.array([mu[i] for i in active]))
            X[k_cur:k_next + 1, cols] = seg.positions
            V[k_cur:k_next + 1, cols] = seg.speeds
            A[k_cur:k_next + 1, cols] = seg.accels
            x, v = seg.positions[-1].copy(), seg.speeds[-1].copy()
        if t_f is None:
            break
        # merge event at step k_next
        t_evt = round(cfg.t_start + k_next * cfg.dt, 10)
        lo = sc.merge_point - sc.zone_length
        hi = sc.merge_point + sc.zone_ahead
        in_zone = [j for j, i in enumerate(active) if lo <= x[j] <= hi]
        zone = PlatoonState(x[in_zone], v[in_zone]) if in_zone else None
        size_before = len(active)
        if coordinator:
            new_mu, _ = coordinator_on_merge(zone, (sc.merge_point, v_f), params, cfg, opt,
                                             model, cache)
        else:
            new_mu = None
        xs = np.append(x, sc.merge_point)
        vs = np.append(v, v_f)
        order = np.argsort(-xs, kind="stable")
        ids_after = [(active + [vid])[j] for j in order]
        merged = PlatoonState(xs[order], vs[order])
        if not in_state_space(merged, params):
            raise MergeRejectedError(f"t={t_evt:.2f}s: inserting vehicle {vid} violates the "
                                     f"invariant set (spacings {merged.spacings.round(3).tolist()})")
        if new_mu is not None:
            zone_mu = new_mu
            for j in in_zone:
                mu[active[j]] = new_mu
        mu[vid] = zone_mu if coordinator else fixed_mu
        active = ids_after
        x, v = np.array(merged.positions), np.array(merged.speeds)
        events.append(MergeEvent(t_evt, vid, mu[vid], size_before, len(active)))
        k_cur = k_next
        # the event row holds the merged state and its feedback
        cols = [ids.index(i) for i in active]
        X[k_cur, cols] = x
        V[k_cur, cols] = v
        A[k_cur, cols] = feedback(merged, params, mu=np.array([mu[i] for i in active]))
    times = cfg.t_start + cfg.dt * np.arange(T)
    traj = Trajectory(times, X, V, A, cfg.dt)
    crossings = _crossings(traj, ids, sc.merge_point)
    for vid, (p, _) in plans.items():
        crossings[vid] = p.t_f
    return MergeResult(traj, ids, {vid: p for vid, (p, _) in plans.items()}, events, crossings)


def _gap_conflicts(t_f: float, others, t_min: float) -> list[float]:
    return [t for t in others if abs(t_f - t) < t_min - FEAS_TOL]


def run_merge_scenario(sc: MergeScenario, params: ControllerParams = ControllerParams(),
                       cfg: SimConfig = SimConfig(), model=None, opt: OptConfig = OptConfig(),
                       coordinator: bool = True, fixed_mu: float = 0.5,
                       sample_dt: float = 0.05) -> MergeResult:
    """Schedule every ramp vehicle, then run the main road through the merges.

    Ramp vehicles are scheduled in spawn order. Each candidate arrival is
    checked against the crossing times predicted by executing the scenario
    with that arrival included (a merge changes the gains and therefore the
    later crossings); the search repeats with the updated predictions until
    the arrival is consistent.

    Args:
        coordinator: re-assign the zone gain at each merge; when False every
            vehicle keeps ``fixed_mu`` throughout (the baseline).
    """
    v_exit = sc.exit_speeds(params.v_max)
    validate_scenario(sc, params, v_exit)
    limits = Limits.from_params(params)
    n_main = sc.main.n
    cache: dict = {}
    committed: dict[int, tuple[CubicPlan, float]] = {}
    order = sorted(range(len(sc.ramp)), key=lambda k: (sc.ramp[k].spawn_time, k))
    prev_plan = None
    result = _execute(sc, committed, params, cfg, opt, model, coordinator, fixed_mu, cache)
    for k in order:
        r = sc.ramp[k]
        vid = n_main + 1 + k
        predicted = result
        for _ in range(MAX_REPLAN):
            others = [t for i, t in predicted.crossings.items() if i != vid] + list(sc.scheduled_tf)
            if r.t_f is not None:
                t_f = r.t_f
                if _gap_conflicts(t_f, others, sc.t_min):
                    raise SchedulingError(f"committed arrival {t_f} of ramp vehicle {k + 1} "
                                          f"violates the minimum time gap")
            else:
                t_f = min_tf(r.spawn_time, r.position, r.speed, v_exit[k], sc.merge_point, limits,
                             others, sc.t_min, cfg.dt, prev_plan, sc.policy, sample_dt)
            plan = cubic_coeffs(r.spawn_time, r.position, r.speed, t_f, sc.merge_point, v_exit[k])
            trial = dict(committed)
            trial[vid] = (plan, v_exit[k])
            predicted = _execute(sc, trial, params, cfg, opt, model, coordinator, fixed_mu, cache)
            later = [t for i, t in predicted.crossings.items() if i != vid] + list(sc.scheduled_tf)
            if not _gap_conflicts(t_f, later, sc.t_min):
                committed = trial
                result = predicted
                prev_plan = plan
                break
        else:
            raise SchedulingError(f"ramp vehicle {k + 1}: arrival time did not settle "
                                  f"after {MAX_REPLAN} re-plans")
    _check_schedule(result, set(range(n_main + 1, n_main + 1 + len(sc.ramp))),
                    sc.scheduled_tf, sc.t_min)
    return result


def _check_schedule(result: MergeResult, ramp_ids, scheduled_tf, t_min: float) -> None:
    """Every arrival involving a ramp vehicle is at least ``t_min`` from all others."""
    items = list(result.crossings.items()) + [(None, t) for t in scheduled_tf]
    for i, ti in items:
        if i not in ramp_ids:
            continue
        for j, tj in items:
            if j != i and abs(ti - tj) < t_min - FEAS_TOL:
                raise SchedulingError(f"arrivals of vehicles {i} and {j} are "
                                      f"{abs(ti - tj):.3f}s apart (< t_min={t_min})")


def random_one_merge_scenario(seed: int, n_main: int = 6, merge_point: float = 1000.0,
                              spacing=(90.0, 140.0), speed=(27.0, 33.0),
                              ramp_distance=(250.0, 400.0), ramp_speed=(24.0, 30.0),
                              n_ramp: int = 1, ramp_headway: float = 4.0) -> MergeScenario:
    """Seeded scenario with a main platoon approaching the merge point.

    Main-road gaps are wide enough (about 3 s or more) for a ramp vehicle to
    fit between two main-road crossings with the default 1.5 s time gap.
    """
    rng = np.random.default_rng(seed)
    gaps = rng.uniform(*spacing, n_main - 1)
    speeds = rng.uniform(*speed, n_main)
    lead = merge_point - rng.uniform(0.0, 150.0)
    main = PlatoonState.from_spacings(gaps, speeds, lead)
    dist = rng.uniform(*ramp_distance)
    v0 = rng.uniform(*ramp_speed)
    ramp = [RampVehicle(round(k * ramp_headway, 2), merge_point - dist, v0) for k in range(n_ramp)]
    return MergeScenario(main, ramp, merge_point, seed=int(rng.integers(2 ** 31)))


def write_events_csv(path, events: list[MergeEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vehicle_id", "mu_assigned", "platoon_size_before", "platoon_size_after"])
        for e in events:
            w.writerow([repr(float(e.t)), e.vehicle_id, repr(float(e.mu_assigned)),
                        e.size_before, e.size_after])


def write_plan_csv(path, plan: CubicPlan, dt: float = 0.01) -> None:
    """Sampled ramp trajectory as ``t,x,v,a`` rows."""
    ts = _sample_times(plan.t0, plan.t_f, dt)
    x, v, acc = cubic_eval(plan, ts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "v", "a"])
        for row in zip(ts, x, v, acc):
            w.writerow([repr(float(val)) for val in row])

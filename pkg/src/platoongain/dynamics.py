"""Closed-loop controller mathematics for a single-lane platoon.

Vehicles are indexed front to back: index 0 is the leader and the spacing
``s[i] = x[i-1] - x[i]`` belongs to the rear vehicle ``i``. Every function here
is pure. The underscore helpers work on arrays with arbitrary leading batch
dimensions (vehicles on the last axis) and skip the domain checks; the public
functions validate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ControllerParams


class DomainError(ValueError):
    """A spacing at or below the minimum distance L was supplied."""


class PlatoonSizeError(ValueError):
    """The bidirectional law needs at least two vehicles."""


@dataclass(frozen=True)
class PlatoonState:
    positions: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).reshape(-1)
        v = np.array(self.speeds, dtype=float).reshape(-1)
        if x.shape != v.shape:
            raise ValueError(f"{x.size} positions but {v.size} speeds")
        x.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "speeds", v)

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def spacings(self) -> np.ndarray:
        """Back-to-back distances s_2..s_n (length n-1)."""
        return self.positions[:-1] - self.positions[1:]

    @classmethod
    def from_spacings(cls, spacings, speeds, lead_position: float = 0.0) -> "PlatoonState":
        x = lead_position - np.concatenate(([0.0], np.cumsum(np.asarray(spacings, dtype=float))))
        return cls(x, speeds)

    def shifted(self, offset: float) -> "PlatoonState":
        return PlatoonState(self.positions + offset, self.speeds)


def _potential(s, L, lam):
    s = np.asarray(s, dtype=float)
    inside = s < lam
    d = np.where(inside, lam - s, 0.0)
    e = np.where(inside, s - L, 1.0)
    return np.where(inside, d * d * d / e, 0.0)


def _potential_deriv(s, L, lam):
    s = np.asarray(s, dtype=float)
    inside = s < lam
    d = np.where(inside, lam - s, 0.0)
    e = np.where(inside, s - L, 1.0)
    return np.where(inside, -3.0 * d * d / e - d * d * d / (e * e), 0.0)


def _kernel_f(x, eps):
    x = np.asarray(x, dtype=float)
    mid = (x + eps) * (x + eps)
    upper = eps * eps + 2.0 * eps * x
    out = np.where(x >= 0.0, upper, np.where(x > -eps, mid, 0.0))
    return out / (2.0 * eps)


def _gain_g(x, p: ControllerParams):
    x = np.asarray(x, dtype=float)
    scale = p.v_max / (p.v_star * (p.v_max - p.v_star))
    return scale * _kernel_f(x, p.epsilon) - x / p.v_star


def _coupling(x, p: ControllerParams):
    """Potential coupling term of each vehicle's law, plus the spacings.

    The term is ``V'(s_i) - V'(s_{i+1})`` with the missing neighbour terms of
    the leader and the tail taken as zero, so the leader gets ``-V'(s_2)`` and
    the tail gets ``V'(s_n)``.
    """
    s = x[..., :-1] - x[..., 1:]
    dv = _potential_deriv(s, p.L, p.lam)
    term = np.zeros(x.shape)
    term[..., :-1] -= dv
    term[..., 1:] += dv
    return term, s


def _accel(x, v, p: ControllerParams, mu=None):
    """Batched feedback accelerations and spacings; ``mu`` broadcasts against ``v``."""
    if mu is None:
        mu = p.mu
    term, s = _coupling(x, p)
    k = mu + _gain_g(term, p)
    return -k * (v - p.v_star) + term, s


def _check_spacings(s, p: ControllerParams):
    s = np.asarray(s, dtype=float)
    if np.any(s <= p.L):
        bad = np.flatnonzero(np.atleast_1d(s) <= p.L)
        raise DomainError(f"spacing must exceed L={p.L}; offending entries at {bad.tolist()}")


def _scalar_or_array(out):
    return float(out) if np.ndim(out) == 0 else out


def potential(s, params: ControllerParams):
    """Repulsive potential ``(lam - s)^3 / (s - L)`` below ``lam``, zero beyond."""
    _check_spacings(s, params)
    return _scalar_or_array(_potential(s, params.L, params.lam))


def potential_deriv(s, params: ControllerParams):
    """Analytic derivative of :func:`potential` with respect to the spacing."""
    _check_spacings(s, params)
    return _scalar_or_array(_potential_deriv(s, params.L, params.lam))


def kernel_f(x, params: ControllerParams):
    """C^1 smoothing of ``max(x, 0)`` from above, with width ``epsilon``."""
    return _scalar_or_array(_kernel_f(x, params.epsilon))


def gain_g(x, params: ControllerParams):
    return _scalar_or_array(_gain_g(x, params))


def gains_k(state: PlatoonState, params: ControllerParams, mu=None) -> np.ndarray:
    """State-dependent gains ``k_i = mu + g(coupling_i)``."""
    if state.n < 2:
        raise PlatoonSizeError("gains are defined for platoons of two or more vehicles")
    _check_spacings(state.spacings, params)
    mu = params.mu if mu is None else mu
    term, _ = _coupling(state.positions, params)
    return mu + _gain_g(term, params)


def feedback(state: PlatoonState, params: ControllerParams, mu=None) -> np.ndarray:
    """Accelerations commanded by the bidirectional cruise controllers.

    Args:
        state: platoon snapshot, leader first.
        params: controller constants.
        mu: optional gain override, a scalar or one value per vehicle.

    Returns:
        Array of n accelerations (the right-hand side for the speeds).
    """
    if state.n < 2:
        raise PlatoonSizeError("the bidirectional law needs at least two vehicles")
    _check_spacings(state.spacings, params)
    return _accel(state.positions, state.speeds, params, mu)[0]


def in_state_space(state: PlatoonState, params: ControllerParams) -> bool:
    """Membership in the invariant set: spacings > L and 0 <= v <= v_max."""
    if state.n >= 2 and np.min(state.spacings) <= params.L:
        return False
    return bool(np.max(state.speeds) <= params.v_max and np.min(state.speeds) >= 0.0)

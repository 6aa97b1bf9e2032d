"""Parameter records shared by the simulator, the gain optimizer and the surrogate.

Defaults are the single-lane experiment values (L=5 m, lambda=20 m, v*=30 m/s,
v_max=35 m/s, eps=0.2, mu=0.5) with acceleration bounds 3.5 / -4 m/s^2.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ControllerParams:
    L: float = 5.0  # minimum inter-vehicle distance [m]
    lam: float = 20.0  # range of the repulsive potential [m]
    v_star: float = 30.0  # desired speed [m/s]
    v_max: float = 35.0  # speed limit [m/s]
    epsilon: float = 0.2
    mu: float = 0.5  # tunable gain [1/s]
    accel_min: float = -4.0
    accel_max: float = 3.5

    def __post_init__(self):
        if not 0.0 < self.L < self.lam:
            raise ValueError(f"need 0 < L < lam, got L={self.L}, lam={self.lam}")
        if not 0.0 < self.v_star < self.v_max:
            raise ValueError(f"need 0 < v_star < v_max, got {self.v_star}, {self.v_max}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.mu <= 2.0:
            raise ValueError(f"mu must lie in (0, 2], got {self.mu}")
        if not self.accel_min < 0.0 < self.accel_max:
            raise ValueError(
                f"need accel_min < 0 < accel_max, got {self.accel_min}, {self.accel_max}"
            )

    def with_mu(self, mu: float) -> "ControllerParams":
        return ControllerParams(
            self.L, self.lam, self.v_star, self.v_max, self.epsilon, float(mu),
            self.accel_min, self.accel_max,
        )


@dataclass(frozen=True)
class SimConfig:
    """Fixed-step integration window.

    ``t_end - t_start`` must be an integer multiple of ``dt``; the step count is
    rounded and checked against a relative tolerance of 1e-9.
    """

    dt: float = 0.01
    t_start: float = 0.0
    t_end: float = 60.0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        span = (self.t_end - self.t_start) / self.dt
        if abs(span - round(span)) > 1e-9 * max(1.0, span):
            raise ValueError(f"horizon {self.t_end - self.t_start} is not a multiple of dt={self.dt}")

    @property
    def steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))


@dataclass(frozen=True)
class SpacingPolicy:
    s_bar: float = 6.0  # standstill distance [m]
    rho: float = 0.5  # minimum headway [s]

    def __post_init__(self):
        if self.s_bar <= 0.0:
            raise ValueError(f"s_bar must be positive, got {self.s_bar}")
        if self.rho < 0.0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")


@dataclass(frozen=True)
class OptConfig:
    mu_lo: float = 0.01
    mu_hi: float = 2.0
    coarse_grid: int = 40
    refine_tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.mu_lo < self.mu_hi <= 2.0:
            raise ValueError(f"need 0 < mu_lo < mu_hi <= 2, got {self.mu_lo}, {self.mu_hi}")
        if self.coarse_grid < 3:
            raise ValueError("coarse_grid must be at least 3")
        if self.refine_tol <= 0.0:
            raise ValueError("refine_tol must be positive")


@dataclass(frozen=True)
class ICRanges:
    """Uniform sampling intervals for initial spacings and speeds."""

    spacing: tuple[float, float] = (16.0, 24.0)
    speed: tuple[float, float] = (27.0, 34.0)

    def __post_init__(self):
        for name in ("spacing", "speed"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty {name} range ({lo}, {hi})")

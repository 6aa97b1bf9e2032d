"""Labelled initial conditions for training the gain surrogate."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import PlatoonState, in_state_space
from ..gainopt import optimize_mu_batch
from ..params import ControllerParams, ICRanges, OptConfig, SimConfig, SpacingPolicy
from ..simulation import spacing_feasible

SPLIT_FRACTIONS = (0.85, 0.075, 0.075)
_SPLIT_STREAM = 0x5B17


class IncompatibleRangesError(ValueError):
    """The sampling ranges cannot satisfy the spacing policy."""


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_initial_conditions(n: int, ranges: ICRanges = ICRanges(),
                              policy: SpacingPolicy | None = SpacingPolicy(),
                              seed=None, params: ControllerParams = ControllerParams(),
                              max_tries: int = 10_000) -> PlatoonState:
    """Uniform spacings and speeds, lead vehicle anchored at position 0.

    The headway policy couples each spacing only to its own rear vehicle's
    speed, so each (spacing, rear speed) pair is rejection-resampled on its
    own; the accepted distribution is the same as rejecting whole states.
    ``policy=None`` draws without the headway filter.
    """
    if n < 2:
        raise ValueError("platoons need at least two vehicles")
    if policy is not None and policy.s_bar <= params.L:
        raise ValueError(f"policy standstill distance {policy.s_bar} must exceed L={params.L}")
    rng = _rng(seed)
    s_lo, s_hi = ranges.spacing
    v_lo, v_hi = ranges.speed
    speeds = np.empty(n)
    spacings = np.empty(n - 1)
    speeds[0] = rng.uniform(v_lo, v_hi)
    for i in range(1, n):
        for _ in range(max_tries):
            s = rng.uniform(s_lo, s_hi)
            v = rng.uniform(v_lo, v_hi)
            headway_ok = policy is None or s >= policy.s_bar + policy.rho * v
            if headway_ok and s > params.L and 0.0 <= v <= params.v_max:
                break
        else:
            raise IncompatibleRangesError(
                f"no admissible spacing after {max_tries} draws for vehicle {i + 1}: "
                f"spacing {ranges.spacing}, speed {ranges.speed}, policy {policy}")
        spacings[i - 1] = s
        speeds[i] = v
    state = PlatoonState.from_spacings(spacings, speeds)
    if not in_state_space(state, params) or (policy is not None
                                             and not spacing_feasible(state, policy)):
        raise IncompatibleRangesError(f"speed range {ranges.speed} leaves the invariant set")
    return state


def split_indices(count: int, seed: int) -> dict[str, np.ndarray]:
    """Seeded 85 / 7.5 / 7.5 partition of ``range(count)``.

    Uses its own stream so the partition is independent of the sample draws
    made with the same seed.
    """
    perm = np.random.default_rng([_SPLIT_STREAM, seed]).permutation(count)
    n_train = int(round(SPLIT_FRACTIONS[0] * count))
    n_val = int(round(SPLIT_FRACTIONS[1] * count))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


@dataclass(frozen=True)
class Sample:
    speeds0: np.ndarray
    positions0: np.ndarray
    mu_star: float

    @property
    def state(self) -> PlatoonState:
        return PlatoonState(self.positions0, self.speeds0)


@dataclass
class Dataset:
    speeds: np.ndarray  # (N, n)
    positions: np.ndarray  # (N, n)
    mu_star: np.ndarray  # (N,)
    split: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.mu_star)

    @property
    def n(self) -> int:
        return self.speeds.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(self.speeds[i], self.positions[i], float(self.mu_star[i]))
                for i in range(len(self))]

    def subset(self, name: str) -> "Dataset":
        idx = self.split[name]
        return Dataset(self.speeds[idx], self.positions[idx], self.mu_star[idx])

    def to_csv(self, path) -> None:
        n = self.n
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"v{i}" for i in range(1, n + 1)] + [f"x{i}" for i in range(1, n + 1)]
                       + ["mu_star"])
            for v, x, mu in zip(self.speeds, self.positions, self.mu_star):
                w.writerow([repr(float(val)) for val in (*v, *x, mu)])

    @classmethod
    def from_csv(cls, path, split_seed=None) -> "Dataset":
        """Load a dataset file; ``split_seed`` regenerates the partition."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header = rows[0]
        n = (len(header) - 1) // 2
        expected = [f"v{i}" for i in range(1, n + 1)] + [f"x{i}" for i in range(1, n + 1)] + ["mu_star"]
        if header != expected:
            raise ValueError(f"{path}: line 1: expected header {','.join(expected)}")
        data = np.empty((len(rows) - 1, 2 * n + 1))
        for k, row in enumerate(rows[1:]):
            if len(row) != 2 * n + 1:
                raise ValueError(f"{path}: line {k + 2}: expected {2 * n + 1} fields, got {len(row)}")
            try:
                data[k] = [float(val) for val in row]
            except ValueError:
                raise ValueError(f"{path}: line {k + 2}: malformed number") from None
        ds = cls(data[:, :n], data[:, n:2 * n], data[:, 2 * n])
        if split_seed is not None:
            ds.split = split_indices(len(ds), split_seed)
        return ds


def generate_dataset(count: int, n: int = 7, ranges: ICRanges = ICRanges(),
                     policy: SpacingPolicy = SpacingPolicy(),
                     params: ControllerParams = ControllerParams(),
                     cfg: SimConfig = SimConfig(), opt: OptConfig = OptConfig(),
                     seed: int = 0, workers: int = 1, batch: int = 250) -> Dataset:
    """Draw initial conditions and label each with its optimal gain.

    Draws whose optimization has no feasible gain are discarded and replaced
    by fresh draws. Samples keep their draw order; the split comes from a
    separate seeded shuffle.
    """
    if count < 100:
        raise ValueError("datasets need at least 100 samples")
    rng = np.random.default_rng(seed)
    speeds, positions, labels = [], [], []
    while len(labels) < count:
        need = count - len(labels)
        states = [sample_initial_conditions(n, ranges, policy, rng, params)
                  for _ in range(min(batch, need))]
        for st, sol in zip(states, optimize_mu_batch(states, params, cfg, opt, workers)):
            if sol.feasible and len(labels) < count:
                speeds.append(st.speeds)
                positions.append(st.positions)
                labels.append(sol.mu_star)
    return Dataset(np.array(speeds), np.array(positions), np.array(labels),
                   split_indices(count, seed))

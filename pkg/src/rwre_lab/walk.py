"""Quenched walk simulation: single walks and pairs in a shared environment."""

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .env import ConfigurationError, EnvironmentHandle, as_point
from .prf import U64


@dataclass(frozen=True)
class Trajectory:
    """A finite lattice path with the seeds that produced it.

    ``positions`` has shape (horizon + 1, d); index is time.
    """

    start: np.ndarray
    positions: np.ndarray
    walk_seed: int
    env_seed: int

    @property
    def horizon(self):
        return self.positions.shape[0] - 1

    @property
    def dimension(self):
        return self.positions.shape[1]

    def levels(self, axis):
        """Projection onto the direction axis (integer levels)."""
        return self.positions[:, axis]


@dataclass(frozen=True)
class TrajectoryPair:
    first: Trajectory
    second: Trajectory

    def __post_init__(self):
        if self.first.env_seed != self.second.env_seed:
            raise ConfigurationError("paired walks must share the environment seed")
        if self.first.walk_seed == self.second.walk_seed:
            raise ConfigurationError("paired walks must use distinct walk seeds")


def simulate_walk(handle: EnvironmentHandle, start, horizon, walk_seed):
    """Run one walk; fully determined by (env_seed, walk_seed, start, horizon)."""
    if horizon < 0:
        raise ConfigurationError("horizon must be non-negative")
    p = as_point(start, handle.model.dimension)
    fam, offs, pa, pb, al, eps, q, noise = handle._packed
    positions = _kernels.simulate(
        U64(handle.env_seed), U64(int(walk_seed) & 0xFFFFFFFFFFFFFFFF), p,
        int(horizon), fam, offs, pa, pb, al, eps, q, noise)
    return Trajectory(start=p, positions=positions,
                      walk_seed=int(walk_seed) & 0xFFFFFFFFFFFFFFFF,
                      env_seed=handle.env_seed)


def simulate_pair(handle, start1, start2, horizon, seed1, seed2):
    """Two conditionally independent walks in the same environment."""
    if int(seed1) == int(seed2):
        raise ConfigurationError("pair walk seeds must differ")
    return TrajectoryPair(
        first=simulate_walk(handle, start1, horizon, seed1),
        second=simulate_walk(handle, start2, horizon, seed2),
    )


def dump_trajectory_csv(traj, path):
    """One row per step: t, x_1..x_d; header comment carries the seeds."""
    d = traj.dimension
    with open(path, "w", newline="") as fh:
        fh.write(f"# env_seed={traj.env_seed} walk_seed={traj.walk_seed}\r\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
        for t in range(traj.positions.shape[0]):
            w.writerow([t] + [int(v) for v in traj.positions[t]])

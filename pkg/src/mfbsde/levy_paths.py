"""Driving-noise simulation: time grids, finite-activity jump measures,
seeded path ensembles and the exponential change of measure.

The jump part is a compound Poisson process described by a finite list of
atoms (mark, weight); every integral against the Levy measure downstream
becomes a weighted sum over atoms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "TimeGrid",
    "LevyMeasure",
    "PathEnsemble",
    "GirsanovDensity",
    "build_grid",
    "simulate_ensemble",
    "girsanov_density",
    "shift_to_q",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_M = T with t_i = i * dt."""

    horizon: float
    steps: int

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class LevyMeasure:
    """Finite-activity jump measure given by atoms (mark, weight)."""

    marks: np.ndarray
    weights: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.marks.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @staticmethod
    def from_atoms(atoms) -> "LevyMeasure":
        """Build from an iterable of (mark, weight) pairs; may be empty."""
        atoms = list(atoms)
        marks = np.asarray([a[0] for a in atoms], dtype=float)
        weights = np.asarray([a[1] for a in atoms], dtype=float)
        if np.any(marks == 0.0):
            raise ConfigError("jump marks must be nonzero")
        if np.any(weights <= 0.0):
            raise ConfigError("jump weights must be positive")
        if len(set(marks.tolist())) != marks.size:
            raise ConfigError("jump marks must be distinct")
        if not np.all(np.isfinite(marks)) or not np.all(np.isfinite(weights)):
            raise ConfigError("jump atoms must be finite")
        return LevyMeasure(marks=marks, weights=weights)


def build_grid(horizon: float, steps: int) -> TimeGrid:
    """Uniform time grid on [0, horizon] with `steps` subintervals."""
    if not (horizon > 0.0) or not math.isfinite(horizon):
        raise ConfigError(f"horizon must be a positive real, got {horizon}")
    if int(steps) != steps or steps < 1:
        raise ConfigError(f"steps must be an integer >= 1, got {steps}")
    return TimeGrid(horizon=float(horizon), steps=int(steps))


def _atom_generators(seed: int, n_atoms: int):
    """Per-source generators derived from one seed.

    Stream 0 drives the Brownian increments, streams 1..J the per-atom
    Poisson counts.  Philox is counter-based, so regeneration is
    bit-identical for the same (seed, shape) regardless of how callers
    parallelise around this module.
    """
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_atoms + 1)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@dataclass(frozen=True)
class PathEnsemble:
    """Seeded Monte Carlo ensemble of driving noise on a time grid.

    db[n, i] is the increment of B over [t_i, t_{i+1}]; jumps[n, i, j] the
    Poisson count of atom j on that interval.  `bm_drift` and `jump_comp`
    hold the per-step mean of db and the per-step jump compensator under
    the ensemble's own measure, so downstream schemes can form martingale
    increments without knowing which measure they are under.
    """

    grid: TimeGrid
    levy: LevyMeasure
    n_paths: int
    seed: int
    db: np.ndarray          # (n, M)
    jumps: np.ndarray       # (n, M, J) integer counts
    measure: str = "P"
    bm_drift: np.ndarray = field(default=None)   # (M,)
    jump_comp: np.ndarray = field(default=None)  # (M, J)

    def __post_init__(self):
        m = self.grid.steps
        if self.bm_drift is None:
            object.__setattr__(self, "bm_drift", np.zeros(m))
        if self.jump_comp is None:
            comp = np.broadcast_to(
                self.levy.weights * self.grid.dt, (m, self.levy.n_atoms)
            ).copy()
            object.__setattr__(self, "jump_comp", comp)

    # -- path functionals (cached; ensembles are immutable).  Node-sliced
    # arrays are kept column-contiguous since solvers walk them by node.
    @cached_property
    def brownian_nodes(self) -> np.ndarray:
        """B(t_i) for i = 0..M, shape (n, M+1)."""
        out = np.zeros((self.n_paths, self.grid.steps + 1), order="F")
        np.cumsum(self.db, axis=1, out=out[:, 1:])
        return out

    @cached_property
    def compensated_jumps_p(self) -> np.ndarray:
        """Increments of the compensated measure as defined under P,
        i.e. counts minus weight * dt.  This is the definitional object
        entering path functionals, independent of the sampling measure."""
        return self.jumps - self.levy.weights * self.grid.dt

    @cached_property
    def compensated_jump_nodes(self) -> np.ndarray:
        """Running sums of the P-compensated increments, shape (n, M+1, J)."""
        out = np.zeros((self.n_paths, self.grid.steps + 1, self.levy.n_atoms),
                       order="F")
        np.cumsum(self.compensated_jumps_p, axis=1, out=out[:, 1:, :])
        return out

    # -- martingale increments under the ensemble's own measure ----------
    @cached_property
    def martingale_db(self) -> np.ndarray:
        return np.asfortranarray(self.db - self.bm_drift)

    @cached_property
    def martingale_jumps(self) -> np.ndarray:
        return np.asfortranarray(self.jumps - self.jump_comp)


def simulate_ensemble(
    grid: TimeGrid, levy: LevyMeasure, n_paths: int, seed: int
) -> PathEnsemble:
    """Draw Brownian increments N(0, dt) and per-atom Poisson counts with
    mean weight * dt, all from per-source counter-based streams."""
    if n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {n_paths}")
    m, j = grid.steps, levy.n_atoms
    gens = _atom_generators(seed, j)
    db = gens[0].standard_normal((n_paths, m)) * math.sqrt(grid.dt)
    jumps = np.zeros((n_paths, m, j))
    for a in range(j):
        jumps[:, :, a] = gens[1 + a].poisson(
            levy.weights[a] * grid.dt, size=(n_paths, m)
        )
    return PathEnsemble(
        grid=grid, levy=levy, n_paths=n_paths, seed=seed, db=db, jumps=jumps
    )


def _eval_nodes(fn, nodes) -> np.ndarray:
    """Evaluate a scalar-or-callable time coefficient on grid nodes."""
    if callable(fn):
        return np.asarray([float(fn(t)) for t in nodes])
    return np.full(len(nodes), float(fn))


def _eval_nodes_atoms(fn, nodes, marks) -> np.ndarray:
    """Evaluate a scalar-or-callable (t, mark) coefficient, shape (len(nodes), J)."""
    out = np.empty((len(nodes), len(marks)))
    if callable(fn):
        for a, z in enumerate(marks):
            out[:, a] = [float(fn(t, z)) for t in nodes]
    else:
        out[:] = float(fn)
    return out


def _check_jump_tilt(e1: np.ndarray, nodes, marks) -> None:
    bad = np.argwhere(1.0 + e1 <= 0.0)
    if bad.size:
        i, a = bad[0]
        raise DomainError(
            f"1 + eta1 must stay positive; violated at t={nodes[i]:g}, "
            f"mark={marks[a]:g} (eta1={e1[i, a]:g})"
        )


@dataclass(frozen=True)
class GirsanovDensity:
    """Density process m[n, i] = M(t_i) of the tilted measure against P."""

    m: np.ndarray  # (n, M+1)


def girsanov_density(ens: PathEnsemble, beta1, eta1) -> GirsanovDensity:
    """Evaluate the exponential density of the measure that removes drift
    beta1 from B and tilts atom intensities by (1 + eta1).

    The exponent is the stochastic-exponential form
        sum beta1 dB - 1/2 sum beta1^2 dt
        + sum log(1 + eta1) dN - sum eta1 * weight * dt,
    evaluated exactly on grid increments, so M > 0 pathwise and
    E[M(t_i)] = 1 at every node.
    """
    grid, levy = ens.grid, ens.levy
    nodes = grid.nodes
    b1 = _eval_nodes(beta1, nodes)[:-1]
    e1 = _eval_nodes_atoms(eta1, nodes, levy.marks)
    _check_jump_tilt(e1, nodes, levy.marks)
    e1 = e1[:-1]

    incr = b1 * ens.db - 0.5 * b1**2 * grid.dt
    if levy.n_atoms:
        incr = incr + (
            np.log1p(e1) * ens.jumps - e1 * levy.weights * grid.dt
        ).sum(axis=2)
    logm = np.zeros((ens.n_paths, grid.steps + 1))
    np.cumsum(incr, axis=1, out=logm[:, 1:])
    return GirsanovDensity(m=np.exp(logm))


def shift_to_q(ens: PathEnsemble, beta1, eta1) -> PathEnsemble:
    """Resample the ensemble under the tilted measure.

    Brownian increments acquire mean beta1 * dt, atom j's counts are drawn
    with intensity (1 + eta1) * weight.  The same per-source streams are
    reused, so a zero tilt reproduces the input bit for bit.  The returned
    ensemble carries its own drift/compensator so martingale increments
    stay correct downstream.
    """
    if ens.measure != "P":
        raise ConfigError("shift_to_q expects a P-measure ensemble")
    grid, levy = ens.grid, ens.levy
    nodes = grid.nodes
    b1 = _eval_nodes(beta1, nodes)[:-1]
    e1 = _eval_nodes_atoms(eta1, nodes, levy.marks)
    _check_jump_tilt(e1, nodes, levy.marks)
    e1 = e1[:-1]

    drift = b1 * grid.dt
    db_q = ens.db + drift
    comp_q = (1.0 + e1) * levy.weights * grid.dt
    gens = _atom_generators(ens.seed, levy.n_atoms)
    jumps_q = np.zeros_like(ens.jumps)
    for a in range(levy.n_atoms):
        jumps_q[:, :, a] = gens[1 + a].poisson(
            comp_q[:, a], size=(ens.n_paths, grid.steps)
        )
    return PathEnsemble(
        grid=grid,
        levy=levy,
        n_paths=ens.n_paths,
        seed=ens.seed,
        db=db_q,
        jumps=jumps_q,
        measure="Q",
        bm_drift=drift,
        jump_comp=comp_q,
    )

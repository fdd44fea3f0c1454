"""Centered diffusively-rescaled polygonal paths, functionals, path surgery.

Paths are compared in the uniform norm with the sup taken over the union of
knot grids, which is exact for piecewise-linear interpolation.  The surgery
construction excises the slab of the walk that straddles a target site and
splices the remainder, producing a path whose law ignores the environment
at that site; the module checks the pathwise difference bound sample by
sample.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .regen import InputError, confirmed_times_levels


@dataclass(frozen=True)
class ScaledPath:
    """Polygonal path with knots at k/n, k = 0..len-1; knots[0] = 0."""

    n: int
    knots: np.ndarray  # (m+1, d) float64
    anchor_time: int

    def __post_init__(self):
        if np.any(np.abs(self.knots[0]) > 1e-12):
            raise InputError("scaled path must start at the origin")

    def value(self, t):
        """Linear interpolation between knots at time t in [0, (m)/n]."""
        s = t * self.n
        k = int(np.floor(s))
        k = min(max(k, 0), self.knots.shape[0] - 2)
        frac = s - k
        return (1.0 - frac) * self.knots[k] + frac * self.knots[k + 1]


def scaled_process(traj, n, v0, anchor) -> ScaledPath:
    """Centered rescaled path: knot k is (X_{anchor+k} - X_anchor - v0 k)/sqrt(n)."""
    if anchor + n > traj.horizon:
        raise InputError(
            f"horizon {traj.horizon} too short for anchor {anchor} + n {n}")
    v0 = np.asarray(v0, dtype=np.float64)
    seg = traj.positions[anchor:anchor + n + 1].astype(np.float64)
    ks = np.arange(n + 1, dtype=np.float64)[:, None]
    knots = (seg - seg[0] - v0[None, :] * ks) / np.sqrt(n)
    return ScaledPath(n=n, knots=knots, anchor_time=int(anchor))


def sup_distance(p: ScaledPath, q: ScaledPath):
    """Uniform distance over the common time span (exact at the knot union)."""
    if p.n != q.n:
        raise InputError("paths must share the scale n")
    m = min(p.knots.shape[0], q.knots.shape[0])
    return float(np.max(np.abs(p.knots[:m] - q.knots[:m])))


def concatenate(p1, p2):
    """Splice lattice path p2 (relative to its start) after p1's endpoint."""
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    if p2.shape[0] <= 1:
        return p1.copy()
    return np.vstack([p1, p1[-1] + (p2[1:] - p2[0])])


# --- Bounded-Lipschitz functionals ---------------------------------------

@dataclass(frozen=True)
class Functional:
    """A functional with |F| <= 1 and Lipschitz constant <= 1 in sup norm."""

    id: str
    axis: int = 0
    a: Optional[np.ndarray] = None
    b: float = 1.0

    def __call__(self, path: ScaledPath):
        return evaluate_functional(self, path)


def endpoint_coord(axis, clip=1.0):
    return Functional(id="endpoint_coord", axis=axis, b=clip)


def sup_norm_clipped():
    return Functional(id="sup_norm_clipped")


def smoothed_halfspace(a, b):
    """clip(b * (w(1) . a), +-1), rescaled so the Lipschitz constant is 1."""
    return Functional(id="smoothed_halfspace", a=np.asarray(a, dtype=np.float64),
                      b=float(b))


def evaluate_functional(f: Functional, path: ScaledPath):
    end = path.knots[-1]
    if f.id == "endpoint_coord":
        return float(np.clip(end[f.axis], -1.0, 1.0))
    if f.id == "sup_norm_clipped":
        return float(min(np.max(np.abs(path.knots)), 1.0))
    if f.id == "smoothed_halfspace":
        scale = max(1.0, f.b * float(np.sum(np.abs(f.a))))
        return float(np.clip(f.b * (end @ f.a), -1.0, 1.0)) / scale
    raise InputError(f"unknown functional {f.id!r}")


def parse_functional(spec):
    """Parse 'endpoint:0', 'supnorm' or 'halfspace:1,0:2.0'."""
    parts = str(spec).split(":")
    if parts[0] in ("endpoint", "endpoint_coord"):
        return endpoint_coord(int(parts[1]) if len(parts) > 1 else 0)
    if parts[0] in ("supnorm", "sup_norm_clipped"):
        return sup_norm_clipped()
    if parts[0] in ("halfspace", "smoothed_halfspace"):
        a = [float(v) for v in parts[1].split(",")]
        b = float(parts[2]) if len(parts) > 2 else 1.0
        return smoothed_halfspace(a, b)
    raise InputError(f"unknown functional spec {spec!r}")


# --- Surgery at a site ----------------------------------------------------

@dataclass(frozen=True)
class SurgeryMeta:
    z: np.ndarray
    censored: bool
    tau_minus: int = -1
    tau_plus: int = -1
    tau1_bullet: int = -1
    tau1: int = -1


@dataclass(frozen=True)
class SurgeryReport:
    z: np.ndarray
    hit: bool
    j_star: int  # regeneration slab of the first visit to z; -1 if none
    lhs: float
    rhs: float
    holds: bool
    censored: bool
    meta: Optional[SurgeryMeta] = None


def _surgery_times(traj, regens, z, axis):
    """(tau_minus, tau_plus, tau1_bullet) for site z, or None when censored.

    tau_minus: first time the walk's level reaches z's level.
    tau_plus: first confirmed regeneration time at a level beyond z.
    tau1_bullet: earliest fresh-maximum candidate whose no-return window
    reaches tau_minus (0 by convention when z's level is already attained).
    """
    lvl = traj.levels(axis)
    zlvl = int(np.asarray(z)[axis])
    attained = np.flatnonzero(lvl >= zlvl)
    if attained.shape[0] == 0:
        return None
    tau_minus = int(attained[0])
    times, levels = confirmed_times_levels(regens)
    beyond = np.flatnonzero(levels > zlvl)
    if beyond.shape[0] == 0:
        return None
    tau_plus = int(times[beyond[0]])
    if tau_minus == 0:
        return tau_minus, tau_plus, 0
    # candidates k <= tau_minus: strict fresh maxima whose first return to
    # <= lvl[k] does not happen strictly before tau_minus
    t1b = -1
    prevmax = lvl[0]
    for k in range(1, tau_minus + 1):
        if lvl[k] > prevmax:
            window = lvl[k + 1:tau_minus]
            if window.shape[0] == 0 or np.min(window) > lvl[k]:
                t1b = k
                break
        prevmax = max(prevmax, lvl[k])
    if t1b < 0:
        t1b = tau_minus
    return tau_minus, tau_plus, t1b


def glue_at_site(traj, regens, z, n, v0, axis):
    """Build the surgered rescaled path around site z.

    The glued lattice path follows the walk up to tau_minus, then continues
    with the post-tau_plus increments until it has n + tau1_bullet steps,
    so the rescaled path is defined on all of [0, 1].  Censored when the
    needed times are undefined within the horizon.
    """
    z = np.asarray(z, dtype=np.int64)
    times = _surgery_times(traj, regens, z, axis)
    if times is None:
        return None, SurgeryMeta(z=z, censored=True)
    tau_minus, tau_plus, t1b = times
    end = tau_plus + (n + t1b - tau_minus)
    if end > traj.horizon or tau_plus + n > traj.horizon:
        return None, SurgeryMeta(z=z, censored=True, tau_minus=tau_minus,
                                 tau_plus=tau_plus, tau1_bullet=t1b)
    glued = concatenate(traj.positions[:tau_minus + 1],
                        traj.positions[tau_plus:end + 1])
    v0 = np.asarray(v0, dtype=np.float64)
    seg = glued[t1b:t1b + n + 1].astype(np.float64)
    ks = np.arange(n + 1, dtype=np.float64)[:, None]
    knots = (seg - seg[0] - v0[None, :] * ks) / np.sqrt(n)
    conf_times, _ = confirmed_times_levels(regens)
    tau1 = int(conf_times[0]) if conf_times.shape[0] else -1
    meta = SurgeryMeta(z=z, censored=False, tau_minus=tau_minus,
                       tau_plus=tau_plus, tau1_bullet=t1b, tau1=tau1)
    return ScaledPath(n=n, knots=knots, anchor_time=t1b), meta


def _hit_slabs(traj, regens, z):
    """Indices j >= 1 with z in {X}_{tau_{j-1}}^{tau_j - 1} (tau_0 = 0)."""
    times, _ = confirmed_times_levels(regens)
    bounds = np.concatenate([[0], times])
    visits = np.flatnonzero(np.all(traj.positions == z[None, :], axis=1))
    hits = []
    for j in range(1, bounds.shape[0]):
        lo, hi = bounds[j - 1], bounds[j]  # slab j covers [lo, hi - 1]
        if np.any((visits >= lo) & (visits < hi)):
            hits.append(j)
    tail_hit = bool(visits.shape[0]) and bool(np.any(visits >= bounds[-1]))
    return hits, times, tail_hit


def surgery_bound_check(traj, regens, z, n, v0, axis, r0,
                        tol=1e-9) -> SurgeryReport:
    """Verify sup |W - W_glued| against the slab-increment bound at site z."""
    z = np.asarray(z, dtype=np.int64)
    hits, times, tail_hit = _hit_slabs(traj, regens, z)
    if not hits and not tail_hit:
        return SurgeryReport(z=z, hit=False, j_star=-1, lhs=0.0, rhs=0.0,
                             holds=True, censored=False)
    if tail_hit:
        # visited after the last confirmed regeneration: the straddling slab
        # has no confirmed right endpoint, so the bound is not evaluable
        return SurgeryReport(z=z, hit=True, j_star=hits[0] if hits else -1,
                             lhs=np.nan, rhs=np.nan, holds=False,
                             censored=True)
    glued, meta = glue_at_site(traj, regens, z, n, v0, axis)
    if glued is None or times.shape[0] == 0 or times[0] + n > traj.horizon:
        return SurgeryReport(z=z, hit=True, j_star=hits[0], lhs=np.nan,
                             rhs=np.nan, holds=False, censored=True, meta=meta)
    base = scaled_process(traj, n, v0, anchor=int(times[0]))
    lhs = sup_distance(base, glued)
    sqrt_n = np.sqrt(n)
    bounds = np.concatenate([[0], times])  # bounds[j] = tau_j, tau_0 = 0
    rhs = 0.0
    for j in hits:
        if j == 1:
            rhs += (r0 / sqrt_n) * (meta.tau_minus - meta.tau1_bullet)
        elif j < bounds.shape[0]:
            rhs += (r0 / sqrt_n) * (bounds[j] - bounds[j - 1])
        else:
            # hit in the unterminated tail slab beyond the last confirmed
            # regeneration: the bound is not evaluable
            return SurgeryReport(z=z, hit=True, j_star=hits[0], lhs=lhs,
                                 rhs=np.nan, holds=False, censored=True,
                                 meta=meta)
    return SurgeryReport(z=z, hit=True, j_star=hits[0], lhs=lhs, rhs=rhs,
                         holds=lhs <= rhs + tol, censored=False, meta=meta)

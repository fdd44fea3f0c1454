"""Environment families: i.i.d. per-site jump kernels from a seeded PRF.

An :class:`EnvironmentHandle` never stores the lattice.  The kernel at a
site is recomputed on demand as a pure function of (env_seed, site), so two
walks can share one environment and parallel workers can replay it exactly.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .prf import U64


class ConfigurationError(ValueError):
    """Raised for dimension mismatches and invalid model parameters."""


class ModelError(ValueError):
    """Raised when a family emits a kernel violating its invariants."""


def as_point(coords, dimension=None):
    """Coerce ``coords`` to an int64 lattice point, checking the dimension."""
    p = np.asarray(coords, dtype=np.int64)
    if p.ndim != 1:
        raise ConfigurationError(f"lattice point must be 1-d, got shape {p.shape}")
    if dimension is not None and p.shape[0] != dimension:
        raise ConfigurationError(
            f"lattice point has dimension {p.shape[0]}, model expects {dimension}"
        )
    return p


@dataclass(frozen=True)
class JumpSet:
    """Ordered support of the one-step kernels."""

    offsets: np.ndarray  # (k, d) int64

    def __post_init__(self):
        offs = np.asarray(self.offsets, dtype=np.int64)
        if offs.ndim != 2 or offs.shape[0] == 0:
            raise ConfigurationError("jump set must be a non-empty (k, d) array")
        if len({tuple(row) for row in offs.tolist()}) != offs.shape[0]:
            raise ConfigurationError("jump set offsets must be distinct")
        object.__setattr__(self, "offsets", offs)

    @property
    def size(self):
        return self.offsets.shape[0]

    @property
    def dimension(self):
        return self.offsets.shape[1]

    def max_norm(self):
        return float(np.max(np.linalg.norm(self.offsets, axis=1)))


def nearest_neighbor_jumps(d):
    """The 2d unit offsets, positive axis directions first."""
    offs = []
    for i in range(d):
        e = [0] * d
        e[i] = 1
        offs.append(list(e))
    for i in range(d):
        e = [0] * d
        e[i] = -1
        offs.append(list(e))
    return JumpSet(np.array(offs, dtype=np.int64))


@dataclass(frozen=True)
class SiteKernel:
    jump_set: JumpSet
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape[0] != self.jump_set.size:
            raise ModelError("probs length must match jump set size")
        if np.any(p < 0.0):
            raise ModelError("kernel probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ModelError(f"kernel probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    def mean(self):
        """Mean one-step displacement of this kernel."""
        return self.probs @ self.jump_set.offsets

    def covariance(self):
        m = self.mean()
        offs = self.jump_set.offsets.astype(np.float64)
        return (self.probs[:, None] * offs).T @ offs - np.outer(m, m)


# --- Families -------------------------------------------------------------

@dataclass(frozen=True)
class Homogeneous:
    kernel: SiteKernel

    @property
    def jump_set(self):
        return self.kernel.jump_set


@dataclass(frozen=True)
class DirichletNeighbors:
    """Independent Dirichlet(alpha) kernel at every site."""

    jump_set: JumpSet
    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.shape[0] != self.jump_set.size:
            raise ConfigurationError("alpha length must match jump set size")
        if np.any(a <= 0.0):
            raise ConfigurationError("Dirichlet concentrations must be positive")
        object.__setattr__(self, "alpha", a)

    def mean_probs(self):
        return self.alpha / self.alpha.sum()


@dataclass(frozen=True)
class EpsilonPerturbedDrift:
    """Base kernel plus a small i.i.d. per-offset perturbation."""

    base: SiteKernel
    epsilon: float
    noise: str = "uniform"  # or "gaussian"

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ConfigurationError("epsilon must be non-negative")
        if self.noise not in ("uniform", "gaussian"):
            raise ConfigurationError(f"unknown noise law {self.noise!r}")

    @property
    def jump_set(self):
        return self.base.jump_set


@dataclass(frozen=True)
class TwoKernelMixture:
    """Kernel A with probability q, kernel B otherwise, per site."""

    q: float
    kernel_a: SiteKernel
    kernel_b: SiteKernel

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ConfigurationError("mixture weight q must be in [0, 1]")
        if self.kernel_a.jump_set.offsets.shape != self.kernel_b.jump_set.offsets.shape or np.any(
            self.kernel_a.jump_set.offsets != self.kernel_b.jump_set.offsets
        ):
            raise ConfigurationError("mixture kernels must share one jump set")

    @property
    def jump_set(self):
        return self.kernel_a.jump_set


FAMILY_NAMES = {
    Homogeneous: "homogeneous",
    DirichletNeighbors: "dirichlet",
    EpsilonPerturbedDrift: "perturbed",
    TwoKernelMixture: "mixture",
}


@dataclass(frozen=True)
class EnvironmentModel:
    dimension: int
    direction_axis: int
    r0: float
    family: object

    def __post_init__(self):
        if self.dimension < 2:
            raise ConfigurationError("dimension must be at least 2")
        if not 0 <= self.direction_axis < self.dimension:
            raise ConfigurationError("direction_axis out of range")
        js = self.family.jump_set
        if js.dimension != self.dimension:
            raise ConfigurationError("jump set dimension does not match model")
        if js.max_norm() > self.r0 + 1e-12:
            raise ConfigurationError(
                f"jump set max norm {js.max_norm()} exceeds support radius {self.r0}"
            )
        # Collinear supports (Condition (R) failures) are reported through
        # validate_model rather than rejected here, so diagnostics can be
        # run on degenerate families.
        drift = self.mean_kernel_drift()
        if drift[self.direction_axis] <= 0.0:
            raise ConfigurationError(
                "mean kernel drift along the direction axis must be positive"
            )

    @property
    def jump_set(self):
        return self.family.jump_set

    def mean_kernel_probs(self):
        f = self.family
        if isinstance(f, Homogeneous):
            return f.kernel.probs
        if isinstance(f, DirichletNeighbors):
            return f.mean_probs()
        if isinstance(f, EpsilonPerturbedDrift):
            # Clipping makes the exact mean intractable; the base kernel is
            # the nominal mean for small epsilon.
            return f.base.probs
        if isinstance(f, TwoKernelMixture):
            return f.q * f.kernel_a.probs + (1.0 - f.q) * f.kernel_b.probs
        raise ConfigurationError(f"unknown family {type(f).__name__}")

    def mean_kernel_drift(self):
        return self.mean_kernel_probs() @ self.jump_set.offsets


def _non_collinear(offsets):
    """True unless all offsets lie on one line through the origin."""
    nz = offsets[np.any(offsets != 0, axis=1)]
    if nz.shape[0] == 0:
        return False
    u = nz[0].astype(np.float64)
    for row in nz[1:]:
        v = row.astype(np.float64)
        # Cross-product test: v collinear with u iff v*u^T - u*v^T == 0.
        if np.linalg.norm(np.outer(u, v) - np.outer(v, u)) > 1e-9:
            return True
    return False


def _pack(model):
    """Flatten a model into the argument tuple of the jitted kernels."""
    f = model.family
    k = model.jump_set.size
    zeros = np.zeros(k, dtype=np.float64)
    offs = model.jump_set.offsets
    if isinstance(f, Homogeneous):
        return (_kernels.FAM_HOMOGENEOUS, offs, f.kernel.probs, zeros, zeros,
                0.0, 0.0, _kernels.NOISE_UNIFORM)
    if isinstance(f, DirichletNeighbors):
        return (_kernels.FAM_DIRICHLET, offs, zeros, zeros, f.alpha,
                0.0, 0.0, _kernels.NOISE_UNIFORM)
    if isinstance(f, EpsilonPerturbedDrift):
        code = (_kernels.NOISE_GAUSSIAN if f.noise == "gaussian"
                else _kernels.NOISE_UNIFORM)
        return (_kernels.FAM_PERTURBED, offs, f.base.probs, zeros, zeros,
                float(f.epsilon), 0.0, code)
    if isinstance(f, TwoKernelMixture):
        return (_kernels.FAM_MIXTURE, offs, f.kernel_a.probs,
                f.kernel_b.probs, zeros, 0.0, float(f.q),
                _kernels.NOISE_UNIFORM)
    raise ConfigurationError(f"unknown family {type(f).__name__}")


@dataclass
class EnvironmentHandle:
    """Immutable view of one sampled environment.

    Safe to share across workers; the optional bounded cache only memoizes
    values that are pure functions of (env_seed, site).
    """

    model: EnvironmentModel
    env_seed: int
    cache_max_sites: int = 0
    _packed: tuple = field(init=False, repr=False)
    _cache: Optional[dict] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.env_seed = int(self.env_seed) & 0xFFFFFFFFFFFFFFFF
        self._packed = _pack(self.model)
        if self.cache_max_sites > 0:
            self._cache = {}

    def kernel_probs(self, site):
        """Probability vector of the kernel at ``site`` (aligned with offsets)."""
        p = as_point(site, self.model.dimension)
        key = tuple(p.tolist()) if self._cache is not None else None
        if key is not None:
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        fam, offs, pa, pb, al, eps, q, noise = self._packed
        out = np.empty(offs.shape[0], dtype=np.float64)
        _kernels.kernel_probs(U64(self.env_seed), p, fam, pa, pb, al, eps, q,
                              noise, out)
        if key is not None:
            if len(self._cache) >= self.cache_max_sites:
                self._cache.clear()
            self._cache[key] = out
        return out

    def kernel_at(self, site):
        return SiteKernel(self.model.jump_set, self.kernel_probs(site))


def kernel_at(handle, site):
    """Kernel of ``handle`` at ``site``; deterministic in (env_seed, site)."""
    return handle.kernel_at(site)


@dataclass(frozen=True)
class ModelDiagnostics:
    max_support_norm: float
    r0: float
    condition_s: bool
    non_collinear: bool
    min_ellipticity: float
    empirical_drift: np.ndarray
    analytic_drift: np.ndarray
    samples: int


def validate_model(model, samples, seed=0):
    """Empirical checks of Conditions (S)/(R) plus drift and ellipticity.

    Samples the kernel at ``samples`` distinct sites of a single
    environment draw; support and collinearity checks are exact, drift and
    ellipticity are empirical over the sampled kernels.
    """
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    handle = EnvironmentHandle(model, env_seed=seed)
    probs_sum = np.zeros(model.jump_set.size)
    min_ell = np.inf
    for i in range(samples):
        site = np.zeros(model.dimension, dtype=np.int64)
        site[0] = i  # distinct sites along the first axis
        p = handle.kernel_probs(site)
        s = p.sum()
        if not np.isfinite(s) or abs(s - 1.0) > 1e-12 or np.any(p < 0):
            raise ModelError(f"family emitted an invalid kernel at {site}")
        probs_sum += p
        min_ell = min(min_ell, float(p.min()))
    mean_probs = probs_sum / samples
    offs = model.jump_set.offsets
    return ModelDiagnostics(
        max_support_norm=model.jump_set.max_norm(),
        r0=float(model.r0),
        condition_s=model.jump_set.max_norm() <= model.r0 + 1e-12,
        non_collinear=_non_collinear(offs[mean_probs > 0]),
        min_ellipticity=min_ell,
        empirical_drift=mean_probs @ offs,
        analytic_drift=model.mean_kernel_drift(),
        samples=samples,
    )

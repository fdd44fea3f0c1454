"""Estimators and experiments over many environments and walks.

Covers the velocity and annealed-covariance estimators, the nested Monte
Carlo variance-decay experiment with its inner-noise bias correction, the
pair-walk intersection and decorrelation statistics, conditioned first-slab
moments, and the quenched CLT distance report.

All experiments draw their replica seeds from :func:`rwre_lab.prf.derive_seed`
on a master seed and reduce results in replica order, so outputs are
deterministic regardless of the degree of parallelism.
"""

from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats as sps
from scipy.spatial.distance import cdist

from .env import EnvironmentHandle
from .paths import scaled_process
from .prf import derive_seed
from .regen import (InsufficientDataError, classify_times,
                    first_confirmed_time, joint_times_from_levels)
from .walk import simulate_walk


def _bootstrap_ci(values, stat, rng, n_boot=200, level=0.90):
    """Percentile bootstrap CI of ``stat`` over resamples of axis 0."""
    values = np.asarray(values)
    n = values.shape[0]
    reps = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        reps[b] = stat(values[idx])
    lo = (1.0 - level) / 2.0
    return float(np.quantile(reps, lo)), float(np.quantile(reps, 1.0 - lo))


# --- Velocity and covariance ----------------------------------------------

@dataclass(frozen=True)
class V0Estimate:
    direct: np.ndarray
    direct_ci: np.ndarray  # (2, d)
    regen_ratio: np.ndarray
    regen_ratio_ci: np.ndarray
    replicas: int


def estimate_v0(model, horizon, replicas, master_seed, margin=4):
    """Velocity from endpoint averages, cross-checked by the regeneration ratio.

    Each replica uses a fresh environment and walk seed; the ratio estimator
    pools slab increments with index k >= 1.
    """
    if replicas < 2:
        raise InsufficientDataError("need at least 2 replicas")
    d = model.dimension
    ends = np.empty((replicas, d))
    ratio_num = np.zeros((replicas, d))
    ratio_den = np.zeros(replicas)
    for k in range(replicas):
        handle = EnvironmentHandle(model, derive_seed(master_seed, "env", k))
        traj = simulate_walk(handle, np.zeros(d, dtype=np.int64), horizon,
                             derive_seed(master_seed, "walk", k, 0))
        ends[k] = traj.positions[-1] / horizon
        conf, _ = classify_times(traj.levels(model.direction_axis), margin)
        if conf.shape[0] >= 2:
            dx = np.diff(traj.positions[conf], axis=0)
            ratio_num[k] = dx.sum(axis=0)
            ratio_den[k] = float(np.diff(conf).sum())
    rng = np.random.default_rng(derive_seed(master_seed, "boot"))
    direct_ci = np.array([
        _bootstrap_ci(ends[:, i], lambda v: float(v.mean()), rng)
        for i in range(d)
    ]).T
    used = ratio_den > 0

    def ratio_axis(i):
        def stat(rows):
            den = rows[:, d].sum()
            return float(rows[:, i].sum() / den) if den > 0 else np.nan
        return stat

    rows = np.hstack([ratio_num, ratio_den[:, None]])[used]
    ratio = rows[:, :d].sum(axis=0) / rows[:, d].sum()
    ratio_ci = np.array([
        _bootstrap_ci(rows, ratio_axis(i), rng) for i in range(d)
    ]).T
    return V0Estimate(direct=ends.mean(axis=0), direct_ci=direct_ci,
                      regen_ratio=ratio, regen_ratio_ci=ratio_ci,
                      replicas=replicas)


def estimate_annealed_covariance(dx, tau, v0):
    """Covariance of the diffusive limit from slab increments (k >= 1).

    Cov(dX_k - v0 * tau_k) / mean(tau_k); symmetric PSD by construction.
    """
    dx = np.asarray(dx, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if dx.shape[0] < 100:
        raise InsufficientDataError(
            f"need >= 100 confirmed increments, have {dx.shape[0]}")
    resid = dx - np.asarray(v0)[None, :] * tau[:, None]
    cov = np.cov(resid, rowvar=False) / tau.mean()
    return 0.5 * (cov + cov.T)


def pooled_increments(model, horizon, replicas, master_seed, margin=4,
                      min_increments=0):
    """Pool slab increments (k >= 1) across fresh (environment, walk) replicas."""
    d = model.dimension
    dxs, taus = [], []
    k = 0
    while k < replicas or (min_increments and sum(len(t) for t in taus) < min_increments):
        if k >= replicas and k >= 100 * replicas:
            break
        handle = EnvironmentHandle(model, derive_seed(master_seed, "env", k))
        traj = simulate_walk(handle, np.zeros(d, dtype=np.int64), horizon,
                             derive_seed(master_seed, "walk", k, 0))
        conf, _ = classify_times(traj.levels(model.direction_axis), margin)
        if conf.shape[0] >= 2:
            dxs.append(np.diff(traj.positions[conf], axis=0))
            taus.append(np.diff(conf))
        k += 1
    if not dxs:
        raise InsufficientDataError("no confirmed increments found")
    return np.vstack(dxs).astype(np.float64), np.concatenate(taus).astype(np.float64)


# --- Quenched expectations and the nested MC experiment -------------------

def quenched_expectation(handle, functional, n, m_walks, v0, margin, burn,
                         seed):
    """Sample mean/variance of F over m walks in one fixed environment.

    Each walk is anchored at its own first confirmed regeneration time;
    walks without one inside the horizon are excluded and counted.
    """
    if m_walks < 2:
        raise InsufficientDataError("need at least 2 inner walks")
    vals = _env_functional_values(handle, functional, [n], m_walks, v0,
                                  margin, burn, seed)[n]
    if len(vals) < 2:
        raise InsufficientDataError(
            f"only {len(vals)} of {m_walks} walks usable")
    arr = np.asarray(vals)
    return float(arr.mean()), float(arr.var(ddof=1)), len(vals), m_walks - len(vals)


def _env_functional_values(handle, functional, n_grid, m_walks, v0, margin,
                           burn, seed):
    """F values per n for m walks sharing one environment.

    One walk of horizon max(n) + burn serves every n in the grid.
    """
    d = handle.model.dimension
    axis = handle.model.direction_axis
    horizon = max(n_grid) + burn
    out = {n: [] for n in n_grid}
    for m in range(m_walks):
        traj = simulate_walk(handle, np.zeros(d, dtype=np.int64), horizon,
                             derive_seed(seed, "inner", m))
        tau1 = first_confirmed_time(traj.levels(axis), margin)
        if tau1 < 0:
            continue
        for n in n_grid:
            if tau1 + n <= horizon:
                out[n].append(functional(scaled_process(traj, n, v0, tau1)))
    return out


@dataclass
class NestedMCResult:
    """Per-n corrected variance of the quenched expectation of F."""

    n_grid: List[int]
    outer_count: int
    inner_count: int
    raw_variance: np.ndarray
    mean_inner_variance: np.ndarray
    corrected_variance: np.ndarray
    standard_error: np.ndarray
    negative_flags: np.ndarray
    censored_walks: np.ndarray
    env_means: Optional[np.ndarray] = None  # (len(n_grid), K)
    env_inner_vars: Optional[np.ndarray] = None


def variance_decay(model, functional, n_grid, k_envs, m_walks, master_seed,
                   margin=4, burn=256, v0=None, workers=1) -> NestedMCResult:
    """Nested Monte Carlo estimate of Var_env(E^env[F]) on a grid of scales.

    raw variance of per-environment means minus mean inner variance / M;
    the subtraction removes the inner-sampling noise bias.  Deterministic
    in (model, functional, grid, K, M, master_seed) for any worker count.
    """
    if k_envs < 2 or m_walks < 2:
        raise InsufficientDataError("need K >= 2 environments and M >= 2 walks")
    if list(n_grid) != sorted(set(n_grid)):
        raise InsufficientDataError("n_grid must be strictly increasing")
    if v0 is None:
        v0 = estimate_v0(model, horizon=4 * max(n_grid), replicas=64,
                         master_seed=derive_seed(master_seed, "v0")).direct
    n_grid = list(n_grid)
    job = _VarianceDecayJob(model, functional, n_grid, m_walks, v0, margin,
                            burn, master_seed)
    if workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(workers) as pool:
            per_env = pool.map(job, range(k_envs), chunksize=1)
    else:
        per_env = [job(k) for k in range(k_envs)]
    means = np.full((len(n_grid), k_envs), np.nan)
    ivars = np.full((len(n_grid), k_envs), np.nan)
    censored = np.zeros(len(n_grid), dtype=np.int64)
    for k, vals in enumerate(per_env):
        for i, n in enumerate(n_grid):
            v = np.asarray(vals[n])
            censored[i] += m_walks - v.shape[0]
            if v.shape[0] >= 2:
                means[i, k] = v.mean()
                ivars[i, k] = v.var(ddof=1)
    raw = np.nanvar(means, axis=1, ddof=1)
    mean_iv = np.nanmean(ivars, axis=1)
    corrected = raw - mean_iv / m_walks
    rng = np.random.default_rng(derive_seed(master_seed, "boot"))
    stderr = np.empty(len(n_grid))
    for i in range(len(n_grid)):
        cols = np.flatnonzero(~np.isnan(means[i]))
        pairs = np.stack([means[i, cols], ivars[i, cols]], axis=1)
        lo, hi = _bootstrap_ci(
            pairs,
            lambda p: float(p[:, 0].var(ddof=1) - p[:, 1].mean() / m_walks),
            rng)
        stderr[i] = (hi - lo) / (2 * 1.645)  # 90% percentile CI -> SE scale
    return NestedMCResult(
        n_grid=n_grid, outer_count=k_envs, inner_count=m_walks,
        raw_variance=raw, mean_inner_variance=mean_iv,
        corrected_variance=corrected, standard_error=stderr,
        negative_flags=corrected < 0, censored_walks=censored,
        env_means=means, env_inner_vars=ivars)


class _VarianceDecayJob:
    """Picklable per-environment work item with an ordered seed schedule."""

    def __init__(self, model, functional, n_grid, m_walks, v0, margin, burn,
                 master_seed):
        self.model = model
        self.functional = functional
        self.n_grid = n_grid
        self.m_walks = m_walks
        self.v0 = v0
        self.margin = margin
        self.burn = burn
        self.master_seed = master_seed

    def __call__(self, k):
        env_seed = derive_seed(self.master_seed, "env", k)
        handle = EnvironmentHandle(self.model, env_seed)
        return _env_functional_values(
            handle, self.functional, self.n_grid, self.m_walks, self.v0,
            self.margin, self.burn, derive_seed(self.master_seed, "walks", k))


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    intercept: float
    ci: tuple  # 90% bootstrap CI of the exponent
    r_squared: float
    used_n: List[int]
    ok: bool
    message: str = ""


def fit_decay_exponent(result: NestedMCResult, n_boot=200, seed=0) -> DecayFit:
    """OLS of log corrected variance on log n, CI by environment bootstrap."""
    n = np.asarray(result.n_grid, dtype=np.float64)
    cv = np.asarray(result.corrected_variance, dtype=np.float64)
    usable = cv > 0
    if usable.sum() < 3:
        return DecayFit(exponent=np.nan, intercept=np.nan,
                        ci=(np.nan, np.nan), r_squared=np.nan,
                        used_n=[int(v) for v in n[usable]], ok=False,
                        message="fewer than 3 positive corrected variances")
    x = np.log(n[usable])
    y = np.log(cv[usable])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if result.env_means is not None:
        rng = np.random.default_rng(seed)
        k = result.env_means.shape[1]
        m = result.inner_count
        reps = []
        for _ in range(n_boot):
            idx = rng.integers(0, k, size=k)
            means_b = result.env_means[:, idx]
            ivars_b = result.env_inner_vars[:, idx]
            cv_b = (np.nanvar(means_b, axis=1, ddof=1)
                    - np.nanmean(ivars_b, axis=1) / m)
            ok_b = cv_b > 0
            if ok_b.sum() >= 3:
                reps.append(np.polyfit(np.log(n[ok_b]), np.log(cv_b[ok_b]), 1)[0])
        if reps:
            ci = (float(np.quantile(reps, 0.05)), float(np.quantile(reps, 0.95)))
        else:
            ci = (float(slope), float(slope))
    else:
        ci = (float(slope), float(slope))
    return DecayFit(exponent=float(slope), intercept=float(intercept), ci=ci,
                    r_squared=r2, used_n=[int(v) for v in n[usable]], ok=True)


# --- Pair-walk intersection statistics ------------------------------------

def _encode_points(pts):
    """Pack small integer coordinates into sortable int64 keys."""
    pts = np.asarray(pts, dtype=np.int64)
    base = np.int64(1) << np.int64(21)
    half = base // 2
    if np.any(np.abs(pts) >= half) or pts.shape[1] > 3:
        raise ValueError("points out of packable range")
    key = pts[:, 0] + half
    for j in range(1, pts.shape[1]):
        key = key * base + (pts[:, j] + half)
    return key


@dataclass
class PairReplicaStats:
    replica: int
    censored: bool
    jrl_le: int = 0
    jrlc: int = 0
    decorr_sum: float = 0.0
    gsum: float = 0.0  # sum over all joint slabs of the capped product
    gcount: int = 0
    j_n: int = 0
    max_k_n: int = 0
    o_n: bool = False
    g_n: bool = False
    e_n: bool = False
    jrlc_subset_jrl_le: bool = True


def _slab_sup(positions, a, b):
    seg = positions[a:b + 1]
    return float(np.max(np.abs(seg - seg[0]))) if seg.shape[0] else 0.0


def pair_replica_stats(pair, axis, margin, n, eps, replica=0,
                       with_jn=True) -> PairReplicaStats:
    """All intersection statistics of one pair replica at scale n."""
    p1, p2 = pair.first.positions, pair.second.positions
    lvl1 = pair.first.levels(axis)
    lvl2 = pair.second.levels(axis)
    mu1, mu2, _levels = joint_times_from_levels(lvl1, lvl2, margin)
    # slabs i = 1..n need joint records with indices up to n+1 (mu_0 = 0)
    mu1 = np.concatenate([[0], mu1])
    mu2 = np.concatenate([[0], mu2])
    if mu1.shape[0] < n + 2:
        return PairReplicaStats(replica=replica, censored=True)
    out = PairReplicaStats(replica=replica, censored=False)
    thresh = float(n) ** eps
    sqrt_n = np.sqrt(float(n))
    e_n = True
    jrlc_set, jrl_le_set = set(), set()
    for i in range(1, n + 1):
        a1, b1 = mu1[i], mu1[i + 1]
        a2, b2 = mu2[i], mu2[i + 1]
        pts1 = _encode_points(p1[a1:b1 + 1])
        pts2 = _encode_points(p2[a2:b2 + 1])
        meet = np.intersect1d(pts1, pts2).shape[0] > 0
        prod = min((b1 - a1) / sqrt_n, 1.0) * min((b2 - a2) / sqrt_n, 1.0)
        out.gsum += prod
        out.gcount += 1
        if meet:
            jrlc_set.add(i)
            out.decorr_sum += prod
        if max(np.max(np.abs(p1[mu1[i]] - p2[mu2[i]])), 0) <= thresh:
            jrl_le_set.add(i)
        if (_slab_sup(p1, a1, b1) > thresh / 2.0
                or _slab_sup(p2, a2, b2) > thresh / 2.0):
            e_n = False
    out.jrlc = len(jrlc_set)
    out.jrl_le = len(jrl_le_set)
    out.e_n = e_n
    out.jrlc_subset_jrl_le = jrlc_set <= jrl_le_set
    # O_n: both first slabs inside the n^eps ball
    o1 = first_confirmed_time(lvl1, margin)
    o2 = first_confirmed_time(lvl2, margin)
    out.o_n = (o1 >= 0 and o2 >= 0
               and np.max(np.linalg.norm(p1[:o1 + 1], axis=1), initial=0.0) <= thresh
               and np.max(np.linalg.norm(p2[:o2 + 1], axis=1), initial=0.0) <= thresh)
    # G_n: single-walk slabs j = 2..n+1 stay within n^(eps/d)
    d = p1.shape[1]
    gthresh = float(n) ** (eps / d)
    g_n = True
    for positions, lvl in ((p1, lvl1), (p2, lvl2)):
        conf, _ = classify_times(lvl, margin)
        hi = min(n + 1, conf.shape[0] - 1)
        for j in range(1, hi + 1):
            if _slab_sup(positions, conf[j - 1], conf[j]) > gthresh:
                g_n = False
                break
        if not g_n:
            break
    out.g_n = g_n
    if with_jn:
        out.j_n, out.max_k_n = _jn_kn_sizes(pair, axis, margin, n)
    return out


def _jn_kn_sizes(pair, axis, margin, n):
    """|J_n| and max_j |K_n(j)| from the single-walk regeneration slabs."""
    conf1, _ = classify_times(pair.first.levels(axis), margin)
    conf2, _ = classify_times(pair.second.levels(axis), margin)
    if conf1.shape[0] < n + 3 or conf2.shape[0] < n + 3:
        return 0, 0
    p1, p2 = pair.first.positions, pair.second.positions
    enc2_all = _encode_points(p2[conf2[0]:conf2[n + 1]])
    enc2_sorted = np.sort(enc2_all)
    j_hits = []
    for j in range(2, n + 2):
        pts = _encode_points(p1[conf1[j - 1]:conf1[j]])
        pos = np.searchsorted(enc2_sorted, pts)
        pos = np.minimum(pos, enc2_sorted.shape[0] - 1)
        if np.any(enc2_sorted[pos] == pts):
            j_hits.append(j)
    max_kn = 0
    enc2_full = _encode_points(p2)
    for j in j_hits:
        pts = np.unique(_encode_points(p1[conf1[j - 1]:conf1[j]]))
        touched = np.flatnonzero(np.isin(enc2_full, pts))
        if touched.shape[0] == 0:
            continue
        slabs = np.searchsorted(conf2, touched, side="right")
        slabs = slabs[(slabs >= 2) & (slabs <= n + 1)]
        max_kn = max(max_kn, int(np.unique(slabs).shape[0]))
    return len(j_hits), max_kn


@dataclass
class IntersectionAggregate:
    n: int
    eps: float
    replicas: List[PairReplicaStats]

    @property
    def usable(self):
        return [r for r in self.replicas if not r.censored]

    def mean_ci(self, attr, rng=None, n_boot=200):
        vals = np.array([getattr(r, attr) for r in self.usable], dtype=np.float64)
        if vals.shape[0] == 0:
            return np.nan, (np.nan, np.nan)
        if rng is None:
            rng = np.random.default_rng(0)
        ci = _bootstrap_ci(vals, lambda v: float(v.mean()), rng)
        return float(vals.mean()), ci

    def g_hat(self):
        """Mean over joint slabs of the capped increment product."""
        gs = sum(r.gsum for r in self.usable)
        gc = sum(r.gcount for r in self.usable)
        return gs / gc if gc else np.nan

    def event_frequencies(self):
        u = self.usable
        if not u:
            return {"o_n": np.nan, "g_n": np.nan, "e_n": np.nan}
        return {k: float(np.mean([getattr(r, k) for r in u]))
                for k in ("o_n", "g_n", "e_n")}


class _IntersectionJob:
    def __init__(self, model, n, eps, margin, horizon, master_seed, with_jn):
        self.model = model
        self.n = n
        self.eps = eps
        self.margin = margin
        self.horizon = horizon
        self.master_seed = master_seed
        self.with_jn = with_jn

    def __call__(self, r):
        from .walk import simulate_pair
        handle = EnvironmentHandle(self.model,
                                   derive_seed(self.master_seed, "env", r))
        d = self.model.dimension
        pair = simulate_pair(handle, np.zeros(d, dtype=np.int64),
                             np.zeros(d, dtype=np.int64), self.horizon,
                             derive_seed(self.master_seed, "walk", r, 1),
                             derive_seed(self.master_seed, "walk", r, 2))
        return pair_replica_stats(pair, self.model.direction_axis,
                                  self.margin, self.n, self.eps, replica=r,
                                  with_jn=self.with_jn)


def intersection_stats(model, n, eps, replicas, master_seed, margin=4,
                       horizon_factor=48, workers=1,
                       with_jn=True) -> IntersectionAggregate:
    """Pair-walk intersection statistics over many replicas at one scale."""
    horizon = horizon_factor * n
    job = _IntersectionJob(model, n, eps, margin, horizon, master_seed,
                           with_jn)
    if workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(workers) as pool:
            reps = pool.map(job, range(replicas), chunksize=1)
    else:
        reps = [job(r) for r in range(replicas)]
    return IntersectionAggregate(n=n, eps=eps, replicas=reps)


@dataclass(frozen=True)
class DecorrelationPoint:
    n: int
    mean_decorr: float
    decorr_ci: tuple
    g_hat: float
    usable: int


def decorrelation_curve(aggregates: Sequence[IntersectionAggregate]):
    """Per-n mean decorrelation sum and the per-slab conditional mean g(n)."""
    if len(aggregates) < 2:
        raise InsufficientDataError("need at least 2 scales")
    points = []
    for agg in sorted(aggregates, key=lambda a: a.n):
        mean, ci = agg.mean_ci("decorr_sum")
        points.append(DecorrelationPoint(n=agg.n, mean_decorr=mean,
                                         decorr_ci=ci, g_hat=agg.g_hat(),
                                         usable=len(agg.usable)))
    return points


def spearman_trend(ns, values):
    """Spearman rho and one-sided p-value for an increasing trend.

    Exact permutation p-value for grids of up to 8 points; scipy's
    t-approximation degenerates there (p = 0 for any perfect monotone).
    """
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if np.all(values == values[0]) or np.all(ns == ns[0]):
        return 0.0, 1.0
    rho = sps.spearmanr(ns, values).statistic
    if np.isnan(rho):
        return 0.0, 1.0
    if ns.shape[0] <= 8:
        from itertools import permutations
        hits = total = 0
        for perm in permutations(values):
            r = sps.spearmanr(ns, perm).statistic
            hits += r >= rho - 1e-12
            total += 1
        return float(rho), hits / total
    p_two = sps.spearmanr(ns, values).pvalue
    p_one = p_two / 2.0 if rho > 0 else 1.0 - p_two / 2.0
    return float(rho), float(p_one)


# --- Conditioned first-slab moments ---------------------------------------

@dataclass(frozen=True)
class FirstSlabMoment:
    level: int
    second_moment: float
    standard_error: float
    acceptance_rate: float
    accepted: int
    decided: int
    censored: bool


def conditioned_first_slab_moment(model, levels, replicas, master_seed,
                                  horizon=4096, rate_floor=0.01,
                                  min_accepted=100):
    """E[T_level^2 | no return before T_level] by rejection sampling.

    A replica is decided when the walk either reaches the target level
    without touching level <= 0 (accepted) or touches level <= 0 first
    (rejected); horizon exhaustion leaves it undecided.
    """
    d = model.dimension
    axis = model.direction_axis
    out = []
    for li, lev in enumerate(levels):
        accepted, decided = [], 0
        k = 0
        while k < replicas or (len(accepted) < min_accepted
                               and k < replicas * 50):
            handle = EnvironmentHandle(
                model, derive_seed(master_seed, "env", li, k))
            traj = simulate_walk(handle, np.zeros(d, dtype=np.int64), horizon,
                                 derive_seed(master_seed, "walk", li, k))
            lvl = traj.levels(axis)
            reach = np.flatnonzero(lvl >= lev)
            ret = np.flatnonzero(lvl[1:] <= 0)
            t_reach = int(reach[0]) if reach.shape[0] else -1
            t_ret = int(ret[0]) + 1 if ret.shape[0] else -1
            if t_reach >= 0 and (t_ret < 0 or t_ret >= t_reach):
                decided += 1
                accepted.append(t_reach)
            elif t_ret >= 0:
                decided += 1
            k += 1
        rate = len(accepted) / decided if decided else 0.0
        arr = np.asarray(accepted, dtype=np.float64)
        censored = rate < rate_floor or len(accepted) < min_accepted
        sq = arr ** 2
        out.append(FirstSlabMoment(
            level=int(lev),
            second_moment=float(sq.mean()) if arr.shape[0] else np.nan,
            standard_error=(float(sq.std(ddof=1) / np.sqrt(sq.shape[0]))
                            if sq.shape[0] > 1 else np.nan),
            acceptance_rate=rate, accepted=len(accepted), decided=decided,
            censored=censored))
    return out


# --- Quenched CLT distance ------------------------------------------------

@dataclass(frozen=True)
class CLTReport:
    n: int
    ks_per_coord: np.ndarray
    ks_pvalues: np.ndarray
    energy_distance: float
    used: int
    censored: int
    singular_sigma: bool
    degenerate: bool


def _inv_sqrt(sigma):
    w, v = np.linalg.eigh(np.asarray(sigma, dtype=np.float64))
    singular = bool(np.any(w < 1e-12 * max(w.max(), 1e-300)))
    w_inv = np.where(w > 1e-12 * max(w.max(), 1e-300), 1.0 / np.sqrt(np.maximum(w, 1e-300)), 0.0)
    return v @ np.diag(w_inv) @ v.T, singular


def endpoint_sample(handle, n, m_walks, v0, margin, burn, seed):
    """Centered rescaled endpoints at t = 1, anchored at each walk's tau_1."""
    d = handle.model.dimension
    axis = handle.model.direction_axis
    horizon = n + burn
    ends = []
    censored = 0
    for m in range(m_walks):
        traj = simulate_walk(handle, np.zeros(d, dtype=np.int64), horizon,
                             derive_seed(seed, "inner", m))
        tau1 = first_confirmed_time(traj.levels(axis), margin)
        if tau1 < 0 or tau1 + n > horizon:
            censored += 1
            continue
        disp = traj.positions[tau1 + n] - traj.positions[tau1]
        ends.append((disp - np.asarray(v0) * n) / np.sqrt(n))
    return np.asarray(ends, dtype=np.float64), censored


def quenched_clt_distance(handle, n, m_walks, sigma, v0, margin=4, burn=256,
                          seed=0) -> CLTReport:
    """KS and energy distances of standardized endpoints to a standard Gaussian."""
    if m_walks < 500:
        raise InsufficientDataError("need at least 500 walks")
    ends, censored = endpoint_sample(handle, n, m_walks, v0, margin, burn,
                                     seed)
    d = ends.shape[1] if ends.size else handle.model.dimension
    if ends.shape[0] < 2 or np.allclose(ends.var(axis=0), 0.0):
        return CLTReport(n=n, ks_per_coord=np.full(d, np.nan),
                         ks_pvalues=np.full(d, np.nan),
                         energy_distance=np.nan, used=ends.shape[0],
                         censored=censored, singular_sigma=False,
                         degenerate=True)
    root_inv, singular = _inv_sqrt(sigma)
    std = ends @ root_inv.T
    ks = np.empty(d)
    pv = np.empty(d)
    for i in range(d):
        res = sps.kstest(std[:, i], "norm")
        ks[i] = res.statistic
        pv[i] = res.pvalue
    rng = np.random.default_rng(derive_seed(seed, "clt-ref"))
    ref = rng.standard_normal(size=std.shape)
    exy = cdist(std, ref).mean()
    exx = cdist(std, std).mean()
    eyy = cdist(ref, ref).mean()
    energy = 2.0 * exy - exx - eyy
    return CLTReport(n=n, ks_per_coord=ks, ks_pvalues=pv,
                     energy_distance=float(energy), used=ends.shape[0],
                     censored=censored, singular_sigma=singular,
                     degenerate=False)

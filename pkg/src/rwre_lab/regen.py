"""Regeneration structure: single-walk times, joint levels, statistical checks.

Within a finite horizon the defining event of a regeneration (never
backtracking again) is undecidable, so candidates are *confirmed* only if
the walk climbs ``margin`` levels above the candidate level without ever
returning to it, and never returns within the observed horizon.  Candidates
whose fate the horizon leaves open are *censored*.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import stats as sps


class InsufficientDataError(RuntimeError):
    """Raised when too few records/replicas exist for a statistic."""


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class ConfirmationPolicy:
    margin: int = 4
    tail_handling: str = "drop"  # or "censor"

    def __post_init__(self):
        if self.margin < 1:
            raise InputError("confirmation margin must be >= 1")
        if self.tail_handling not in ("drop", "censor"):
            raise InputError(f"unknown tail_handling {self.tail_handling!r}")


@dataclass(frozen=True)
class RegenerationRecord:
    time: int
    position: np.ndarray
    level: int
    status: str  # "confirmed" or "censored"
    margin: int  # confirmation threshold in levels

    @property
    def confirmed(self):
        return self.status == "confirmed"


@dataclass(frozen=True)
class JointRegenRecord:
    mu1: int
    mu2: int
    level: int


def _candidate_mask(lvl):
    """Strict fresh maxima of the level process (classical recursion).

    The time-S_k recursion advances to the first strict exceedance of the
    running maximum; the union of surviving candidates over the recursion
    is exactly the set of fresh strict maxima with no later return.
    """
    t = lvl.shape[0]
    mask = np.zeros(t, dtype=bool)
    if t > 1:
        prevmax = np.maximum.accumulate(lvl)[:-1]
        mask[1:] = lvl[1:] > prevmax
    return mask


def classify_times(lvl, margin):
    """Vectorized classification of fresh-maximum candidates.

    Returns (confirmed_times, censored_times) for an integer level array.
    Confirmed: no return to <= the candidate level within the horizon and
    the walk climbed at least ``margin`` levels above it.  Censored: no
    return observed but the margin was not reached before the horizon end.
    """
    lvl = np.asarray(lvl)
    t = lvl.shape[0]
    if t == 0:
        raise InputError("empty trajectory")
    cand = _candidate_mask(lvl)
    # min of lvl over (s, horizon]; +inf when s is the last index
    sufmin = np.empty(t + 1, dtype=np.float64)
    sufmin[t] = np.inf
    sufmin[:t] = np.minimum.accumulate(lvl[::-1])[::-1]
    sufmax = np.maximum.accumulate(lvl[::-1])[::-1]
    no_return = cand & (sufmin[1:] > lvl)
    reached = sufmax >= lvl + margin
    return np.flatnonzero(no_return & reached), np.flatnonzero(no_return & ~reached)


def first_confirmed_time(lvl, margin):
    """First confirmed regeneration time, or -1 when none exists."""
    conf, _ = classify_times(lvl, margin)
    return int(conf[0]) if conf.shape[0] else -1


def detect_regenerations(traj, axis, policy) -> List[RegenerationRecord]:
    """All regeneration records of one walk, in time order.

    A fresh-maximum candidate s is confirmed when the walk reaches level
    lvl[s] + margin before returning to lvl[s] and never revisits a level
    <= lvl[s] within the horizon; it is censored when the horizon ends
    before either event, and silently discarded when it backtracks.
    """
    lvl = traj.levels(axis)
    conf, cens = classify_times(lvl, policy.margin)
    entries = [(int(s), "confirmed") for s in conf]
    if policy.tail_handling == "censor":
        entries += [(int(s), "censored") for s in cens]
        entries.sort()
    return [RegenerationRecord(
        time=s, position=traj.positions[s].copy(), level=int(lvl[s]),
        status=status, margin=policy.margin) for s, status in entries]


def confirmed_times_levels(records):
    conf = [r for r in records if r.confirmed]
    times = np.array([r.time for r in conf], dtype=np.int64)
    levels = np.array([r.level for r in conf], dtype=np.int64)
    return times, levels


def detect_joint_regenerations(pair, axis, policy) -> List[JointRegenRecord]:
    """Minimal equal-level pairs of confirmed regeneration times.

    Both walks' confirmed levels are strictly increasing, so the joint
    levels are the sorted intersection of the two level sequences.
    """
    recs1 = detect_regenerations(pair.first, axis, policy)
    recs2 = detect_regenerations(pair.second, axis, policy)
    t1, l1 = confirmed_times_levels(recs1)
    t2, l2 = confirmed_times_levels(recs2)
    common, i1, i2 = np.intersect1d(l1, l2, return_indices=True)
    return [JointRegenRecord(mu1=int(t1[a]), mu2=int(t2[b]), level=int(lv))
            for lv, a, b in zip(common, i1, i2)]


def joint_times_from_levels(lvl1, lvl2, margin):
    """Array form of joint detection: (mu1 times, mu2 times, joint levels)."""
    conf1, _ = classify_times(lvl1, margin)
    conf2, _ = classify_times(lvl2, margin)
    common, i1, i2 = np.intersect1d(np.asarray(lvl1)[conf1],
                                    np.asarray(lvl2)[conf2],
                                    return_indices=True)
    return conf1[i1], conf2[i2], common


@dataclass(frozen=True)
class IncrementStats:
    count: int
    tau_mean: float
    tau_var: float
    tau_quantiles: dict
    dx_mean: np.ndarray
    dx_var: np.ndarray
    autocorr: np.ndarray  # lags 1..5 of the tau increments
    slab_sup_mean: float
    slab_sup_max: float


def _autocorr(x, max_lag=5):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros(max_lag)
    if n < 2:
        return out
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom <= 0.0:
        return out  # constant series: undefined-as-zero
    for lag in range(1, max_lag + 1):
        if lag < n:
            out[lag - 1] = float(xc[:-lag] @ xc[lag:]) / denom
    return out


def regeneration_increment_stats(records, traj, axis) -> IncrementStats:
    """Statistics of the i.i.d. slabs; the first slab (index 0) is excluded."""
    times, _ = confirmed_times_levels(records)
    if times.shape[0] < 3:
        raise InsufficientDataError(
            f"need >= 3 confirmed records, have {times.shape[0]}")
    tau = np.diff(times).astype(np.float64)  # increments k >= 1
    dx = np.diff(traj.positions[times], axis=0).astype(np.float64)
    sups = np.empty(times.shape[0] - 1)
    for i in range(times.shape[0] - 1):
        seg = traj.positions[times[i]:times[i + 1] + 1]
        sups[i] = np.max(np.abs(seg - seg[0]))
    qs = {p: float(np.quantile(tau, p)) for p in (0.5, 0.9, 0.99)}
    qs["max"] = float(tau.max())
    return IncrementStats(
        count=tau.shape[0],
        tau_mean=float(tau.mean()),
        tau_var=float(tau.var(ddof=1)) if tau.shape[0] > 1 else 0.0,
        tau_quantiles=qs,
        dx_mean=dx.mean(axis=0),
        dx_var=dx.var(axis=0, ddof=1) if dx.shape[0] > 1 else np.zeros(dx.shape[1]),
        autocorr=_autocorr(tau),
        slab_sup_mean=float(sups.mean()),
        slab_sup_max=float(sups.max()),
    )


@dataclass(frozen=True)
class MarkovTestReport:
    replicas: int
    k: int
    duration_correlation: float
    correlation_bound: float
    correlation_ok: bool
    ks_by_class: dict  # displacement class -> (ks statistic, p-value, n1, n2)
    min_ks_pvalue_adjusted: float


def _displacement_class(pair, rec):
    """Coarse inter-walk displacement class at a joint level."""
    dx = pair.first.positions[rec.mu1] - pair.second.positions[rec.mu2]
    r = int(np.max(np.abs(dx)))
    return min(r, 3)  # 0, 1, 2, 3+ buckets


def markov_slab_test(pairs: Sequence, axis, policy, k=2,
                     min_class_size=30) -> MarkovTestReport:
    """Independence checks across a joint regeneration level.

    Across replicas, correlates the slab duration before level L_k with the
    one after it, and compares the law of post-L_k durations with post-
    L_{k+1} durations within matched displacement classes.
    """
    pre, post = [], []
    sample_k, sample_k1 = {}, {}
    usable = 0
    for pair in pairs:
        recs = detect_joint_regenerations(pair, axis, policy)
        if len(recs) < 3:
            continue
        usable += 1
        if len(recs) >= k + 2:
            pre.append(recs[k].mu1 - recs[k - 1].mu1)
            post.append(recs[k + 1].mu1 - recs[k].mu1)
            cls = _displacement_class(pair, recs[k])
            sample_k.setdefault(cls, []).append(recs[k + 1].mu1 - recs[k].mu1)
        if len(recs) >= k + 3:
            cls = _displacement_class(pair, recs[k + 1])
            sample_k1.setdefault(cls, []).append(recs[k + 2].mu1 - recs[k + 1].mu1)
    if usable < 100:
        raise InsufficientDataError(
            f"need >= 100 pairs with >= 3 joint records, have {usable}")
    pre_a = np.asarray(pre, dtype=np.float64)
    post_a = np.asarray(post, dtype=np.float64)
    if pre_a.std() == 0.0 or post_a.std() == 0.0:
        corr = 0.0  # constant durations: correlation 0 by convention
    else:
        corr = float(np.corrcoef(pre_a, post_a)[0, 1])
    bound = 4.0 / np.sqrt(pre_a.shape[0])
    ks_by_class = {}
    pvals = []
    for cls in sorted(set(sample_k) & set(sample_k1)):
        a = np.asarray(sample_k[cls], dtype=np.float64)
        b = np.asarray(sample_k1[cls], dtype=np.float64)
        if a.shape[0] < min_class_size or b.shape[0] < min_class_size:
            continue
        if a.std() == 0.0 and b.std() == 0.0 and a[0] == b[0]:
            ks_by_class[cls] = (0.0, 1.0, a.shape[0], b.shape[0])
            pvals.append(1.0)
            continue
        res = sps.ks_2samp(a, b)
        ks_by_class[cls] = (float(res.statistic), float(res.pvalue),
                            a.shape[0], b.shape[0])
        pvals.append(float(res.pvalue))
    adj = min(1.0, min(pvals) * len(pvals)) if pvals else 1.0
    return MarkovTestReport(
        replicas=pre_a.shape[0], k=k,
        duration_correlation=corr, correlation_bound=bound,
        correlation_ok=abs(corr) < bound,
        ks_by_class=ks_by_class, min_ks_pvalue_adjusted=adj,
    )

"""Jitted hot loops: per-site kernel emission and walk simulation.

Environment families are dispatched on an integer code so a single jitted
step loop handles all of them:

    0  homogeneous          probs_a used verbatim
    1  dirichlet            per-offset concentrations in ``alpha``
    2  perturbed drift      probs_a + eps * noise, clipped and renormalized
    3  two-kernel mixture   probs_a with probability q, else probs_b

Every variate is drawn from the counter-based streams in :mod:`.prf`, so a
site kernel is a pure function of (env_seed, site) and a trajectory a pure
function of (env_seed, walk_seed, start, horizon).
"""

import numpy as np
from numba import njit

from .prf import U64, finalize, site_key, stream_u01, walk_key

FAM_HOMOGENEOUS = 0
FAM_DIRICHLET = 1
FAM_PERTURBED = 2
FAM_MIXTURE = 3

NOISE_UNIFORM = 0
NOISE_GAUSSIAN = 1


@njit(cache=True)
def _normal(key, ctr):
    """One standard normal via Box-Muller; returns (z, next counter)."""
    u1 = stream_u01(key, ctr)
    u2 = stream_u01(key, ctr + 1)
    while u1 <= 1e-300:
        ctr += 2
        u1 = stream_u01(key, ctr)
        u2 = stream_u01(key, ctr + 1)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return z, ctr + 2


@njit(cache=True)
def _gamma(key, ctr, a):
    """Marsaglia-Tsang gamma(a, 1) from the counter stream.

    Deterministic in (key, starting counter); rejection steps advance the
    counter.  Shapes below 1 use the boosting identity
    gamma(a) = gamma(a + 1) * U^(1/a).
    """
    boost = 1.0
    if a < 1.0:
        u = stream_u01(key, ctr)
        ctr += 1
        while u <= 0.0:
            u = stream_u01(key, ctr)
            ctr += 1
        boost = u ** (1.0 / a)
        a = a + 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        x, ctr = _normal(key, ctr)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = stream_u01(key, ctr)
        ctr += 1
        if u <= 1e-300:
            continue
        if np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v):
            return boost * d * v, ctr


@njit(cache=True)
def kernel_probs(env_seed, coords, fam, probs_a, probs_b, alpha, eps, q,
                 noise_code, out):
    """Emit the jump probabilities at one site into ``out``."""
    k = out.shape[0]
    if fam == FAM_HOMOGENEOUS:
        for i in range(k):
            out[i] = probs_a[i]
        return
    key = site_key(U64(env_seed), coords)
    if fam == FAM_DIRICHLET:
        ctr = 0
        for i in range(k):
            g, ctr = _gamma(key, ctr, alpha[i])
            out[i] = g
    elif fam == FAM_PERTURBED:
        ctr = 0
        for i in range(k):
            if noise_code == NOISE_GAUSSIAN:
                z, ctr = _normal(key, ctr)
            else:
                z = 2.0 * stream_u01(key, ctr) - 1.0
                ctr += 1
            v = probs_a[i] + eps * z
            out[i] = v if v > 0.0 else 0.0
    else:  # FAM_MIXTURE
        u = stream_u01(key, 0)
        if u < q:
            for i in range(k):
                out[i] = probs_a[i]
        else:
            for i in range(k):
                out[i] = probs_b[i]
    s = 0.0
    for i in range(k):
        s += out[i]
    for i in range(k):
        out[i] = out[i] / s


@njit(cache=True)
def simulate(env_seed, walk_seed, start, horizon, fam, offsets, probs_a,
             probs_b, alpha, eps, q, noise_code):
    """Simulate one quenched walk; returns positions (horizon+1, d) int64.

    Step t uses the single uniform variate t of the walk stream and the
    kernel at the current site (inverse CDF in stored offset order).
    """
    d = start.shape[0]
    k = offsets.shape[0]
    pos = np.empty((horizon + 1, d), dtype=np.int64)
    cur = np.empty(d, dtype=np.int64)
    for j in range(d):
        cur[j] = start[j]
        pos[0, j] = start[j]
    wkey = walk_key(U64(walk_seed))
    probs = np.empty(k, dtype=np.float64)
    for t in range(horizon):
        kernel_probs(env_seed, cur, fam, probs_a, probs_b, alpha, eps, q,
                     noise_code, probs)
        u = stream_u01(wkey, t)
        acc = 0.0
        idx = k - 1
        for i in range(k):
            acc += probs[i]
            if u < acc:
                idx = i
                break
        for j in range(d):
            cur[j] += offsets[idx, j]
            pos[t + 1, j] = cur[j]
    return pos


@njit(cache=True)
def warmup():
    """Touch every jitted path once so compile cost is paid up front."""
    coords = np.zeros(2, dtype=np.int64)
    pa = np.array([0.4, 0.2, 0.2, 0.2])
    al = np.array([2.0, 1.0, 1.0, 1.0])
    offs = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)
    out = np.empty(4)
    acc = 0.0
    for fam in range(4):
        kernel_probs(U64(7), coords, fam, pa, pa, al, 0.05, 0.5,
                     NOISE_UNIFORM, out)
        acc += out[0]
        p = simulate(U64(7), U64(9), coords, 8, fam, offs, pa, pa, al,
                     0.05, 0.5, NOISE_UNIFORM)
        acc += p[-1, 0]
    return acc

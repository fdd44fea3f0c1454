"""Counter-based pseudorandom primitives.

All randomness in the simulator is derived from a stateless splitmix64-style
pseudorandom function.  A stream is identified by a 64-bit key; the i-th
variate of a stream is a pure function of (key, i).  Keys are built by
absorbing words (domain tags, seeds, lattice coordinates) one at a time, so
per-site and per-walk streams are splittable and replayable without any
stored state.

The same jitted helpers are used by the Python-facing API and by the hot
simulation loops, so ``kernel_at`` and the walk kernels agree bit for bit.
"""

import hashlib

import numpy as np
from numba import njit

U64 = np.uint64

GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)

# Domain separation tags (arbitrary fixed constants).
TAG_SITE = U64(0x53495445)  # per-site kernel streams
TAG_WALK = U64(0x57414C4B)  # per-walk step streams

_INV53 = 1.0 / float(1 << 53)


@njit(cache=True)
def finalize(z):
    """splitmix64 output scrambler."""
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True)
def absorb(key, word):
    """Fold one 64-bit word into a stream key."""
    return finalize((key ^ word) + GOLDEN)


@njit(cache=True)
def stream_u64(key, i):
    """i-th raw 64-bit output of the stream identified by ``key``."""
    return finalize(key + (U64(i) + U64(1)) * GOLDEN)


@njit(cache=True)
def stream_u01(key, i):
    """i-th uniform variate in [0, 1) of the stream ``key``."""
    return float(stream_u64(key, i) >> U64(11)) * _INV53


@njit(cache=True)
def site_key(env_seed, coords):
    """Stream key for the environment kernel at a lattice site.

    Pure in (env_seed, coords); coordinate order matters, so distinct sites
    get unrelated streams.
    """
    k = absorb(U64(env_seed), TAG_SITE)
    for i in range(coords.shape[0]):
        k = absorb(k, U64(np.int64(coords[i])))
    return k


@njit(cache=True)
def walk_key(walk_seed):
    return absorb(U64(walk_seed), TAG_WALK)


def derive_seed(master_seed, label, *indices):
    """Deterministic 64-bit seed schedule for replicas.

    ``label`` is a short ASCII string ("env", "walk", ...).  Documented so
    external tools can replay any single replica: the seed is the splitmix64
    absorption of blake2b64(label) and each index into the master seed.
    """
    mask = 0xFFFFFFFFFFFFFFFF
    word = int.from_bytes(
        hashlib.blake2b(label.encode("ascii"), digest_size=8).digest(), "little"
    )
    key = int(absorb(U64(int(master_seed) & mask), U64(word))) & mask
    for ix in indices:
        key = int(absorb(U64(key), U64(int(ix) & mask))) & mask
    return key

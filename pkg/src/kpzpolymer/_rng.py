"""Counter-based bit mixing, exact integer sampling and the Gaussian quantile.

Everything here is jitted and pure: the same inputs give the same bits on
every call, which is what makes environments and walk streams reproducible
without storing any state.
"""

import math

import numba as nb
import numpy as np
from numba.core import types
from numba.extending import intrinsic

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K_SEED = np.uint64(0xD1B54A32D192ED03)
_K_TIME = np.uint64(0x8CB92BA72F3D8DD7)
_K_SPACE = np.uint64(0xABC98388FB8FAC03)
_K_FINAL = np.uint64(0x2545F4914F6CDD1D)
_MASK32 = np.uint64(0xFFFFFFFF)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def mix64(z):
    """SplitMix64 finalizer (full avalanche on 64 bits)."""
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def derive_seed(seed, index):
    return mix64(mix64(np.uint64(seed) ^ _K_SEED) + np.uint64(index) * GOLDEN)


@nb.njit(cache=True)
def time_key(seed, t):
    return mix64(mix64(np.uint64(seed) ^ _K_SEED) ^ (np.uint64(t) * _K_TIME))


@nb.njit(cache=True)
def space_key(x):
    h = _K_SPACE
    for i in range(x.shape[0]):
        h = mix64(h ^ (np.uint64(x[i]) + np.uint64(i + 1) * GOLDEN))
    return h


@nb.njit(inline="always", cache=True)
def site_uniform(tkey, skey):
    """Uniform on the open interval (0, 1) at 2^-53 resolution."""
    bits = mix64(mix64(tkey ^ skey) + _K_FINAL)
    return ((bits >> np.uint64(11)) + 0.5) * _INV53


@nb.njit(cache=True, error_model="numpy")
def norm_ppf(p):
    """Standard normal quantile, Wichura's AS241 (PPND16).

    Relative accuracy is about 1e-16 over (0, 1).
    """
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    z = num / den
    if q < 0.0:
        return -z
    return z


# -- sequential streams for walk sampling --------------------------------


@nb.njit(inline="always", cache=True)
def next_u64(state):
    """Advance a SplitMix64 stream held in a length-1 uint64 array."""
    state[0] += GOLDEN
    return mix64(state[0])


@nb.njit(inline="always", cache=True)
def bounded(state, s):
    """Exact uniform integer in [0, s) (Lemire's multiply-and-reject)."""
    su = np.uint64(s)
    while True:
        x = next_u64(state) & _MASK32
        m = x * su
        low = m & _MASK32
        if low >= su:
            return np.int64(m >> np.uint64(32))
        thresh = (np.uint64(4294967296) - su) % su
        if low >= thresh:
            return np.int64(m >> np.uint64(32))


@intrinsic
def _ctpop(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@nb.njit(inline="always", cache=True)
def popcount64(x):
    return np.int64(_ctpop(np.uint64(x)))


@nb.njit(cache=True)
def binomial_half(state, n):
    """Bin(n, 1/2) as the popcount of n fair bits."""
    total = 0
    st = state[0]
    while n >= 64:
        st += GOLDEN
        total += popcount64(mix64(st))
        n -= 64
    if n > 0:
        st += GOLDEN
        w = mix64(st) & ((np.uint64(1) << np.uint64(n)) - np.uint64(1))
        total += popcount64(w)
    state[0] = st
    return total


@nb.njit(cache=True)
def multinomial_uniform(state, m, k, out):
    """Counts of m i.i.d. uniform draws from {0..k-1}, written into out[:k].

    Draws are packed as w-bit codes (w = ceil(log2 k)), codes >= k are
    rejected, and whole words are tallied bit-parallel.  The final word is
    consumed code by code so exactly m draws are accepted.
    """
    for v in range(k):
        out[v] = 0
    if k == 1:
        out[0] = m
        return
    w = 1
    while (1 << w) < k:
        w += 1
    fields = 64 // w
    if w == 2:
        lowmask = np.uint64(0x5555555555555555)
    else:
        lowmask = np.uint64(0)
        for f in range(fields):
            lowmask |= np.uint64(1) << np.uint64(f * w)
    fmask = np.uint64((1 << w) - 1)
    remaining = m
    st = state[0]
    a0 = 0
    a1 = 0
    a2 = 0
    # Only the first r = min(remaining, fields) codes of each word are used,
    # so a word can never overshoot; unused fields are simply discarded.
    while remaining > 0:
        st += GOLDEN
        word = mix64(st)
        if remaining >= fields:
            mask = lowmask
        else:
            mask = lowmask & ((np.uint64(1) << np.uint64(remaining * w)) - np.uint64(1))
        if k == 3:
            lo = word & mask
            hi = (word >> np.uint64(1)) & mask
            c0 = popcount64(~(lo | hi) & mask)
            c1 = popcount64(lo & ~hi)
            c2 = popcount64(hi & ~lo)
            a0 += c0
            a1 += c1
            a2 += c2
            remaining -= c0 + c1 + c2
        else:
            for v in range(k):
                eq = mask
                for b in range(w):
                    plane = (word >> np.uint64(b)) & mask
                    if (v >> b) & 1:
                        eq &= plane
                    else:
                        eq &= ~plane & mask
                c = popcount64(eq)
                out[v] += c
                remaining -= c
    state[0] = st
    if k == 3:
        out[0] = a0
        out[1] = a1
        out[2] = a2

"""Static-model range coder driven by one pmf row per symbol.

32-bit range, byte-wise renormalisation and carry propagation through a
cached byte plus a run of pending 0xFF bytes.  Every pmf row is quantised to
16-bit cumulative frequencies (each symbol at least one count) the same way
on both sides, so encoder and decoder see identical models.
"""

import numpy as np

from patchpcc._jit import njit
from patchpcc.errors import MalformedStreamError

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


def quantize_pmfs(pmfs):
    """float (N, L) pmfs -> int64 (N, L + 1) cumulative frequencies summing to 2**16."""
    p = np.asarray(pmfs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"pmfs must be 2-D, got shape {p.shape}")
    n_sym = p.shape[1]
    if not 1 <= n_sym <= FREQ_TOTAL // 2:
        raise ValueError(f"unsupported alphabet size {n_sym}")
    p = np.clip(p, 0.0, None)
    sums = p.sum(axis=1, keepdims=True)
    if (sums <= 0).any() or not np.isfinite(sums).all():
        raise ValueError("pmf rows must have positive finite mass")
    p = p / sums
    freq = np.floor(p * (FREQ_TOTAL - n_sym)).astype(np.int64) + 1
    deficit = FREQ_TOTAL - freq.sum(axis=1)
    freq[np.arange(len(freq)), np.argmax(p, axis=1)] += deficit
    cum = np.zeros((len(freq), n_sym + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cum[:, 1:])
    return cum


@njit(cache=True)
def _shift_low(low, cache, cache_size, pos, skip_first, out):
    # Emit the cached byte (plus pending 0xFF run) once no carry can reach it.
    if (low & _MASK32) < 0xFF000000 or (low >> 32) != 0:
        carry = low >> 32
        temp = cache
        while True:
            if skip_first:
                # the very first cached byte is always 0 and is never written
                skip_first = False
            else:
                out[pos] = (temp + carry) & 0xFF
                pos += 1
            temp = 0xFF
            cache_size -= 1
            if cache_size == 0:
                break
        cache = (low >> 24) & 0xFF
    cache_size += 1
    low = (low & 0x00FFFFFF) << 8
    return low, cache, cache_size, pos, skip_first


@njit(cache=True)
def _encode_kernel(symbols, cum, out):
    low = 0
    rng = _MASK32
    cache = 0
    cache_size = 1
    pos = 0
    skip_first = True
    for i in range(symbols.shape[0]):
        s = symbols[i]
        r = rng >> FREQ_BITS
        low += r * cum[i, s]
        rng = r * (cum[i, s + 1] - cum[i, s])
        while rng < _TOP:
            rng = (rng << 8) & _MASK32
            low, cache, cache_size, pos, skip_first = _shift_low(
                low, cache, cache_size, pos, skip_first, out)
    for _ in range(5):
        low, cache, cache_size, pos, skip_first = _shift_low(
            low, cache, cache_size, pos, skip_first, out)
    return pos


@njit(cache=True)
def _decode_kernel(data, cum, out):
    n_data = data.shape[0]
    if n_data < 4:
        return -1
    code = 0
    for j in range(4):
        code = (code << 8) | data[j]
    pos = 4
    rng = _MASK32
    n_sym = cum.shape[1] - 1
    for i in range(out.shape[0]):
        r = rng >> FREQ_BITS
        target = code // r
        if target >= FREQ_TOTAL:
            return -2
        lo = 0
        hi = n_sym
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cum[i, mid] <= target:
                lo = mid
            else:
                hi = mid
        out[i] = lo
        code -= r * cum[i, lo]
        rng = r * (cum[i, lo + 1] - cum[i, lo])
        while rng < _TOP:
            if pos >= n_data:
                return -1
            code = ((code << 8) | data[pos]) & _MASK32
            rng = (rng << 8) & _MASK32
            pos += 1
    if pos != n_data:
        return -3
    # the flush writes low exactly, so an intact stream leaves no residual
    if code != 0:
        return -4
    return 0


def _prepare(pmfs):
    return np.ascontiguousarray(quantize_pmfs(pmfs))


def ac_encode(symbols, pmfs):
    """Encode ``symbols[i]`` under ``pmfs[i]``; empty input gives empty bytes."""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    pmfs = np.asarray(pmfs, dtype=np.float64)
    if len(symbols) == 0:
        return b""
    if pmfs.ndim != 2 or len(pmfs) != len(symbols):
        raise ValueError(f"need one pmf row per symbol: {len(symbols)} symbols, pmfs {pmfs.shape}")
    if symbols.min() < 0 or symbols.max() >= pmfs.shape[1]:
        raise ValueError("symbol outside the pmf alphabet")
    if (pmfs[np.arange(len(symbols)), symbols] <= 0).any():
        raise ValueError("symbol with zero probability; floor the pmfs before coding")
    cum = _prepare(pmfs)
    out = np.empty(3 * len(symbols) + 16, dtype=np.uint8)
    size = _encode_kernel(symbols, cum, out)
    return out[:size].tobytes()


def ac_decode(data, pmfs):
    """Recover ``len(pmfs)`` symbols; raises MalformedStreamError on bad input."""
    pmfs = np.asarray(pmfs, dtype=np.float64)
    n = len(pmfs)
    if n == 0:
        if len(data):
            raise MalformedStreamError("payload present for an empty symbol stream")
        return np.zeros(0, dtype=np.int64)
    cum = _prepare(pmfs)
    out = np.empty(n, dtype=np.int64)
    status = _decode_kernel(np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64), cum, out)
    if status == -1:
        raise MalformedStreamError("latent stream exhausted before all symbols were decoded")
    if status == -2:
        raise MalformedStreamError("latent stream inconsistent with the model")
    if status == -3:
        raise MalformedStreamError("trailing bytes after the last symbol")
    if status == -4:
        raise MalformedStreamError("latent stream tail does not match the decoded symbols")
    return out


def information_bits(symbols, pmfs):
    """Ideal code length, sum of -log2 p[s]."""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    p = np.asarray(pmfs, dtype=np.float64)[np.arange(len(symbols)), symbols]
    return float(-np.log2(p).sum())

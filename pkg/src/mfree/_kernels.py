"""Pairwise Hamming-gated kernels behind matrix construction and matvecs.

Every kernel scans (row, col) pairs of packed 64-bit words, gates on
Hamming distance with a popcount before touching any floating point, and
only then evaluates the element product.  Two implementations are kept:
numba-jitted loops (used when numba imports and ``MFREE_NO_NUMBA`` is not
set) and blocked numpy sweeps.  Both produce identical values and the test
suite cross-checks them.

The tensored element for a gated pair is evaluated with the ratio trick:
starting from the column's diagonal product, each differing bit k
multiplies in ``P[k, 1-c_k, c_k] / P[k, c_k, c_k]``.  That needs strictly
positive diagonal calibration entries; otherwise the plain N-factor
product kernels are used.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    if os.environ.get("MFREE_NO_NUMBA"):
        raise ImportError("numba disabled via MFREE_NO_NUMBA")
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range


def thread_count() -> int:
    """Worker cap from MFREE_THREADS (0 or unset = auto)."""
    raw = os.environ.get("MFREE_THREADS", "0")
    try:
        requested = int(raw)
    except ValueError:
        requested = 0
    available = os.cpu_count() or 1
    if HAVE_NUMBA:
        available = numba.config.NUMBA_NUM_THREADS
    if requested <= 0:
        return available
    return max(1, min(requested, available))


def _apply_threads() -> None:
    if HAVE_NUMBA:
        numba.set_num_threads(thread_count())


# ---------------------------------------------------------------------------
# popcount
# ---------------------------------------------------------------------------

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_U0 = np.uint64(0)
_U1 = np.uint64(1)
_U2 = np.uint64(2)
_U4 = np.uint64(4)
_U56 = np.uint64(56)


@njit(inline="always")
def _pc64(x):
    x = x - ((x >> _U1) & _M1)
    x = (x & _M2) + ((x >> _U2) & _M2)
    x = (x + (x >> _U4)) & _M4
    return (x * _H01) >> _U56


if hasattr(np, "bitwise_count"):

    def popcount_u64(x: np.ndarray) -> np.ndarray:
        return np.bitwise_count(x)

else:  # pragma: no cover - numpy < 2.0

    def popcount_u64(x: np.ndarray) -> np.ndarray:
        x = x - ((x >> _U1) & _M1)
        x = (x & _M2) + ((x >> _U2) & _M2)
        x = (x + (x >> _U4)) & _M4
        return (x * _H01) >> _U56


# ---------------------------------------------------------------------------
# numba kernels, tensored oracle
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(inline="always")
    def _pair_distance(words, r, c, W, D):
        d = 0
        for w in range(W):
            d += int(_pc64(words[r, w] ^ words[c, w]))
            if d > D:
                return d
        return d

    @njit(inline="always")
    def _ratio_element(words, r, c, W, base_c, ratio):
        # base_c already holds the column's diagonal product (optionally
        # pre-divided by the column norm); multiply in one ratio per
        # differing bit.
        e = base_c
        for w in range(W):
            xw = words[r, w] ^ words[c, w]
            cw = words[c, w]
            while xw != _U0:
                low = xw & (_U0 - xw)
                b = _pc64(low - _U1)
                cb = int((cw >> b) & _U1)
                e *= ratio[w * 64 + int(b), cb]
                xw &= xw - _U1
        return e

    @njit(inline="always")
    def _product_element(words, r, c, width, P):
        e = 1.0
        for k in range(width):
            w = k >> 6
            b = np.uint64(k & 63)
            rb = int((words[r, w] >> b) & _U1)
            cb = int((words[c, w] >> b) & _U1)
            e *= P[k, rb, cb]
        return e

    @njit(cache=True, parallel=True)
    def _nb_matvec_ratio(words, D, base, ratio, x, out):
        M, W = words.shape
        for r in prange(M):
            acc = 0.0
            for c in range(M):
                if x[c] == 0.0:
                    continue
                if _pair_distance(words, r, c, W, D) > D:
                    continue
                acc += _ratio_element(words, r, c, W, base[c], ratio) * x[c]
            out[r] = acc

    @njit(cache=True, parallel=True)
    def _nb_rmatvec_ratio(words, D, base, ratio, x, out):
        M, W = words.shape
        for c in prange(M):
            acc = 0.0
            base_c = base[c]
            for r in range(M):
                if x[r] == 0.0:
                    continue
                if _pair_distance(words, r, c, W, D) > D:
                    continue
                acc += _ratio_element(words, r, c, W, base_c, ratio) * x[r]
            out[c] = acc

    @njit(cache=True, parallel=True)
    def _nb_matvec_product(words, width, D, P, scale, x, out):
        M, W = words.shape
        for r in prange(M):
            acc = 0.0
            for c in range(M):
                if x[c] == 0.0:
                    continue
                if _pair_distance(words, r, c, W, D) > D:
                    continue
                acc += _product_element(words, r, c, width, P) * scale[c] * x[c]
            out[r] = acc

    @njit(cache=True, parallel=True)
    def _nb_rmatvec_product(words, width, D, P, scale, x, out):
        M, W = words.shape
        for c in prange(M):
            acc = 0.0
            for r in range(M):
                if x[r] == 0.0:
                    continue
                if _pair_distance(words, r, c, W, D) > D:
                    continue
                acc += _product_element(words, r, c, width, P) * x[r]
            out[c] = acc * scale[c]

    @njit(cache=True, parallel=True)
    def _nb_colsums(words, width, D, P, out):
        M, W = words.shape
        for c in prange(M):
            acc = 0.0
            for r in range(M):
                if _pair_distance(words, r, c, W, D) > D:
                    continue
                acc += _product_element(words, r, c, width, P)
            out[c] = acc

    @njit(cache=True, parallel=True)
    def _nb_dense_fill(words, width, D, P, out):
        M, W = words.shape
        for c in prange(M):
            for r in range(M):
                if _pair_distance(words, r, c, W, D) > D:
                    out[r, c] = 0.0
                else:
                    out[r, c] = _product_element(words, r, c, width, P)

    @njit(cache=True, parallel=True)
    def _nb_count_within(words, D, counts):
        M, W = words.shape
        for c in prange(M):
            n = 0
            for r in range(M):
                if _pair_distance(words, r, c, W, D) <= D:
                    n += 1
            counts[c] = n

    @njit(cache=True, parallel=True)
    def _nb_csc_fill(words, width, D, P, indptr, indices, data):
        M, W = words.shape
        for c in prange(M):
            pos = indptr[c]
            for r in range(M):
                if _pair_distance(words, r, c, W, D) > D:
                    continue
                data[pos] = _product_element(words, r, c, width, P)
                indices[pos] = r
                pos += 1


# ---------------------------------------------------------------------------
# blocked numpy sweeps (fallback path, and the only path for the
# correlated oracle)
# ---------------------------------------------------------------------------

_BLOCK = 256


def iter_pair_blocks(words: np.ndarray, D: int, block: int = _BLOCK):
    """Yield (row_idx, col_idx) pairs within Hamming distance D, one
    column-block at a time.  Workspace is O(M * block), never O(M^2)."""
    M = words.shape[0]
    for start in range(0, M, block):
        stop = min(start + block, M)
        xw = words[:, None, :] ^ words[None, start:stop, :]
        d = popcount_u64(xw).sum(axis=-1, dtype=np.int64)
        r_idx, c_idx = np.nonzero(d <= D)
        yield r_idx, c_idx + start


def np_pair_apply(words, D, values_fn, x, out, transpose):
    """Accumulate out = A_masked @ x (or A^T @ x) via blocked pair sweeps.

    ``values_fn(r_idx, c_idx)`` returns the raw (unnormalized) element for
    each listed pair; scaling is the caller's business.
    """
    M = words.shape[0]
    for r_idx, c_idx in iter_pair_blocks(words, D):
        vals = values_fn(r_idx, c_idx)
        if transpose:
            out += np.bincount(c_idx, weights=vals * x[r_idx], minlength=M)
        else:
            out += np.bincount(r_idx, weights=vals * x[c_idx], minlength=M)
    return out


def tensored_elements(P: np.ndarray, bits_r: np.ndarray, bits_c: np.ndarray) -> np.ndarray:
    """Batch tensored elements: prod_k P[k, r_k, c_k] over pair rows."""
    n, width = bits_r.shape
    out = np.ones(n, dtype=np.float64)
    for k in range(width):
        out *= P[k, bits_r[:, k], bits_c[:, k]]
    return out


def correlated_elements(
    S: np.ndarray,
    pair_mats: np.ndarray,
    pair_idx: np.ndarray,
    bits_r: np.ndarray,
    bits_c: np.ndarray,
) -> np.ndarray:
    """Batch pairwise-correlated elements.

    For each (row, col) pair the value is the average over qubit pairs
    (k, l), k > l, of ``C_kl[a, b]`` times the single-qubit factors on the
    remaining qubits, with ``a = 2 r_k + r_l`` and ``b = 2 c_k + c_l``.
    Zero single-qubit factors are handled exactly: a summand survives only
    when every zero factor sits on one of its two excluded qubits.
    """
    n, width = bits_r.shape
    factors = np.empty((n, width), dtype=np.float64)
    for k in range(width):
        factors[:, k] = S[k, bits_r[:, k], bits_c[:, k]]
    zero = factors == 0.0
    nzero = zero.sum(axis=1)
    safe = np.where(zero, 1.0, factors)
    total_nonzero = safe.prod(axis=1)

    out = np.zeros(n, dtype=np.float64)
    for p in range(pair_idx.shape[0]):
        k, l = int(pair_idx[p, 0]), int(pair_idx[p, 1])
        a = 2 * bits_r[:, k].astype(np.intp) + bits_r[:, l]
        b = 2 * bits_c[:, k].astype(np.intp) + bits_c[:, l]
        # product over m != k, l of the single-qubit factors
        rest = total_nonzero / (safe[:, k] * safe[:, l])
        alive = (nzero - zero[:, k] - zero[:, l]) == 0
        out += np.where(alive, pair_mats[p][a, b] * rest, 0.0)
    out /= pair_idx.shape[0]
    return out

"""Assignment-matrix element oracle and reduced-matrix construction.

The full readout assignment matrix over N qubits is never materialized
(except by the small brute-force verifier).  Individual elements are
computed from calibration data on demand, so the matrix restricted to the
observed bit-strings can be built -- or applied matrix-free -- at any
width.  Columns of the restriction are renormalized to sum to one over
the retained entries.
"""

from __future__ import annotations

import math
import weakref
from functools import reduce
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse

from . import _kernels
from .bitstrings import (
    BitString,
    CountsDistribution,
    as_bitstring,
    hamming_distance,
    pack_words,
    unpack_bits,
)
from .calibration import CalibrationSet
from .exceptions import ResourceLimitError, ValidationError, WidthError

DENSE_LIMIT = 4096
BRUTE_FORCE_LIMIT = 14
COLUMN_SUM_TOL = 1e-9


class ElementOracle:
    """Element-level access to the full assignment matrix.

    Pure and reentrant: every query is a function of (row, col) and the
    calibration tables; (row, col) and (col, row) cost the same.
    """

    def __init__(self, cal: CalibrationSet, mode: Optional[str] = None):
        if mode is None:
            mode = "correlated" if cal.correlated else "tensored"
        if mode not in ("tensored", "correlated"):
            raise ValidationError(f"unknown oracle mode {mode!r}")
        if mode == "correlated" and not cal.correlated:
            raise ValidationError(
                "correlated oracle requires pairwise matrices for every qubit pair"
            )
        self.cal = cal
        self.mode = mode
        self.width = cal.width
        self.table = cal.single_table()
        if mode == "correlated":
            self.pair_mats, self.pair_idx = cal.pair_tables()
        else:
            self.pair_mats = self.pair_idx = None
        diag = self.table[:, (0, 1), (0, 1)]
        self.can_ratio = mode == "tensored" and bool(np.all(diag > 0.0))
        if self.can_ratio:
            # ratio[k, cb] = P[k, 1-cb, cb] / P[k, cb, cb]
            self.ratio = np.stack(
                [
                    self.table[:, 1, 0] / self.table[:, 0, 0],
                    self.table[:, 0, 1] / self.table[:, 1, 1],
                ],
                axis=1,
            )
        else:
            self.ratio = None

    def _check(self, row: BitString, col: BitString) -> None:
        if row.width != self.width or col.width != self.width:
            raise WidthError(
                f"bit-string widths ({row.width}, {col.width}) do not match "
                f"calibration width {self.width}"
            )

    def element(self, row: BitString, col: BitString) -> float:
        """Probability that prepared ``col`` is read out as ``row``."""
        self._check(row, col)
        if self.mode == "tensored":
            e = 1.0
            table = self.table
            for k in range(self.width):
                e *= table[k, row.bit(k), col.bit(k)]
            return float(e)
        bits_r = np.array([[row.bit(k) for k in range(self.width)]], dtype=np.uint8)
        bits_c = np.array([[col.bit(k) for k in range(self.width)]], dtype=np.uint8)
        return float(self.elements(bits_r, bits_c)[0])

    def elements(self, bits_r: np.ndarray, bits_c: np.ndarray) -> np.ndarray:
        """Batch elements for (n, N) uint8 bit matrices of rows and cols."""
        if self.mode == "tensored":
            return _kernels.tensored_elements(self.table, bits_r, bits_c)
        return _kernels.correlated_elements(
            self.table, self.pair_mats, self.pair_idx, bits_r, bits_c
        )

    def diag_elements(self, bits: np.ndarray) -> np.ndarray:
        """element(x, x) for every row of an (M, N) bit matrix."""
        return self.elements(bits, bits)


_oracle_cache = weakref.WeakKeyDictionary()


def get_oracle(cal: CalibrationSet, mode: Optional[str] = None) -> ElementOracle:
    """Memoized ElementOracle for a calibration set (oracles are pure)."""
    key = mode or ("correlated" if cal.correlated else "tensored")
    per_cal = _oracle_cache.setdefault(cal, {})
    if key not in per_cal:
        per_cal[key] = ElementOracle(cal, key)
    return per_cal[key]


def tensored_element(cal: CalibrationSet, row, col) -> float:
    """Uncorrelated-model element: the product over qubits of the
    single-qubit probability of reading the row bit given the col bit."""
    row = as_bitstring(row)
    col = as_bitstring(col)
    return get_oracle(cal, "tensored").element(row, col)


def correlated_element(cal: CalibrationSet, row, col) -> float:
    """Pairwise-correlated element: the average over qubit pairs (k, l) of
    the 4x4 pair matrix entry times single-qubit factors on the rest."""
    row = as_bitstring(row)
    col = as_bitstring(col)
    return get_oracle(cal, "correlated").element(row, col)


def column_norms(oracle, basis: Sequence[BitString], distance: int) -> dict:
    """Renormalization denominators: for each col in basis, the sum of raw
    elements over basis rows within the Hamming cutoff."""
    elem = oracle.element if hasattr(oracle, "element") else oracle
    norms = {}
    for col in basis:
        norms[col] = sum(
            elem(row, col) for row in basis if hamming_distance(row, col) <= distance
        )
    return norms


def reduced_element(
    oracle,
    basis: Sequence[BitString],
    col_norms: Mapping[BitString, float],
    row: BitString,
    col: BitString,
    distance: int,
) -> float:
    """One entry of the renormalized reduced matrix.

    Zero whenever the pair is beyond the distance cutoff; otherwise the raw
    element divided by the column's denominator over the observed basis.
    """
    if hamming_distance(row, col) > distance:
        return 0.0
    elem = oracle.element if hasattr(oracle, "element") else oracle
    denom = col_norms[col]
    if denom <= 0.0:
        raise ValidationError(
            f"column {col} has zero renormalization denominator "
            "(all-zero calibration column)"
        )
    return elem(row, col) / denom


class ReducedAssignmentMatrix:
    """The assignment matrix restricted to observed bit-strings.

    The basis is the lexicographically sorted list of observed outcomes;
    entries beyond the Hamming cutoff are zero and each stored column sums
    to one after renormalization.  Storage is dense, CSC sparse, or
    implicit (basis and column norms only, elements recomputed on the fly).
    """

    def __init__(self, basis, distance, oracle, storage, col_norms, words, bits,
                 dense=None, sparse=None):
        self.basis = tuple(basis)
        self.dim = len(self.basis)
        self.distance = distance
        self.oracle = oracle
        self.storage = storage
        self.col_norms = col_norms
        self.words = words
        self.bits = bits
        self.dense = dense
        self.sparse = sparse
        self.index = {bs: i for i, bs in enumerate(self.basis)}
        self._diag = None
        self._lu = None

    @property
    def shape(self):
        return (self.dim, self.dim)

    @property
    def width(self) -> int:
        return self.oracle.width

    def element(self, row, col) -> float:
        """Entry (row, col) of the renormalized reduced matrix."""
        r = self.index[as_bitstring(row, self.width)]
        c = self.index[as_bitstring(col, self.width)]
        if self.dense is not None:
            return float(self.dense[r, c])
        if self.sparse is not None:
            return float(self.sparse[r, c])
        if hamming_distance(self.basis[r], self.basis[c]) > self.distance:
            return 0.0
        raw = self.oracle.elements(self.bits[r : r + 1], self.bits[c : c + 1])[0]
        return float(raw / self.col_norms[c])

    def diagonal(self) -> np.ndarray:
        if self._diag is None:
            if self.dense is not None:
                diag = np.ascontiguousarray(np.diag(self.dense))
            elif self.sparse is not None:
                diag = np.asarray(self.sparse.diagonal())
            else:
                diag = self.oracle.diag_elements(self.bits) / self.col_norms
            self._diag = diag
        return self._diag

    def __repr__(self) -> str:
        return (
            f"ReducedAssignmentMatrix(dim={self.dim}, width={self.width}, "
            f"distance={self.distance}, storage='{self.storage}')"
        )


def _resolve_storage(storage: str, dim: int) -> str:
    if storage == "auto":
        return "dense" if dim <= DENSE_LIMIT else "implicit"
    if storage not in ("dense", "csc", "implicit"):
        raise ValidationError(f"unknown storage kind {storage!r}")
    return storage


def _colsums_implicit(oracle, words, bits, distance) -> np.ndarray:
    M = words.shape[0]
    if _kernels.HAVE_NUMBA and oracle.mode == "tensored":
        out = np.empty(M, dtype=np.float64)
        _kernels._apply_threads()
        _kernels._nb_colsums(words, oracle.width, distance, oracle.table, out)
        return out
    out = np.zeros(M, dtype=np.float64)
    values_fn = lambda r, c: oracle.elements(bits[r], bits[c])
    return _kernels.np_pair_apply(
        words, distance, values_fn, np.ones(M), out, transpose=True
    )


def build_reduced(
    cal: CalibrationSet,
    noisy: CountsDistribution,
    distance: int = 3,
    storage: str = "auto",
    mode: Optional[str] = None,
) -> ReducedAssignmentMatrix:
    """Build the reduced matrix over the bit-strings observed in ``noisy``.

    ``storage='auto'`` materializes a dense matrix up to 4096 basis strings
    and stays implicit above that.  The column norms are always the
    raw-element sums over the observed basis at the chosen cutoff, whatever
    the storage.
    """
    if noisy.width != cal.width:
        raise WidthError(
            f"counts width {noisy.width} does not match calibration width {cal.width}"
        )
    if distance < 0:
        raise ValidationError(f"distance must be >= 0, got {distance}")
    oracle = get_oracle(cal, mode)
    basis = sorted(noisy.entries)
    M = len(basis)
    words = pack_words(basis, cal.width)
    bits = unpack_bits(words, cal.width)
    storage = _resolve_storage(storage, M)

    dense = sparse = None
    if storage == "dense":
        raw = _build_dense_raw(oracle, words, bits, distance)
        col_norms = raw.sum(axis=0)
        _check_col_norms(col_norms, basis)
        dense = raw / col_norms
    elif storage == "csc":
        sparse, col_norms = _build_csc(oracle, words, bits, distance, basis)
    else:
        col_norms = _colsums_implicit(oracle, words, bits, distance)
        _check_col_norms(col_norms, basis)

    return ReducedAssignmentMatrix(
        basis, distance, oracle, storage, col_norms, words, bits,
        dense=dense, sparse=sparse,
    )


def _check_col_norms(col_norms: np.ndarray, basis) -> None:
    bad = np.nonzero(col_norms <= 0.0)[0]
    if bad.size:
        raise ValidationError(
            f"column {basis[bad[0]]} has zero renormalization denominator "
            "(all-zero calibration column)"
        )


def _build_dense_raw(oracle, words, bits, distance) -> np.ndarray:
    M = words.shape[0]
    if _kernels.HAVE_NUMBA and oracle.mode == "tensored":
        out = np.empty((M, M), dtype=np.float64)
        _kernels._apply_threads()
        _kernels._nb_dense_fill(words, oracle.width, distance, oracle.table, out)
        return out
    out = np.zeros((M, M), dtype=np.float64)
    for r_idx, c_idx in _kernels.iter_pair_blocks(words, distance):
        out[r_idx, c_idx] = oracle.elements(bits[r_idx], bits[c_idx])
    return out


def _build_csc(oracle, words, bits, distance, basis):
    M = words.shape[0]
    if _kernels.HAVE_NUMBA and oracle.mode == "tensored":
        _kernels._apply_threads()
        counts = np.empty(M, dtype=np.int64)
        _kernels._nb_count_within(words, distance, counts)
        indptr = np.zeros(M + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        nnz = int(indptr[-1])
        data = np.empty(nnz, dtype=np.float64)
        indices = np.empty(nnz, dtype=np.int64)
        _kernels._nb_csc_fill(
            words, oracle.width, distance, oracle.table, indptr, indices, data
        )
    else:
        rows, cols, vals = [], [], []
        for r_idx, c_idx in _kernels.iter_pair_blocks(words, distance):
            rows.append(r_idx)
            cols.append(c_idx)
            vals.append(oracle.elements(bits[r_idx], bits[c_idx]))
        coo = scipy.sparse.coo_array(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(M, M),
        )
        csc = coo.tocsc()
        data, indices, indptr = csc.data, csc.indices, csc.indptr
    col_norms = np.add.reduceat(data, indptr[:-1])
    _check_col_norms(col_norms, basis)
    data = data / np.repeat(col_norms, np.diff(indptr))
    sparse = scipy.sparse.csc_array((data, indices, indptr), shape=(M, M))
    return sparse, col_norms


def build_full_matrix(
    cal: CalibrationSet,
    mode: Optional[str] = None,
    limit: int = BRUTE_FORCE_LIMIT,
) -> np.ndarray:
    """Materialize the complete 2^N x 2^N matrix (verification oracle only).

    Tensored mode is the Kronecker product of the single-qubit matrices,
    highest qubit first; correlated mode evaluates the pairwise formula for
    every entry.  Refuses to run above ``limit`` qubits.
    """
    N = cal.width
    if N > limit:
        raise ResourceLimitError(
            f"full-matrix construction limited to {limit} qubits, asked for {N}"
        )
    oracle = get_oracle(cal, mode)
    if oracle.mode == "tensored":
        mats = [cal.singles[k].p for k in range(N - 1, -1, -1)]
        return reduce(np.kron, mats)
    dim = 1 << N
    ints = np.arange(dim, dtype=np.uint64).reshape(dim, 1)
    bits = unpack_bits(ints, N)
    out = np.empty((dim, dim), dtype=np.float64)
    for c in range(dim):
        bits_c = np.broadcast_to(bits[c], (dim, N))
        out[:, c] = oracle.elements(bits, bits_c)
    return out


def estimate_csc_memory(
    num_qubits: int, distance: int, value_bytes: int = 4, index_bytes: int = 8
) -> int:
    """Bytes needed to store the full matrix, truncated to the Hamming
    cutoff, in compressed sparse column format.

    Exact integer arithmetic: per-column element count times 2^N values and
    row indices, plus 2^N + 1 column pointers.
    """
    breakdown = csc_memory_breakdown(num_qubits, distance, value_bytes, index_bytes)
    return breakdown["total_bytes"]


def csc_memory_breakdown(
    num_qubits: int, distance: int, value_bytes: int = 4, index_bytes: int = 8
) -> dict:
    """Itemized CSC storage estimate (values, row indices, column pointers)."""
    if not 0 <= distance <= num_qubits:
        raise ValidationError(
            f"distance must lie in [0, {num_qubits}], got {distance}"
        )
    if value_bytes < 1 or index_bytes < 1:
        raise ValidationError("byte sizes must be positive")
    per_column = sum(math.comb(num_qubits, j) for j in range(distance + 1))
    num_columns = 1 << num_qubits
    values_bytes = per_column * num_columns * value_bytes
    row_index_bytes = per_column * num_columns * index_bytes
    col_pointer_bytes = (num_columns + 1) * index_bytes
    return {
        "num_qubits": num_qubits,
        "distance": distance,
        "elements_per_column": per_column,
        "values_bytes": values_bytes,
        "row_index_bytes": row_index_bytes,
        "col_pointer_bytes": col_pointer_bytes,
        "total_bytes": values_bytes + row_index_bytes + col_pointer_bytes,
    }

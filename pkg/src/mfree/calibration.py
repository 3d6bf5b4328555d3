"""Error-model inputs: per-qubit and pairwise readout calibration matrices.

A single-qubit calibration matrix holds ``p[i][j]`` = probability of
preparing state ``j`` and measuring ``i``; columns are therefore
probability vectors.  Pairwise 4x4 matrices, when present for every qubit
pair, switch the element oracle into correlated mode.  Pairwise matrices
are accepted as input only; estimating them from device data is out of
scope here.
"""

from __future__ import annotations

import json
from typing import IO, Mapping, Optional, Sequence, Union

import numpy as np

from .exceptions import ParseError, SchemaError, ValidationError

COLUMN_SUM_HARD_TOL = 1e-6
COLUMN_SUM_CLEAN_TOL = 1e-9


def _check_stochastic(mat: np.ndarray, name: str) -> None:
    if np.any(mat < 0.0) or np.any(mat > 1.0):
        bad = mat[(mat < 0) | (mat > 1)].flat[0]
        raise ValidationError(f"{name} has entry {bad!r} outside [0, 1]")
    sums = mat.sum(axis=0)
    err = np.abs(sums - 1.0).max()
    if err > COLUMN_SUM_HARD_TOL:
        raise ValidationError(
            f"{name} column sums deviate from 1 by {err:.3e} (limit {COLUMN_SUM_HARD_TOL})"
        )


class SingleQubitCal:
    """A 2x2 column-stochastic readout matrix for one qubit."""

    __slots__ = ("_p",)

    def __init__(self, p):
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (2, 2):
            raise ValidationError(f"single-qubit calibration must be 2x2, got {p.shape}")
        _check_stochastic(p, "single-qubit calibration")
        p = p.copy()
        p.setflags(write=False)
        self._p = p

    @property
    def p(self) -> np.ndarray:
        return self._p

    def __getitem__(self, idx):
        return self._p[idx]

    def is_diagonally_dominant(self) -> bool:
        return bool(self._p[0, 0] > self._p[0, 1] and self._p[1, 1] > self._p[1, 0])

    def __repr__(self) -> str:
        return f"SingleQubitCal({self._p.tolist()})"


class PairwiseCal:
    """A 4x4 column-stochastic matrix for the qubit pair (k, l), k > l.

    Index convention: measured index ``a = 2*q_k + q_l`` against prepared
    index ``b = 2*q'_k + q'_l``.
    """

    __slots__ = ("_k", "_l", "_c")

    def __init__(self, k: int, l: int, c):
        if not k > l >= 0:
            raise ValidationError(f"pair indices must satisfy k > l >= 0, got ({k}, {l})")
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (4, 4):
            raise ValidationError(f"pairwise calibration must be 4x4, got {c.shape}")
        _check_stochastic(c, f"pairwise calibration ({k},{l})")
        c = c.copy()
        c.setflags(write=False)
        self._k = k
        self._l = l
        self._c = c

    @property
    def k(self) -> int:
        return self._k

    @property
    def l(self) -> int:
        return self._l

    @property
    def c(self) -> np.ndarray:
        return self._c

    def __repr__(self) -> str:
        return f"PairwiseCal(k={self._k}, l={self._l})"


class CalibrationSet:
    """All calibration inputs for one device configuration.

    ``singles`` always holds one matrix per qubit.  ``pairs``, when given,
    must cover every pair (k, l) with k > l; its presence selects the
    correlated element oracle.  Both are stored verbatim.
    """

    __slots__ = ("_width", "_singles", "_pairs", "_table", "_pair_table", "__weakref__")

    def __init__(
        self,
        singles: Sequence[SingleQubitCal],
        pairs: Optional[Sequence[PairwiseCal]] = None,
    ):
        singles = tuple(
            s if isinstance(s, SingleQubitCal) else SingleQubitCal(s) for s in singles
        )
        if not singles:
            raise ValidationError("calibration needs at least one qubit")
        width = len(singles)

        pair_map = None
        if pairs is not None:
            pair_map = {}
            for pc in pairs:
                if not isinstance(pc, PairwiseCal):
                    pc = PairwiseCal(*pc)
                if pc.k >= width:
                    raise SchemaError(
                        f"pair ({pc.k},{pc.l}) references qubit {pc.k} beyond width {width}"
                    )
                if (pc.k, pc.l) in pair_map:
                    raise SchemaError(f"duplicate pair ({pc.k},{pc.l})")
                pair_map[(pc.k, pc.l)] = pc
            expected = width * (width - 1) // 2
            if len(pair_map) != expected:
                missing = [
                    (k, l)
                    for k in range(width)
                    for l in range(k)
                    if (k, l) not in pair_map
                ]
                raise SchemaError(
                    f"correlated mode needs all {expected} pairs; missing {missing[:4]}"
                    + ("..." if len(missing) > 4 else "")
                )

        self._width = width
        self._singles = singles
        self._pairs = pair_map
        self._table = None
        self._pair_table = None

    @property
    def width(self) -> int:
        return self._width

    @property
    def singles(self) -> tuple:
        return self._singles

    @property
    def pairs(self) -> Optional[Mapping[tuple, PairwiseCal]]:
        return None if self._pairs is None else dict(self._pairs)

    @property
    def correlated(self) -> bool:
        return self._pairs is not None

    def single_table(self) -> np.ndarray:
        """All single-qubit matrices stacked as an (N, 2, 2) array."""
        if self._table is None:
            table = np.stack([s.p for s in self._singles])
            table.setflags(write=False)
            self._table = table
        return self._table

    def pair_tables(self):
        """Pairwise matrices as ((n_pairs, 4, 4) array, (n_pairs, 2) index array)."""
        if not self.correlated:
            raise ValidationError("calibration has no pairwise matrices")
        if self._pair_table is None:
            keys = sorted(self._pairs)
            mats = np.stack([self._pairs[key].c for key in keys])
            idx = np.asarray(keys, dtype=np.int64)
            mats.setflags(write=False)
            idx.setflags(write=False)
            self._pair_table = (mats, idx)
        return self._pair_table


def validate(cal: CalibrationSet) -> list:
    """Re-check invariants and return advisory warnings.

    Hard violations (column sums, entry range) raise at construction, so a
    CalibrationSet in hand already passes them; this reports soft issues.
    Missing diagonal dominance is a warning, not an error: iterative
    solvers are chosen precisely because dominance can fail.
    """
    warnings = []
    for k, s in enumerate(cal.singles):
        if not s.is_diagonally_dominant():
            warnings.append(
                f"single-qubit matrix {k} is not strictly diagonally dominant"
            )
        sums = s.p.sum(axis=0)
        err = np.abs(sums - 1.0).max()
        if err > COLUMN_SUM_CLEAN_TOL:
            warnings.append(
                f"single-qubit matrix {k} column sums off by {err:.3e} "
                f"(within hard limit, above clean tolerance)"
            )
    if cal.correlated:
        for (k, l), pc in sorted(cal.pairs.items()):
            err = np.abs(pc.c.sum(axis=0) - 1.0).max()
            if err > COLUMN_SUM_CLEAN_TOL:
                warnings.append(
                    f"pairwise matrix ({k},{l}) column sums off by {err:.3e}"
                )
    return warnings


def _parse_document(doc) -> CalibrationSet:
    if not isinstance(doc, dict):
        raise SchemaError("calibration document must be a JSON object")
    try:
        width = doc["num_qubits"]
        singles_raw = doc["singles"]
    except KeyError as exc:
        raise SchemaError(f"calibration document missing field {exc}") from None
    if not isinstance(width, int) or width < 1:
        raise SchemaError(f"num_qubits must be a positive integer, got {width!r}")
    if not isinstance(singles_raw, list) or len(singles_raw) != width:
        raise SchemaError(
            f"'singles' must list exactly num_qubits={width} matrices, "
            f"got {len(singles_raw) if isinstance(singles_raw, list) else type(singles_raw).__name__}"
        )
    singles = [SingleQubitCal(m) for m in singles_raw]

    pairs = None
    if "pairs" in doc and doc["pairs"] is not None:
        pairs_raw = doc["pairs"]
        if not isinstance(pairs_raw, list):
            raise SchemaError("'pairs' must be a list of {k, l, c} objects")
        pairs = []
        for entry in pairs_raw:
            try:
                pairs.append(PairwiseCal(entry["k"], entry["l"], entry["c"]))
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"malformed pair entry: {exc}") from None
    return CalibrationSet(singles, pairs)


def load_calibration(source: Union[str, IO]) -> CalibrationSet:
    """Load a calibration document from a JSON path, stream, or string.

    The document looks like::

        {"num_qubits": N,
         "singles": [[[p00, p01], [p10, p11]], ...],
         "pairs":   [{"k": 1, "l": 0, "c": [[...4x4...]]}, ...]}

    with "pairs" optional.  Parse, schema, and validation failures raise
    distinct exception types.
    """
    try:
        if hasattr(source, "read"):
            doc = json.load(source)
        else:
            text = str(source)
            if text.lstrip().startswith("{"):
                doc = json.loads(text)
            else:
                with open(text, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"calibration document is not valid JSON: {exc}") from None
    return _parse_document(doc)


def save_calibration(cal: CalibrationSet, path_or_stream: Union[str, IO]) -> None:
    """Write a CalibrationSet back out in the schema load_calibration reads."""
    doc = {
        "num_qubits": cal.width,
        "singles": [s.p.tolist() for s in cal.singles],
    }
    if cal.correlated:
        doc["pairs"] = [
            {"k": k, "l": l, "c": pc.c.tolist()}
            for (k, l), pc in sorted(cal.pairs.items())
        ]
    if hasattr(path_or_stream, "write"):
        json.dump(doc, path_or_stream, indent=2)
    else:
        with open(path_or_stream, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)


def uniform_error_cal(width: int, flip0: float, flip1: float = None) -> CalibrationSet:
    """Convenience factory: the same 2x2 matrix on every qubit.

    ``flip0`` is the probability that a prepared 0 reads as 1, ``flip1``
    that a prepared 1 reads as 0 (defaults to ``flip0``).
    """
    if flip1 is None:
        flip1 = flip0
    mat = [[1.0 - flip0, flip1], [flip0, 1.0 - flip1]]
    return CalibrationSet([SingleQubitCal(mat) for _ in range(width)])

"""Expectation values of diagonal operators and probability projection.

Quasi-probabilities are consumed two ways: summed against the eigenvalues
of an operator that is diagonal in the computational basis (the unbiased
estimator), or projected to the nearest true probability distribution in
L2 norm when a distribution is required downstream.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional, Tuple, Union

import numpy as np

from .bitstrings import BitString, QuasiDistribution, as_bitstring
from .exceptions import ValidationError, WidthError
from .overhead import OverheadReport, sigma_bound

_ALPHABET = frozenset("IZ01")

# per-character eigenvalue of bit 0 / bit 1
_CHAR_WEIGHTS = {
    "I": (1.0, 1.0),
    "Z": (1.0, -1.0),
    "0": (1.0, 0.0),
    "1": (0.0, 1.0),
}


class DiagonalOperator:
    """A diagonal observable given as a string over {I, Z, 0, 1}.

    The leftmost character acts on the highest qubit, matching the
    bit-string text convention.  ``I`` weighs both outcomes 1; ``Z``
    weighs 0 as +1 and 1 as -1; ``'0'``/``'1'`` are projectors onto that
    outcome.  Every eigenvalue therefore lies in [-1, 1].

    ``from_function`` is the escape hatch for diagonal observables that the
    alphabet cannot express; supplied functions must stay within [-1, 1].
    """

    def __init__(self, spec: str):
        if not spec:
            raise ValidationError("operator spec string is empty")
        bad = set(spec) - _ALPHABET
        if bad:
            raise ValidationError(
                f"operator spec {spec!r} uses characters outside I/Z/0/1: {sorted(bad)}"
            )
        self._spec = spec
        self._width = len(spec)
        # weights[k] = (eigenvalue of bit 0, of bit 1) for qubit k
        self._weights = np.array(
            [_CHAR_WEIGHTS[spec[self._width - 1 - k]] for k in range(self._width)]
        )
        self._fn: Optional[Callable[[BitString], float]] = None

    @classmethod
    def from_function(cls, fn: Callable[[BitString], float], width: int) -> "DiagonalOperator":
        op = cls.__new__(cls)
        op._spec = None
        op._width = width
        op._weights = None
        op._fn = fn
        return op

    @property
    def width(self) -> int:
        return self._width

    @property
    def spec(self) -> Optional[str]:
        return self._spec

    def eigenvalue(self, bitstring: Union[str, BitString]) -> float:
        bs = as_bitstring(bitstring, self._width)
        if self._fn is not None:
            val = float(self._fn(bs))
            if abs(val) > 1.0 + 1e-12:
                raise ValidationError(
                    f"eigenvalue {val!r} for {bs} is outside [-1, 1]"
                )
            return val
        val = 1.0
        for k in range(self._width):
            val *= self._weights[k, bs.bit(k)]
            if val == 0.0:
                return 0.0
        return float(val)

    def __repr__(self) -> str:
        if self._spec is not None:
            return f"DiagonalOperator('{self._spec}')"
        return f"DiagonalOperator(<function>, width={self._width})"


def _iter_weighted(quasi) -> Tuple[int, list]:
    if isinstance(quasi, QuasiDistribution):
        return quasi.width, list(quasi.items())
    items = [(as_bitstring(k), float(v)) for k, v in quasi.items()]
    if not items:
        raise ValidationError("empty distribution")
    return items[0][0].width, items


def expval(quasi, op: Union[str, DiagonalOperator]) -> float:
    """Sum of eigenvalue times weight over the distribution's support."""
    if isinstance(op, str):
        op = DiagonalOperator(op)
    width, items = _iter_weighted(quasi)
    if width != op.width:
        raise WidthError(
            f"operator width {op.width} does not match distribution width {width}"
        )
    return float(sum(op.eigenvalue(bs) * w for bs, w in items))


def expval_with_stddev(
    quasi, op, overhead: OverheadReport, shots: int
) -> Tuple[float, float]:
    """Expectation value paired with its sampling-noise upper bound."""
    return expval(quasi, op), sigma_bound(overhead, shots)


def nearest_probability(quasi) -> dict:
    """Project a quasi-distribution to the nearest probability vector (L2).

    Sorted-redistribution algorithm: walk the weights from most negative
    up, zeroing entries whose share of the accumulated deficit would stay
    negative, then spread the deficit uniformly over the rest.  Linear time
    after the sort, and exactly the L2 simplex projection because the
    input sums to one.  Ties at the zeroing threshold resolve by zeroing
    the lexicographically last bit-string first (the projection itself is
    unique; this fixes only the scan order).
    """
    _, items = _iter_weighted(quasi)
    total = sum(w for _, w in items)
    if abs(total - 1.0) > 1e-6:
        raise ValidationError(
            f"projection input must sum to 1 (got {total!r}); normalize first"
        )
    n = len(items)
    # ascending weight; among equal weights the lexicographically last
    # bit-string goes first
    by_key = sorted(range(n), key=lambda i: items[i][0])
    rank = {idx: pos for pos, idx in enumerate(by_key)}
    order = sorted(range(n), key=lambda i: (items[i][1], -rank[i]))

    out = {bs: 0.0 for bs, _ in items}
    deficit = 0.0
    remaining = n
    for pos, idx in enumerate(order):
        bs, w = items[idx]
        if w + deficit / remaining < 0.0:
            deficit += w
            remaining -= 1
        else:
            shift = deficit / remaining
            for idx2 in order[pos:]:
                bs2, w2 = items[idx2]
                out[bs2] = w2 + shift
            break
    return out

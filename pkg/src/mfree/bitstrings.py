"""Bit-string keys and count/probability containers.

Measurement outcomes are fixed-width binary strings.  Qubit 0 is the
least-significant bit, so the text form ``"10"`` means qubit 1 read ``1``
and qubit 0 read ``0``.  Widths beyond 64 are first-class: bits are packed
into as many 64-bit words as needed.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Union

import numpy as np

from .exceptions import ValidationError, WidthError

WORD_BITS = 64
_WORD_MASK = (1 << WORD_BITS) - 1


def _num_words(width: int) -> int:
    return (width + WORD_BITS - 1) // WORD_BITS


class BitString:
    """An immutable N-bit measurement outcome, packed into 64-bit words.

    Word 0 holds qubits 0..63 (qubit 0 in the lowest bit), word 1 holds
    qubits 64..127, and so on.  Instances are hashable and totally ordered
    within one width; the ordering agrees with lexicographic order of the
    text form.
    """

    __slots__ = ("_width", "_words")

    def __init__(self, width: int, words: Iterable[int] = ()):
        if width < 1:
            raise ValidationError(f"width must be >= 1, got {width}")
        words = tuple(int(w) & _WORD_MASK for w in words)
        nw = _num_words(width)
        if len(words) < nw:
            words = words + (0,) * (nw - len(words))
        elif len(words) > nw:
            raise ValidationError(f"{len(words)} words exceed width {width}")
        # mask stray bits above the width in the top word
        top_bits = width - (nw - 1) * WORD_BITS
        top_mask = (1 << top_bits) - 1
        words = words[:-1] + (words[-1] & top_mask,)
        self._width = width
        self._words = words

    @classmethod
    def from_label(cls, label: str) -> "BitString":
        """Parse a '0'/'1' text label; leftmost character is the highest qubit."""
        if not label or any(ch not in "01" for ch in label):
            raise ValidationError(f"not a bit-string label: {label!r}")
        value = int(label, 2)
        return cls.from_int(value, len(label))

    @classmethod
    def from_int(cls, value: int, width: int) -> "BitString":
        if value < 0 or value >> width:
            raise ValidationError(f"value {value} does not fit in {width} bits")
        words = []
        for _ in range(_num_words(width)):
            words.append(value & _WORD_MASK)
            value >>= WORD_BITS
        return cls(width, words)

    @property
    def width(self) -> int:
        return self._width

    @property
    def words(self) -> tuple:
        return self._words

    def bit(self, k: int) -> int:
        """Value of qubit ``k`` (0 = least significant)."""
        if not 0 <= k < self._width:
            raise IndexError(f"qubit {k} out of range for width {self._width}")
        return (self._words[k // WORD_BITS] >> (k % WORD_BITS)) & 1

    def to_label(self) -> str:
        return "".join("1" if self.bit(k) else "0" for k in range(self._width - 1, -1, -1))

    def to_int(self) -> int:
        value = 0
        for w in reversed(self._words):
            value = (value << WORD_BITS) | w
        return value

    def popcount(self) -> int:
        return sum(w.bit_count() for w in self._words)

    def __str__(self) -> str:
        return self.to_label()

    def __repr__(self) -> str:
        return f"BitString('{self.to_label()}')"

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return self._width == other._width and self._words == other._words

    def __hash__(self) -> int:
        return hash((self._width, self._words))

    def __lt__(self, other: "BitString") -> bool:
        _check_widths(self, other)
        return self._words[::-1] < other._words[::-1]

    def __le__(self, other: "BitString") -> bool:
        return self == other or self < other

    def __gt__(self, other: "BitString") -> bool:
        return not self <= other

    def __ge__(self, other: "BitString") -> bool:
        return not self < other


def _check_widths(a: BitString, b: BitString) -> None:
    if a.width != b.width:
        raise WidthError(f"width mismatch: {a.width} != {b.width}")


def hamming_distance(a: BitString, b: BitString) -> int:
    """Number of bit positions in which ``a`` and ``b`` differ."""
    _check_widths(a, b)
    return sum((wa ^ wb).bit_count() for wa, wb in zip(a.words, b.words))


def as_bitstring(key: Union[str, BitString], width: int = None) -> BitString:
    """Coerce a text label or BitString to a BitString, checking width."""
    bs = BitString.from_label(key) if isinstance(key, str) else key
    if width is not None and bs.width != width:
        raise WidthError(f"expected width {width}, got {bs.width} for {bs}")
    return bs


class CountsDistribution:
    """Histogram of raw measurement shots, keyed by BitString.

    All keys share one width and every count is a positive integer; the
    total is the sample count.  Immutable after construction.
    """

    __slots__ = ("_width", "_entries", "_shots")

    def __init__(self, entries: Mapping[Union[str, BitString], int], width: int = None):
        items = {}
        for key, count in entries.items():
            bs = BitString.from_label(key) if isinstance(key, str) else key
            if width is None:
                width = bs.width
            elif bs.width != width:
                raise WidthError(
                    f"entry {bs} has width {bs.width}, distribution width is {width}"
                )
            count = int(count)
            if count <= 0:
                raise ValidationError(f"count for {bs} must be positive, got {count}")
            if bs in items:
                raise ValidationError(f"duplicate entry {bs}")
            items[bs] = count
        if not items:
            raise ValidationError("counts distribution is empty")
        self._width = width
        self._entries = items
        self._shots = sum(items.values())

    @property
    def width(self) -> int:
        return self._width

    @property
    def shots(self) -> int:
        return self._shots

    @property
    def entries(self) -> Mapping[BitString, int]:
        return dict(self._entries)

    def items(self):
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, key: Union[str, BitString]) -> int:
        return self._entries[as_bitstring(key, self._width)]

    def __contains__(self, key) -> bool:
        try:
            return as_bitstring(key, self._width) in self._entries
        except (WidthError, ValidationError):
            return False

    def __iter__(self):
        return iter(self._entries)

    def to_text_counts(self) -> dict:
        return {bs.to_label(): c for bs, c in self._entries.items()}

    def __repr__(self) -> str:
        return f"CountsDistribution(width={self._width}, shots={self._shots}, unique={len(self)})"


def normalize(counts: CountsDistribution) -> dict:
    """Divide each count by the total, returning a probability map.

    The support and the relative ordering of entries are preserved exactly;
    the values sum to 1 up to rounding.
    """
    shots = counts.shots
    return {bs: c / shots for bs, c in counts.items()}


class QuasiDistribution:
    """Signed weights over bit-strings that sum to one.

    This is the output of inverting an error model on finite samples:
    individual weights may be negative.  The constructor checks the sum
    against ``sum_tol`` (1e-9 by default; iterative solves construct with
    their own looser contract).
    """

    __slots__ = ("_width", "_entries")

    DEFAULT_SUM_TOL = 1e-9

    def __init__(
        self,
        entries: Mapping[Union[str, BitString], float],
        width: int = None,
        sum_tol: float = DEFAULT_SUM_TOL,
    ):
        items = {}
        for key, weight in entries.items():
            bs = BitString.from_label(key) if isinstance(key, str) else key
            if width is None:
                width = bs.width
            elif bs.width != width:
                raise WidthError(
                    f"entry {bs} has width {bs.width}, distribution width is {width}"
                )
            items[bs] = float(weight)
        if not items:
            raise ValidationError("quasi-distribution is empty")
        total = sum(items.values())
        if abs(total - 1.0) > sum_tol:
            raise ValidationError(
                f"quasi-probability weights sum to {total!r}, expected 1 within {sum_tol}"
            )
        self._width = width
        self._entries = items

    @property
    def width(self) -> int:
        return self._width

    @property
    def entries(self) -> Mapping[BitString, float]:
        return dict(self._entries)

    def items(self):
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, key: Union[str, BitString]) -> float:
        return self._entries[as_bitstring(key, self._width)]

    def __iter__(self):
        return iter(self._entries)

    def to_text_weights(self) -> dict:
        return {bs.to_label(): w for bs, w in self._entries.items()}

    def __repr__(self) -> str:
        return f"QuasiDistribution(width={self._width}, unique={len(self)})"


def pack_words(strings: Iterable[BitString], width: int) -> np.ndarray:
    """Pack bit-strings into an (M, W) uint64 array of 64-bit words."""
    strings = list(strings)
    nw = _num_words(width)
    out = np.zeros((len(strings), nw), dtype=np.uint64)
    for i, bs in enumerate(strings):
        if bs.width != width:
            raise WidthError(f"{bs} has width {bs.width}, expected {width}")
        for w, word in enumerate(bs.words):
            out[i, w] = word
    return out


def unpack_bits(words: np.ndarray, width: int) -> np.ndarray:
    """Expand packed words to an (M, N) uint8 matrix, column k = qubit k."""
    m = words.shape[0]
    out = np.empty((m, width), dtype=np.uint8)
    for k in range(width):
        w, b = divmod(k, WORD_BITS)
        out[:, k] = (words[:, w] >> np.uint64(b)) & np.uint64(1)
    return out

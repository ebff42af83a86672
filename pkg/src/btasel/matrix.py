"""Block-tridiagonal-with-arrowhead containers and generators.

A :class:`BtaMatrix` stores the pattern blocks of an ``N x N`` complex
matrix tiled into ``n`` diagonal blocks of size ``b``, first off-diagonal
blocks, dense arrow strips coupling every diagonal block to a trailing
tip of size ``a``, and the tip itself (``N = n*b + a``).  Setting
``a = 0`` yields a plain block-tridiagonal matrix; the arrow lists are
then empty strips and all code paths degrade gracefully.

Containers are treated as immutable once handed to a solver facade;
solvers work on copies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .kernels import COMPLEX

__all__ = [
    "BtaMatrix",
    "SelectedSolution",
    "generate_dd_bta",
    "to_dense",
    "mask_to_pattern",
    "hermitianize",
]

MODES = ("si", "siq")


class BtaMatrix:
    """Container for the pattern blocks of a BT(A) matrix.

    Parameters
    ----------
    n, b, a : int
        Number of diagonal blocks, diagonal block size, arrow tip size.
    diag : list of (b, b) arrays, length n
    lower : list of (b, b) arrays, length n-1
        Block ``(i+1, i)``.
    upper : list of (b, b) arrays, length n-1
        Block ``(i, i+1)``.
    arrow_row : list of (a, b) arrays, length n
        Block ``(t, i)`` coupling diagonal block ``i`` to the tip row.
    arrow_col : list of (b, a) arrays, length n
        Block ``(i, t)``.
    tip : (a, a) array
    """

    def __init__(self, n, b, a, diag, lower, upper, arrow_row=None, arrow_col=None, tip=None):
        if n < 1 or b < 1 or a < 0:
            raise ShapeMismatchError(f"invalid shape parameters (n={n}, b={b}, a={a})")
        self.n = int(n)
        self.b = int(b)
        self.a = int(a)
        self.diag = [np.asarray(x, dtype=COMPLEX) for x in diag]
        self.lower = [np.asarray(x, dtype=COMPLEX) for x in lower]
        self.upper = [np.asarray(x, dtype=COMPLEX) for x in upper]
        if arrow_row is None:
            arrow_row = [np.zeros((a, b), dtype=COMPLEX) for _ in range(n)]
        if arrow_col is None:
            arrow_col = [np.zeros((b, a), dtype=COMPLEX) for _ in range(n)]
        if tip is None:
            tip = np.zeros((a, a), dtype=COMPLEX)
        self.arrow_row = [np.asarray(x, dtype=COMPLEX) for x in arrow_row]
        self.arrow_col = [np.asarray(x, dtype=COMPLEX) for x in arrow_col]
        self.tip = np.asarray(tip, dtype=COMPLEX)
        self._validate()

    def _validate(self) -> None:
        n, b, a = self.n, self.b, self.a
        if len(self.diag) != n or len(self.lower) != n - 1 or len(self.upper) != n - 1:
            raise ShapeMismatchError(
                f"block counts ({len(self.diag)}, {len(self.lower)}, {len(self.upper)}) "
                f"inconsistent with n={n}"
            )
        if len(self.arrow_row) != n or len(self.arrow_col) != n:
            raise ShapeMismatchError("arrow strip counts inconsistent with n")
        for name, blocks, shape in (
            ("diag", self.diag, (b, b)),
            ("lower", self.lower, (b, b)),
            ("upper", self.upper, (b, b)),
            ("arrow_row", self.arrow_row, (a, b)),
            ("arrow_col", self.arrow_col, (b, a)),
        ):
            for i, blk in enumerate(blocks):
                if blk.shape != shape:
                    raise ShapeMismatchError(
                        f"{name}[{i}] has shape {blk.shape}, expected {shape}"
                    )
        if self.tip.shape != (a, a):
            raise ShapeMismatchError(f"tip has shape {self.tip.shape}, expected {(a, a)}")

    @property
    def shape_params(self) -> tuple[int, int, int]:
        return (self.n, self.b, self.a)

    @property
    def total_size(self) -> int:
        return self.n * self.b + self.a

    @classmethod
    def zeros(cls, n: int, b: int, a: int = 0) -> "BtaMatrix":
        return cls(
            n,
            b,
            a,
            [np.zeros((b, b), COMPLEX) for _ in range(n)],
            [np.zeros((b, b), COMPLEX) for _ in range(n - 1)],
            [np.zeros((b, b), COMPLEX) for _ in range(n - 1)],
            [np.zeros((a, b), COMPLEX) for _ in range(n)],
            [np.zeros((b, a), COMPLEX) for _ in range(n)],
            np.zeros((a, a), COMPLEX),
        )

    @classmethod
    def identity(cls, n: int, b: int, a: int = 0) -> "BtaMatrix":
        m = cls.zeros(n, b, a)
        for blk in m.diag:
            np.fill_diagonal(blk, 1.0)
        np.fill_diagonal(m.tip, 1.0)
        return m

    def copy(self) -> "BtaMatrix":
        return BtaMatrix(
            self.n,
            self.b,
            self.a,
            [x.copy() for x in self.diag],
            [x.copy() for x in self.lower],
            [x.copy() for x in self.upper],
            [x.copy() for x in self.arrow_row],
            [x.copy() for x in self.arrow_col],
            self.tip.copy(),
        )

    def pattern_blocks(self):
        """Yield ``(kind, index, block)`` over all pattern blocks."""
        for i, blk in enumerate(self.diag):
            yield ("diag", i, blk)
        for i, blk in enumerate(self.lower):
            yield ("lower", i, blk)
        for i, blk in enumerate(self.upper):
            yield ("upper", i, blk)
        for i, blk in enumerate(self.arrow_row):
            yield ("arrow_row", i, blk)
        for i, blk in enumerate(self.arrow_col):
            yield ("arrow_col", i, blk)
        yield ("tip", 0, self.tip)

    def equals_exact(self, other: "BtaMatrix") -> bool:
        if self.shape_params != other.shape_params:
            return False
        mine = list(self.pattern_blocks())
        theirs = list(other.pattern_blocks())
        return all(np.array_equal(x[2], y[2]) for x, y in zip(mine, theirs))

    def __repr__(self) -> str:
        return f"BtaMatrix(n={self.n}, b={self.b}, a={self.a})"


@dataclass
class SelectedSolution:
    """Pattern-restricted solution containers.

    ``x_a`` holds the selected entries of the inverse; ``x_b`` holds the
    selected entries of the quadratic solution and is present exactly
    when ``mode == "siq"``.
    """

    x_a: BtaMatrix
    x_b: BtaMatrix | None
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.x_b is not None) != (self.mode == "siq"):
            raise ValueError("x_b must be present exactly in 'siq' mode")
        if self.x_b is not None and self.x_b.shape_params != self.x_a.shape_params:
            raise ShapeMismatchError("x_a and x_b shapes disagree")


# ---------------------------------------------------------------------------
# Deterministic generator
# ---------------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(seed: int, offset: int, count: int) -> np.ndarray:
    """Vectorized splitmix64 stream: outputs ``count`` values starting at
    position ``offset`` of the stream for ``seed``.

    The stream is a pure function of (seed, position), identical on every
    platform; this is the repository's pinned PRNG contract.
    """
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _uniform_complex(seed: int, offset: int, shape: tuple[int, int]) -> np.ndarray:
    """Complex block with real/imag parts i.i.d. uniform in [-1, 1)."""
    count = 2 * shape[0] * shape[1]
    if count == 0:
        return np.zeros(shape, dtype=COMPLEX)
    u = _splitmix64(seed, offset, count)
    d = (u >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)  # [0, 1)
    d = 2.0 * d - 1.0
    re = d[0::2].reshape(shape)
    im = d[1::2].reshape(shape)
    return re + 1j * im


def generate_dd_bta(
    n: int, b: int, a: int, seed: int, dominance: float = 1.5
) -> BtaMatrix:
    """Generate a deterministic, diagonally dominant random BT(A) matrix.

    All pattern blocks are filled with i.i.d. complex entries whose real
    and imaginary parts are uniform in [-1, 1); then each global diagonal
    entry is shifted by ``dominance * (off-diagonal absolute row sum + 1)``
    along its own phase, so its modulus grows by exactly that amount and
    every row is strictly dominant for any ``dominance >= 1``.  The
    stream consumption order is diag, lower, upper, arrow_row, arrow_col,
    tip, so instances sharing ``(n, b, seed)`` draw identical BT blocks
    regardless of the arrow size (only the dominance shift on the
    diagonal entries sees the arrow mass).

    Deterministic: fixed ``(n, b, a, seed, dominance)`` reproduces the
    matrix bit-for-bit on any platform.
    """
    if n < 1 or b < 1 or a < 0:
        raise ValueError(f"invalid shape parameters (n={n}, b={b}, a={a})")
    if dominance < 1.0:
        raise ValueError(f"dominance must be >= 1, got {dominance}")

    offset = 0

    def draw(shape):
        nonlocal offset
        blk = _uniform_complex(seed, offset, shape)
        offset += 2 * shape[0] * shape[1]
        return blk

    diag = [draw((b, b)) for _ in range(n)]
    lower = [draw((b, b)) for _ in range(n - 1)]
    upper = [draw((b, b)) for _ in range(n - 1)]
    arrow_row = [draw((a, b)) for _ in range(n)]
    arrow_col = [draw((b, a)) for _ in range(n)]
    tip = draw((a, a))

    def shift_diagonal(block, rs):
        idx = np.arange(block.shape[0])
        d = block[idx, idx]
        mag = np.abs(d)
        phase = np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
        block[idx, idx] = d + dominance * (rs + 1.0) * phase

    for i in range(n):
        rs = np.abs(diag[i]).sum(axis=1) - np.abs(np.diagonal(diag[i]))
        if i > 0:
            rs += np.abs(lower[i - 1]).sum(axis=1)
        if i < n - 1:
            rs += np.abs(upper[i]).sum(axis=1)
        if a:
            rs += np.abs(arrow_col[i]).sum(axis=1)
        shift_diagonal(diag[i], rs)
    if a:
        rs = np.abs(tip).sum(axis=1) - np.abs(np.diagonal(tip))
        for i in range(n):
            rs += np.abs(arrow_row[i]).sum(axis=1)
        shift_diagonal(tip, rs)

    return BtaMatrix(n, b, a, diag, lower, upper, arrow_row, arrow_col, tip)


# ---------------------------------------------------------------------------
# Dense bridges
# ---------------------------------------------------------------------------


def to_dense(m: BtaMatrix) -> np.ndarray:
    """Expand to the full ``N x N`` dense array; off-pattern entries are zero."""
    n, b, a = m.shape_params
    big = np.zeros((m.total_size, m.total_size), dtype=COMPLEX)
    for i in range(n):
        big[i * b : (i + 1) * b, i * b : (i + 1) * b] = m.diag[i]
        if i < n - 1:
            big[(i + 1) * b : (i + 2) * b, i * b : (i + 1) * b] = m.lower[i]
            big[i * b : (i + 1) * b, (i + 1) * b : (i + 2) * b] = m.upper[i]
        if a:
            big[n * b :, i * b : (i + 1) * b] = m.arrow_row[i]
            big[i * b : (i + 1) * b, n * b :] = m.arrow_col[i]
    if a:
        big[n * b :, n * b :] = m.tip
    return big


def mask_to_pattern(dense: np.ndarray, shape: tuple[int, int, int]) -> BtaMatrix:
    """Copy the in-pattern entries of a dense array into a fresh container.

    Raises
    ------
    ShapeMismatchError
        If ``dense`` is not ``N x N`` with ``N = n*b + a``.
    """
    n, b, a = shape
    total = n * b + a
    dense = np.asarray(dense, dtype=COMPLEX)
    if dense.shape != (total, total):
        raise ShapeMismatchError(
            f"dense array has shape {dense.shape}, expected {(total, total)}"
        )
    diag = [dense[i * b : (i + 1) * b, i * b : (i + 1) * b].copy() for i in range(n)]
    lower = [
        dense[(i + 1) * b : (i + 2) * b, i * b : (i + 1) * b].copy() for i in range(n - 1)
    ]
    upper = [
        dense[i * b : (i + 1) * b, (i + 1) * b : (i + 2) * b].copy() for i in range(n - 1)
    ]
    arrow_row = [dense[n * b :, i * b : (i + 1) * b].copy() for i in range(n)]
    arrow_col = [dense[i * b : (i + 1) * b, n * b :].copy() for i in range(n)]
    tip = dense[n * b :, n * b :].copy()
    return BtaMatrix(n, b, a, diag, lower, upper, arrow_row, arrow_col, tip)


def hermitianize(m: BtaMatrix) -> BtaMatrix:
    """Return ``(m + m^H) / 2`` restricted to the pattern.

    The result satisfies ``upper[i] == lower[i]^H``,
    ``arrow_col[i] == arrow_row[i]^H``, and Hermitian diag and tip
    blocks, making it a structurally Hermitian right-hand side.
    """
    out = m.copy()
    for i in range(m.n):
        out.diag[i] = (m.diag[i] + m.diag[i].conj().T) / 2.0
    for i in range(m.n - 1):
        out.upper[i] = (m.upper[i] + m.lower[i].conj().T) / 2.0
        out.lower[i] = (m.lower[i] + m.upper[i].conj().T) / 2.0
    for i in range(m.n):
        out.arrow_row[i] = (m.arrow_row[i] + m.arrow_col[i].conj().T) / 2.0
        out.arrow_col[i] = (m.arrow_col[i] + m.arrow_row[i].conj().T) / 2.0
    out.tip = (m.tip + m.tip.conj().T) / 2.0
    return out

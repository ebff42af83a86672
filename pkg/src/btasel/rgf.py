"""Sequential selected inversion and fused selected quadratic solution.

The solver runs a block-sequential forward Schur-complement sweep over
the diagonal blocks (storing the inverted pivots), followed by a backward
substitution sweep that produces exactly the pattern blocks of
``X = A^-1`` and, in fused mode, of ``X = A^-1 B A^-H``.

Plain block-tridiagonal systems take the two-term recursion; arrowhead
systems extend every step with arrow-strip and tip updates, keeping the
coupling values seen at elimination time for the backward sweep.  The
backward substitution at pivot ``i`` only ever reads trailing entries
that lie on the sparsity pattern, which is what keeps the selected solve
linear in the number of diagonal blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .errors import ShapeMismatchError, SingularBlockError
from .kernels import OpCounter, block_inverse, mm
from .matrix import BtaMatrix, SelectedSolution

__all__ = [
    "RgfFactors",
    "bt_forward",
    "bt_backward",
    "bta_forward",
    "bta_backward",
    "solve_selected",
]


@dataclass
class RgfFactors:
    """Per-block Schur data retained between the forward and backward passes.

    ``s_a[i]`` is the exact inverse of the i-th updated pivot.  In fused
    mode ``s_b[i]`` holds the quadratic Schur block for ``i < n-1``; the
    last diagonal's quadratic block is formed at the start of the
    backward pass from the forward-updated ``b_diag_last``.  For
    arrowhead systems the arrow couplings as seen when block ``i`` was
    eliminated are retained, together with the inverted reduced tip.
    """

    n: int
    b: int
    a: int
    mode: str
    s_a: list = field(default_factory=list)
    s_b: list | None = None
    b_diag_last: np.ndarray | None = None
    arrow_row_elim: list | None = None
    arrow_col_elim: list | None = None
    b_arrow_row_elim: list | None = None
    b_arrow_col_elim: list | None = None
    tip_schur_inv: np.ndarray | None = None
    b_tip: np.ndarray | None = None


def _invert_pivot(block, index, counter):
    try:
        return block_inverse(block, counter)
    except SingularBlockError as exc:
        raise SingularBlockError(
            f"singular pivot at diagonal block {index} (input not diagonally dominant?)",
            index=index,
        ) from exc


# ---------------------------------------------------------------------------
# Block-tridiagonal path
# ---------------------------------------------------------------------------


def bt_forward(
    a: BtaMatrix, b: BtaMatrix | None = None, counter: OpCounter | None = None
) -> RgfFactors:
    """Forward Schur-complement pass over a block-tridiagonal system.

    ``a`` (and ``b``) are working copies updated in place; the
    non-destructive entry point is :func:`solve_selected`.  Per step the
    pivot is inverted explicitly and propagated into the next diagonal
    block; in fused mode the quadratic Schur block is formed and the next
    right-hand-side diagonal updated alongside.

    Cost: exactly 2 (selected inversion) or 8 (fused) b-sized products
    per step; off-diagonal blocks are never modified.
    """
    if a.a != 0:
        raise ShapeMismatchError("bt_forward requires a plain BT matrix (a=0)")
    if b is not None and b.shape_params != a.shape_params:
        raise ShapeMismatchError("right-hand side shape differs from system shape")
    n = a.n
    fused = b is not None
    factors = RgfFactors(n=n, b=a.b, a=0, mode="siq" if fused else "si")
    factors.s_a = [None] * n
    if fused:
        factors.s_b = [None] * max(n - 1, 0)

    for i in range(n - 1):
        s = _invert_pivot(a.diag[i], i, counter)
        factors.s_a[i] = s
        t1 = mm(a.lower[i], s, counter)
        if fused:
            w = mm(s, b.diag[i], counter)
            sb = mm(w, s, counter, tb=True)
            factors.s_b[i] = sb
            v = mm(a.lower[i], sb, counter)
            b.diag[i + 1] = (
                b.diag[i + 1]
                + mm(v, a.lower[i], counter, tb=True)
                - mm(b.lower[i], t1, counter, tb=True)
                - mm(t1, b.upper[i], counter)
            )
        a.diag[i + 1] = a.diag[i + 1] - mm(t1, a.upper[i], counter)

    factors.s_a[n - 1] = _invert_pivot(a.diag[n - 1], n - 1, counter)
    if fused:
        factors.b_diag_last = b.diag[n - 1].copy()
    return factors


def bt_backward(
    factors: RgfFactors,
    a: BtaMatrix,
    b: BtaMatrix | None = None,
    counter: OpCounter | None = None,
    *,
    diagonal_only: bool = False,
) -> SelectedSolution:
    """Backward selected substitution over a block-tridiagonal system.

    Consumes the inverted pivots and quadratic Schur blocks from
    :func:`bt_forward` together with the original off-diagonal blocks of
    ``a`` and ``b`` (the forward pass never modifies off-diagonals).
    With ``diagonal_only`` the off-diagonal solution blocks are computed
    transiently but not stored in the output containers.
    """
    n = factors.n
    if factors.a != 0:
        raise ShapeMismatchError("bt_backward requires BT factors (a=0)")
    if a.shape_params != (factors.n, factors.b, 0):
        raise ShapeMismatchError("system shape disagrees with factors")
    fused = factors.mode == "siq"
    if fused and b is None:
        raise ShapeMismatchError("fused factors require the right-hand side")
    s_a = factors.s_a

    x_a = BtaMatrix.zeros(n, factors.b, 0)
    x_b = BtaMatrix.zeros(n, factors.b, 0) if fused else None

    xd = s_a[n - 1].copy()
    x_a.diag[n - 1] = xd
    zd = None
    if fused:
        w = mm(s_a[n - 1], factors.b_diag_last, counter)
        zd = mm(w, s_a[n - 1], counter, tb=True)
        x_b.diag[n - 1] = zd

    for i in range(n - 2, -1, -1):
        s = s_a[i]
        xd_next = xd
        t_a1 = mm(s, a.upper[i], counter)
        t_a2 = mm(xd_next, a.lower[i], counter)
        x_lo = -mm(t_a2, s, counter)
        x_up = -mm(t_a1, xd_next, counter)
        xd = s - mm(t_a1, x_lo, counter)
        x_a.diag[i] = xd
        if not diagonal_only:
            x_a.lower[i] = x_lo
            x_a.upper[i] = x_up
        if fused:
            zd_next = zd
            sb = factors.s_b[i]
            t_b1 = mm(zd_next, t_a1, counter, tb=True)
            t_b2 = mm(sb, t_a2, counter, tb=True)
            t_b3 = mm(t_a2, sb, counter)
            t_b4 = mm(mm(s, b.upper[i], counter), xd_next, counter, tb=True)
            t_b5 = mm(mm(xd_next, b.lower[i], counter), s, counter, tb=True)
            xb_up = -mm(t_a1, zd_next, counter) - t_b2 + t_b4
            xb_lo = -t_b1 - t_b3 + t_b5
            zd = (
                sb
                + mm(t_a1, t_b1, counter)
                + mm(t_a1, t_b3, counter)
                + mm(t_b2, t_a1, counter, tb=True)
                - mm(t_a1, t_b5, counter)
                - mm(t_b4, t_a1, counter, tb=True)
            )
            x_b.diag[i] = zd
            if not diagonal_only:
                x_b.lower[i] = xb_lo
                x_b.upper[i] = xb_up

    return SelectedSolution(x_a=x_a, x_b=x_b, mode=factors.mode)


# ---------------------------------------------------------------------------
# Arrowhead path
# ---------------------------------------------------------------------------


def bta_forward(
    a: BtaMatrix, b: BtaMatrix | None = None, counter: OpCounter | None = None
) -> RgfFactors:
    """Forward Schur-complement pass over an arrowhead system.

    Eliminates diagonal blocks top-down, propagating updates into the
    next diagonal block, the next arrow strips, and the tip, all
    restricted to the a-priori nonzero positions.  After the loop the
    final diagonal block is eliminated into the tip and the updated tip
    is inverted.  ``a = 0`` inputs delegate to :func:`bt_forward`
    bit-for-bit.

    Cost per interior step: 2/1/2/1 (selected inversion) or 8/5/5/4
    (fused) products of shape classes bbb/abb/bba/aba.
    """
    if a.a == 0:
        return bt_forward(a, b, counter)
    if b is not None and b.shape_params != a.shape_params:
        raise ShapeMismatchError("right-hand side shape differs from system shape")
    n = a.n
    fused = b is not None
    factors = RgfFactors(n=n, b=a.b, a=a.a, mode="siq" if fused else "si")
    factors.s_a = [None] * n
    factors.arrow_row_elim = [None] * n
    factors.arrow_col_elim = [None] * n
    if fused:
        factors.s_b = [None] * max(n - 1, 0)
        factors.b_arrow_row_elim = [None] * n
        factors.b_arrow_col_elim = [None] * n

    for i in range(n - 1):
        s = _invert_pivot(a.diag[i], i, counter)
        factors.s_a[i] = s
        factors.arrow_row_elim[i] = a.arrow_row[i]
        factors.arrow_col_elim[i] = a.arrow_col[i]
        if fused:
            factors.b_arrow_row_elim[i] = b.arrow_row[i]
            factors.b_arrow_col_elim[i] = b.arrow_col[i]
            # Left-hand elimination factors shared by all fused updates.
            w = mm(s, b.diag[i], counter)
            sb = mm(w, s, counter, tb=True)
            factors.s_b[i] = sb
            f = mm(a.lower[i], s, counter)
            g = mm(a.arrow_row[i], s, counter)
            p = mm(g, b.diag[i], counter)
            k = mm(b.diag[i], g, counter, tb=True)
            a.diag[i + 1] = a.diag[i + 1] - mm(f, a.upper[i], counter)
            a.arrow_row[i + 1] = a.arrow_row[i + 1] - mm(g, a.upper[i], counter)
            a.arrow_col[i + 1] = a.arrow_col[i + 1] - mm(f, a.arrow_col[i], counter)
            a.tip = a.tip - mm(g, a.arrow_col[i], counter)
            v = mm(a.lower[i], sb, counter)
            b.diag[i + 1] = (
                b.diag[i + 1]
                + mm(v, a.lower[i], counter, tb=True)
                - mm(b.lower[i], f, counter, tb=True)
                - mm(f, b.upper[i], counter)
            )
            b.arrow_row[i + 1] = (
                b.arrow_row[i + 1]
                - mm(g, b.upper[i], counter)
                + mm(p - b.arrow_row[i], f, counter, tb=True)
            )
            b.arrow_col[i + 1] = (
                b.arrow_col[i + 1]
                - mm(f, b.arrow_col[i], counter)
                - mm(b.lower[i], g, counter, tb=True)
                + mm(f, k, counter)
            )
            b.tip = (
                b.tip
                - mm(g, b.arrow_col[i], counter)
                - mm(b.arrow_row[i], g, counter, tb=True)
                + mm(p, g, counter, tb=True)
            )
        else:
            # Right-hand temporaries reach the minimal mixed-shape count.
            t1 = mm(s, a.upper[i], counter)
            t2 = mm(s, a.arrow_col[i], counter)
            a.diag[i + 1] = a.diag[i + 1] - mm(a.lower[i], t1, counter)
            a.arrow_row[i + 1] = a.arrow_row[i + 1] - mm(a.arrow_row[i], t1, counter)
            a.arrow_col[i + 1] = a.arrow_col[i + 1] - mm(a.lower[i], t2, counter)
            a.tip = a.tip - mm(a.arrow_row[i], t2, counter)

    # Epilogue: eliminate the last diagonal block into the tip, invert it.
    i = n - 1
    s = _invert_pivot(a.diag[i], i, counter)
    factors.s_a[i] = s
    factors.arrow_row_elim[i] = a.arrow_row[i]
    factors.arrow_col_elim[i] = a.arrow_col[i]
    if fused:
        factors.b_arrow_row_elim[i] = b.arrow_row[i]
        factors.b_arrow_col_elim[i] = b.arrow_col[i]
        factors.b_diag_last = b.diag[i].copy()
        g = mm(a.arrow_row[i], s, counter)
        p = mm(g, b.diag[i], counter)
        a.tip = a.tip - mm(g, a.arrow_col[i], counter)
        b.tip = (
            b.tip
            - mm(g, b.arrow_col[i], counter)
            - mm(b.arrow_row[i], g, counter, tb=True)
            + mm(p, g, counter, tb=True)
        )
        factors.b_tip = b.tip.copy()
    else:
        t2 = mm(s, a.arrow_col[i], counter)
        a.tip = a.tip - mm(a.arrow_row[i], t2, counter)
    try:
        factors.tip_schur_inv = block_inverse(a.tip, counter)
    except SingularBlockError as exc:
        raise SingularBlockError(
            "singular updated arrow tip (input not diagonally dominant?)", index=n
        ) from exc
    return factors


def _backstep(g, rs, qs, ya, sc=None, ss=None, ws=None, yb=None, counter=None):
    """One backward substitution step at a pivot with trailing couplings.

    ``rs[l]``/``qs[l]`` are the pivot-to-trailing and trailing-to-pivot
    coupling blocks as seen at elimination time; ``ya[l][m]`` (and
    ``yb``) are the already-known trailing solution blocks.  Returns the
    pivot's solution row, column, and diagonal for the inverse and, when
    the quadratic data ``sc``/``ss``/``ws``/``yb`` is given, for the
    quadratic solution.

    All products are pattern-restricted: the trailing blocks touched are
    exactly those on the BT(A) pattern of the (possibly permuted) system.
    """
    k = len(rs)
    c = counter

    xa_row = []
    for j in range(k):
        acc = mm(rs[0], ya[0][j], c)
        for l in range(1, k):
            acc = acc + mm(rs[l], ya[l][j], c)
        xa_row.append(-mm(g, acc, c))
    xa_col = []
    for j in range(k):
        acc = mm(ya[j][0], qs[0], c)
        for l in range(1, k):
            acc = acc + mm(ya[j][l], qs[l], c)
        xa_col.append(-mm(acc, g, c))
    phi = -mm(xa_row[0], qs[0], c)
    for l in range(1, k):
        phi = phi - mm(xa_row[l], qs[l], c)
    xa_diag = g + mm(phi, g, c)

    if yb is None:
        return xa_row, xa_col, xa_diag, None, None, None

    # Row and column helpers combining quadratic Schur data with couplings.
    es = [mm(g, ss[l], c) - mm(sc, qs[l], c, tb=True) for l in range(k)]
    fs = [mm(ws[l], g, c, tb=True) - mm(qs[l], sc, c) for l in range(k)]

    xb_row = []
    for j in range(k):
        acc = mm(es[0], ya[j][0], c, tb=True)
        for l in range(1, k):
            acc = acc + mm(es[l], ya[j][l], c, tb=True)
        accz = mm(rs[0], yb[0][j], c)
        for l in range(1, k):
            accz = accz + mm(rs[l], yb[l][j], c)
        xb_row.append(acc - mm(g, accz, c))
    xb_col = []
    for j in range(k):
        acc = mm(ya[j][0], fs[0], c)
        for l in range(1, k):
            acc = acc + mm(ya[j][l], fs[l], c)
        accz = mm(yb[j][0], rs[0], c, tb=True)
        for l in range(1, k):
            accz = accz + mm(yb[j][l], rs[l], c, tb=True)
        xb_col.append(acc - mm(accz, g, c, tb=True))

    xb_diag = sc + mm(phi, sc, c) + mm(sc, phi, c, tb=True)
    acc = mm(ss[0], xa_row[0], c, tb=True)
    for l in range(1, k):
        acc = acc + mm(ss[l], xa_row[l], c, tb=True)
    xb_diag = xb_diag + mm(g, acc, c)
    acc = mm(xa_row[0], ws[0], c)
    for l in range(1, k):
        acc = acc + mm(xa_row[l], ws[l], c)
    xb_diag = xb_diag + mm(acc, g, c, tb=True)
    quad = None
    for l in range(k):
        inner = mm(yb[l][0], rs[0], c, tb=True)
        for m in range(1, k):
            inner = inner + mm(yb[l][m], rs[m], c, tb=True)
        term = mm(rs[l], inner, c)
        quad = term if quad is None else quad + term
    xb_diag = xb_diag + mm(mm(g, quad, c), g, c, tb=True)
    return xa_row, xa_col, xa_diag, xb_row, xb_col, xb_diag


def bta_backward(
    factors: RgfFactors,
    a: BtaMatrix,
    b: BtaMatrix | None = None,
    counter: OpCounter | None = None,
    *,
    diagonal_only: bool = False,
) -> SelectedSolution:
    """Backward selected substitution over an arrowhead system.

    Starts from the inverted reduced tip and steps backward through the
    diagonal blocks, producing every pattern block of the solution(s):
    diagonal, first off-diagonals, arrow strips, and tip.  ``a = 0``
    factors delegate to :func:`bt_backward`.
    """
    if factors.a == 0:
        return bt_backward(factors, a, b, counter, diagonal_only=diagonal_only)
    n = factors.n
    if a.shape_params != (factors.n, factors.b, factors.a):
        raise ShapeMismatchError("system shape disagrees with factors")
    fused = factors.mode == "siq"
    if fused and b is None:
        raise ShapeMismatchError("fused factors require the right-hand side")

    x_a = BtaMatrix.zeros(n, factors.b, factors.a)
    x_b = BtaMatrix.zeros(n, factors.b, factors.a) if fused else None

    ytt = factors.tip_schur_inv
    x_a.tip = ytt.copy()
    ztt = None
    if fused:
        w = mm(ytt, factors.b_tip, counter)
        ztt = mm(w, ytt, counter, tb=True)
        x_b.tip = ztt.copy()

    # Trailing state: the previously computed diagonal row/column blocks.
    y_dd = y_dt = y_td = None
    z_dd = z_dt = z_td = None

    for i in range(n - 1, -1, -1):
        if i == n - 1:
            rs = [factors.arrow_col_elim[i]]
            qs = [factors.arrow_row_elim[i]]
            ya = [[ytt]]
            if fused:
                ss = [factors.b_arrow_col_elim[i]]
                ws = [factors.b_arrow_row_elim[i]]
                yb = [[ztt]]
                sc = mm(
                    mm(factors.s_a[i], factors.b_diag_last, counter),
                    factors.s_a[i],
                    counter,
                    tb=True,
                )
            else:
                ss = ws = yb = sc = None
        else:
            rs = [a.upper[i], factors.arrow_col_elim[i]]
            qs = [a.lower[i], factors.arrow_row_elim[i]]
            ya = [[y_dd, y_dt], [y_td, ytt]]
            if fused:
                ss = [b.upper[i], factors.b_arrow_col_elim[i]]
                ws = [b.lower[i], factors.b_arrow_row_elim[i]]
                yb = [[z_dd, z_dt], [z_td, ztt]]
                sc = factors.s_b[i]
            else:
                ss = ws = yb = sc = None

        xa_row, xa_col, xa_diag, xb_row, xb_col, xb_diag = _backstep(
            factors.s_a[i], rs, qs, ya, sc, ss, ws, yb, counter
        )

        x_a.diag[i] = xa_diag
        x_a.arrow_col[i] = xa_row[-1]
        x_a.arrow_row[i] = xa_col[-1]
        if i < n - 1 and not diagonal_only:
            x_a.upper[i] = xa_row[0]
            x_a.lower[i] = xa_col[0]
        y_dd, y_dt, y_td = xa_diag, xa_row[-1], xa_col[-1]
        if fused:
            x_b.diag[i] = xb_diag
            x_b.arrow_col[i] = xb_row[-1]
            x_b.arrow_row[i] = xb_col[-1]
            if i < n - 1 and not diagonal_only:
                x_b.upper[i] = xb_row[0]
                x_b.lower[i] = xb_col[0]
            z_dd, z_dt, z_td = xb_diag, xb_row[-1], xb_col[-1]

    return SelectedSolution(x_a=x_a, x_b=x_b, mode=factors.mode)


# ---------------------------------------------------------------------------
# Facade
# ---------------------------------------------------------------------------


def solve_selected(
    a: BtaMatrix,
    b: BtaMatrix | None = None,
    mode: str | None = None,
    *,
    counter: OpCounter | None = None,
    timings: dict | None = None,
    diagonal_only: bool = False,
) -> SelectedSolution:
    """Compute the selected inverse of ``a`` and, in fused mode, the
    selected quadratic solution for the right-hand side ``b``.

    Dispatches on the arrow size (plain BT vs. arrowhead) and never
    mutates its inputs.  ``mode`` defaults to ``"siq"`` when ``b`` is
    given and ``"si"`` otherwise; ``timings``, when provided, receives
    the wall-clock seconds of the forward and backward sweeps.
    """
    if mode is None:
        mode = "si" if b is None else "siq"
    if mode not in ("si", "siq"):
        raise ValueError(f"mode must be 'si' or 'siq', got {mode!r}")
    if mode == "siq" and b is None:
        raise ValueError("mode 'siq' requires a right-hand side")
    rhs = b.copy() if (b is not None and mode == "siq") else None
    work = a.copy()

    t0 = perf_counter()
    factors = bta_forward(work, rhs, counter)
    t1 = perf_counter()
    sol = bta_backward(factors, work, rhs, counter, diagonal_only=diagonal_only)
    t2 = perf_counter()
    if timings is not None:
        timings["forward"] = t1 - t0
        timings["backward"] = t2 - t1
    return sol

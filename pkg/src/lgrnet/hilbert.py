"""Flattening curves over 2-D grids and their locality metrics.

Two curve families are provided:

* ``zigzag`` - plain row-major order.
* ``hilbert`` - generalized ("pseudo") Hilbert curve for arbitrary
  rectangles, built by recursive rectangle splitting.  On ``2^n x 2^n``
  grids it reduces to the classical order-n Hilbert curve.

Locality is measured by the space-to-linear ratio of two curve positions
(squared Euclidean distance of the cells over their index gap) and the
dilation factor, its maximum over all pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

CurveKind = Literal["hilbert", "zigzag"]

EXACT_DF_LIMIT = 4096
DF_SAMPLE_PAIRS = 1_000_000


@dataclass(frozen=True)
class Curve:
    width: int
    height: int
    points: np.ndarray  # (width*height, 2) int array of (row, col)
    kind: str

    def __len__(self) -> int:
        return len(self.points)

    def as_list(self) -> list[tuple[int, int]]:
        return [(int(r), int(c)) for r, c in self.points]


def _check_extents(width: int, height: int) -> None:
    if width < 1 or height < 1:
        raise ValueError(f"grid extents must be >= 1, got {width}x{height}")


def zigzag_curve(width: int, height: int) -> Curve:
    _check_extents(width, height)
    rows, cols = np.divmod(np.arange(width * height), width)
    return Curve(width, height, np.stack([rows, cols], axis=1), "zigzag")


def _sgn(v: int) -> int:
    return (v > 0) - (v < 0)


def _gilbert(x: int, y: int, ax: int, ay: int, bx: int, by: int, out: list) -> None:
    # (ax, ay): major axis vector, (bx, by): minor axis vector; x is column, y is row
    w = abs(ax + ay)
    h = abs(bx + by)
    dax, day = _sgn(ax), _sgn(ay)
    dbx, dby = _sgn(bx), _sgn(by)

    if h == 1:
        for _ in range(w):
            out.append((y, x))
            x, y = x + dax, y + day
        return
    if w == 1:
        for _ in range(h):
            out.append((y, x))
            x, y = x + dbx, y + dby
        return

    ax2, ay2 = ax // 2, ay // 2
    bx2, by2 = bx // 2, by // 2
    w2 = abs(ax2 + ay2)
    h2 = abs(bx2 + by2)

    if 2 * w > 3 * h:
        if w2 % 2 and w > 2:
            ax2, ay2 = ax2 + dax, ay2 + day
        _gilbert(x, y, ax2, ay2, bx, by, out)
        _gilbert(x + ax2, y + ay2, ax - ax2, ay - ay2, bx, by, out)
    else:
        if h2 % 2 and h > 2:
            bx2, by2 = bx2 + dbx, by2 + dby
        _gilbert(x, y, bx2, by2, ax2, ay2, out)
        _gilbert(x + bx2, y + by2, ax, ay, bx - bx2, by - by2, out)
        _gilbert(x + (ax - dax) + (bx2 - dbx), y + (ay - day) + (by2 - dby),
                 -bx2, -by2, -(ax - ax2), -(ay - ay2), out)


def _gilbert_points(width: int, height: int, along_width: bool) -> np.ndarray:
    out: list[tuple[int, int]] = []
    if along_width:
        _gilbert(0, 0, width, 0, 0, height, out)
    else:
        _gilbert(0, 0, 0, height, width, 0, out)
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def _diagonal_steps(points: np.ndarray) -> int:
    return int((np.abs(np.diff(points, axis=0)).sum(axis=1) != 1).sum())


def hilbert_curve(width: int, height: int) -> Curve:
    """Generalized Hilbert curve over a ``height x width`` grid, starting at (0, 0).

    The recursion runs along the longer side.  When that side is odd and
    the other even, a corner-to-corner unit-step path along it cannot
    exist (checkerboard parity), so the curve runs along the shorter side
    instead; this keeps every step of unit Manhattan length.
    """
    _check_extents(width, height)
    primary = width >= height
    pts = _gilbert_points(width, height, primary)
    if _diagonal_steps(pts):
        alt = _gilbert_points(width, height, not primary)
        if _diagonal_steps(alt) < _diagonal_steps(pts):
            pts = alt
    return Curve(width, height, pts, "hilbert")


def make_curve(kind: str, width: int, height: int) -> Curve:
    if kind == "hilbert":
        return hilbert_curve(width, height)
    if kind == "zigzag":
        return zigzag_curve(width, height)
    raise ValueError(f"unknown curve kind {kind!r}")


def flatten_indices(curve: Curve) -> np.ndarray:
    """``perm[p]`` = row-major cell index visited at curve position ``p``."""
    return curve.points[:, 0] * curve.width + curve.points[:, 1]


def inverse_indices(curve: Curve) -> np.ndarray:
    """``inv[cell]`` = curve position of row-major cell ``cell``."""
    perm = flatten_indices(curve)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


def slr(curve: Curve, i: int, j: int) -> float:
    n = len(curve)
    if i == j:
        raise ValueError("SLR is undefined for identical indices")
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"indices ({i}, {j}) outside curve of length {n}")
    d = curve.points[i] - curve.points[j]
    return float(d @ d) / abs(i - j)


@dataclass(frozen=True)
class Dilation:
    df: float
    argmax_pair: tuple[int, int]
    exact: bool

    def as_dict(self) -> dict:
        return {"df": self.df, "argmax_pair": list(self.argmax_pair), "exact": self.exact}


def dilation_factor(curve: Curve, method: str = "auto", n_pairs: int = DF_SAMPLE_PAIRS,
                    seed: int = 0) -> Dilation:
    """Maximum SLR over index pairs.

    ``method="auto"`` is exhaustive up to ``EXACT_DF_LIMIT`` points and
    samples ``n_pairs`` seeded pairs beyond that; a sampled result is a
    lower bound and carries ``exact=False``.
    """
    pts = curve.points.astype(np.float64)
    n = len(pts)
    if n < 2:
        raise ValueError("dilation factor needs at least 2 points")
    if method == "auto":
        method = "exact" if n <= EXACT_DF_LIMIT else "sampled"
    if method == "exact":
        best, pair = -1.0, (0, 1)
        for gap in range(1, n):
            d = pts[gap:] - pts[:-gap]
            r = (d * d).sum(axis=1) / gap
            k = int(np.argmax(r))
            if r[k] > best:
                best, pair = float(r[k]), (k, k + gap)
        return Dilation(best, pair, True)
    if method == "sampled":
        gen = np.random.Generator(np.random.Philox(seed))
        i = gen.integers(0, n, size=n_pairs)
        j = gen.integers(0, n - 1, size=n_pairs)
        j = np.where(j >= i, j + 1, j)
        d = pts[i] - pts[j]
        r = (d * d).sum(axis=1) / np.abs(i - j)
        k = int(np.argmax(r))
        lo, hi = sorted((int(i[k]), int(j[k])))
        return Dilation(float(r[k]), (lo, hi), False)
    raise ValueError(f"unknown method {method!r}")


def zigzag_df_formula(n: int) -> int:
    """Closed form 4^n - 2^(n+1) + 2 for zigzag on a ``2^n x 2^n`` grid."""
    return 4**n - 2 ** (n + 1) + 2


def to_csv(curve: Curve) -> str:
    lines = ["pos,row,col"]
    lines += [f"{p},{r},{c}" for p, (r, c) in enumerate(curve.as_list())]
    return "\n".join(lines) + "\n"


def to_svg(curve: Curve, cell: int = 20) -> str:
    w, h = curve.width * cell, curve.height * cell
    coords = " ".join(f"{c * cell + cell // 2},{r * cell + cell // 2}" for r, c in curve.as_list())
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n'
        f'  <rect width="{w}" height="{h}" fill="white"/>\n'
        f'  <polyline points="{coords}" fill="none" stroke="black" stroke-width="2"/>\n'
        "</svg>\n"
    )

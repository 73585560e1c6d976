"""Finite-difference oracle for the coupled operator and the scalar one.

Second-order centered stencils for ``d/dx`` and ``d^3/dx^3`` on a uniform
grid, with one-sided closures in the boundary rows where the centered
third-derivative stencil would need a ghost node:

* at an end carrying only a Dirichlet condition, a 5-point one-sided
  stencil;
* at an end carrying Dirichlet and Neumann conditions, a Hermite stencil
  fed by four nodal values and the (zero) boundary slope.

Both closures are second order.  With this combination the low end of
the scalar spectrum stays real; a wider Hermite closure produced spurious
complex pairs well inside the resolved range.

Only interior node values are carried in state vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceFailure, GridTooCoarse

MIN_POINTS = 16

_CENTERED_D3 = {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5}
_CENTERED_D1 = {-1: -0.5, 1: 0.5}


@dataclass(frozen=True)
class Grid:
    L: float
    n_points: int

    def __post_init__(self):
        if self.n_points < MIN_POINTS:
            raise GridTooCoarse(f"need at least {MIN_POINTS} interior points, got {self.n_points}")
        if self.L <= 0:
            raise ValueError("L must be positive")

    @property
    def h(self) -> float:
        return self.L / (self.n_points + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_points + 1)

    def inner(self, u, v) -> complex:
        """Discrete L2 inner product (conjugate-linear in ``v``)."""
        return complex(self.h * np.vdot(v, u))

    def norm(self, u) -> float:
        return float(np.sqrt(self.h * np.vdot(u, u).real))


@dataclass(frozen=True)
class DiscreteOperator:
    grid: Grid
    kind: str  # "A_coupled" | "B_scalar"
    matrix: np.ndarray

    def __matmul__(self, other):
        return self.matrix @ other

    def inner(self, u, v) -> complex:
        return self.grid.inner(u, v)

    def norm_2(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


@lru_cache(maxsize=None)
def _taylor_weights(offsets: tuple, slope_offsets: tuple, order: int) -> tuple:
    """Weights for ``h**order * f^(order)(0)`` from values at ``offsets*h``
    and slopes ``h * f'`` at ``slope_offsets*h``."""
    m = len(offsets) + len(slope_offsets)
    cols = [[o**k / math.factorial(k) for k in range(m)] for o in offsets]
    cols += [[0.0] + [o ** (k - 1) / math.factorial(k - 1) for k in range(1, m)] for o in slope_offsets]
    rhs = np.zeros(m)
    rhs[order] = 1.0
    w = np.linalg.solve(np.array(cols, dtype=float).T, rhs)
    return tuple(w[: len(offsets)])


def _closure(side: str, kind: str) -> dict:
    # kind "D": value only; "DN": value and slope
    if side == "left":
        if kind == "D":
            offs = (-1, 0, 1, 2, 3)
            w = _taylor_weights(offs, (), 3)
        else:
            offs = (-1, 0, 1, 2)
            w = _taylor_weights(offs, (-1,), 3)
    else:
        if kind == "D":
            offs = (-3, -2, -1, 0, 1)
            w = _taylor_weights(offs, (), 3)
        else:
            offs = (-2, -1, 0, 1)
            w = _taylor_weights(offs, (1,), 3)
    return dict(zip(offs, w))


def kdv_matrix(grid: Grid, left: str, right: str) -> np.ndarray:
    """Discretization of ``y -> y''' + y'`` with homogeneous boundary data.

    ``left``/``right`` are ``"D"`` (``y = 0``) or ``"DN"`` (``y = y' = 0``).
    """
    n, h = grid.n_points, grid.h
    M = np.zeros((n, n))
    lclose = _closure("left", left)
    rclose = _closure("right", right)
    for i in range(1, n + 1):
        if i - 2 < 0:
            st3 = lclose
        elif i + 2 > n + 1:
            st3 = rclose
        else:
            st3 = _CENTERED_D3
        for off, w in st3.items():
            j = i + off
            if 1 <= j <= n:
                M[i - 1, j - 1] += w / h**3
        for off, w in _CENTERED_D1.items():
            j = i + off
            if 1 <= j <= n:
                M[i - 1, j - 1] += w / h
    return M


def build_discrete_A(grid: Grid) -> DiscreteOperator:
    """``A(eta, w) = (-w' - w''', -eta' - eta''')`` on stacked interior values.

    Boundary data: ``eta(0) = eta(L) = eta'(0) = 0`` and
    ``w(0) = w(L) = w'(L) = 0``.
    """
    q_eta = kdv_matrix(grid, "DN", "D")
    q_w = kdv_matrix(grid, "D", "DN")
    n = grid.n_points
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = -q_w
    A[n:, :n] = -q_eta
    return DiscreteOperator(grid, "A_coupled", A)


def build_discrete_B_op(grid: Grid) -> DiscreteOperator:
    """``(By)(x) = -(y''' + y')(L - x)`` with ``y(0) = y(L) = y'(L) = 0``.

    The uniform interior grid is symmetric under ``x -> L - x``, so the
    reflection is an exact row reversal.
    """
    q = kdv_matrix(grid, "D", "DN")
    return DiscreteOperator(grid, "B_scalar", -q[::-1].copy())


def discrete_eigs(op: DiscreteOperator, count: int) -> list[tuple[complex, np.ndarray]]:
    """Eigenpairs sorted by ``|eigenvalue|``, vectors unit in discrete L2.

    For the scalar operator real eigenvectors are returned (phase removed);
    otherwise the first largest-modulus entry is made real positive.
    """
    dim = op.matrix.shape[0]
    if count > dim:
        raise ValueError(f"count={count} exceeds matrix dimension {dim}")
    try:
        vals, vecs = np.linalg.eig(op.matrix)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceFailure(str(exc)) from exc
    order = np.lexsort((vals.imag, vals.real, np.abs(vals)))[:count]
    h = op.grid.h
    out = []
    for k in order:
        v = vecs[:, k]
        v = v / np.sqrt(h * np.vdot(v, v).real)
        v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
        if op.kind == "B_scalar" and abs(vals[k].imag) <= 1e-9 * max(1.0, abs(vals[k])):
            v = v.real
        out.append((complex(vals[k]), v))
    return out


def boundary_slope(values, grid: Grid, side: str) -> complex:
    """Second-order one-sided slope at ``x = 0`` or ``x = L`` of a function
    vanishing there."""
    y = np.asarray(values)
    h = grid.h
    if side == "left":
        return (4 * y[0] - y[1]) / (2 * h)
    return (-4 * y[-1] + y[-2]) / (2 * h)


def domain_test_functions(grid: Grid, kind: str, count: int = 4) -> list[np.ndarray]:
    """Smooth polynomials satisfying the operator's boundary conditions."""
    x, L = grid.nodes, grid.L
    out = []
    for k in range(count):
        p = (x / L) ** k
        if kind == "B_scalar":
            out.append(x * (L - x) ** 2 * p / L**3)
        else:
            eta = x**2 * (L - x) * p / L**3
            w = x * (L - x) ** 2 * (1 - x / L) ** k / L**3
            out.append(np.concatenate([eta, w]))
    return out


def symmetry_defect(op: DiscreteOperator, tests=None) -> dict:
    """Weak (skew-)symmetry defect on smooth domain functions.

    For the scalar operator measures ``(Mu, v) - (u, Mv)``; for the coupled
    operator ``(Mu, v) + (u, Mv)``.  Both vanish in the continuum limit on
    the domain.  Returns the worst absolute defect and the defect relative
    to ``||M||_2 ||u|| ||v||``.
    """
    tests = domain_test_functions(op.grid, op.kind) if tests is None else tests
    sgn = -1.0 if op.kind == "B_scalar" else 1.0
    nrm = op.norm_2()
    g = op.grid
    worst_abs = worst_rel = 0.0
    for u in tests:
        Mu = op.matrix @ u
        for v in tests:
            d = abs(g.inner(Mu, v) + sgn * g.inner(u, op.matrix @ v))
            worst_abs = max(worst_abs, d)
            worst_rel = max(worst_rel, d / (nrm * g.norm(u) * g.norm(v)))
    return {"absolute": worst_abs, "relative": worst_rel, "operator_norm": nrm}

"""Exact eigenpairs of the reflected KdV operator.

The scalar operator is ``(By)(x) = -y'''(L - x) - y'(L - x)`` on
``y(0) = y(L) = y'(L) = 0``.  Its eigenfunctions are sought as

    v(x) = sum_j a_j [exp(r_j x) - i exp(r_j (L - x))]

where the three ``r_j`` solve ``r**3 + r = i*lam``.  The boundary
conditions give a 3x3 linear system in ``a``; eigenvalues are the real
zeros of its determinant.

All exponentials are evaluated in a scaled form: the column belonging to a
root with ``Re r > 0`` is multiplied by ``exp(-Re(r) L)``, so every
quantity stored or evaluated stays bounded by O(1) regardless of how fast
``exp(r L)`` grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BracketFailure, DegenerateRoots, SpectrumError, ZeroNorm

#: |lam| at which the characteristic cubic has a double root.
DEGENERATE_LAMBDA = 2.0 / (3.0 * math.sqrt(3.0))

ROOT_RTOL = 1e-10
DET_TOL = 1e-9
DEGENERATE_TOL = 1e-8


# ---------------------------------------------------------------------------
# characteristic roots


def _polish(r: np.ndarray, lam: np.ndarray) -> np.ndarray:
    target = 1j * lam[..., None]
    for _ in range(3):
        f = r**3 + r - target
        fp = 3.0 * r**2 + 1.0
        ok = np.abs(fp) > 0
        r = np.where(ok, r - f / np.where(ok, fp, 1.0), r)
    return r


def _order(r: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Order roots along the large-|lam| branches.

    r1 is the oscillatory root (~ -i lam**(1/3)), r2 the root whose real
    part carries the sign of lam, r3 the remaining one.
    """
    sgn = np.where(lam >= 0, 1.0, -1.0)
    i1 = np.argmax(-sgn[:, None] * r.imag, axis=1)
    r1 = np.take_along_axis(r, i1[:, None], axis=1)[:, 0]
    # the two remaining roots
    keep = np.ones(r.shape, dtype=bool)
    keep[np.arange(r.shape[0]), i1] = False
    rest = r[keep].reshape(-1, 2)
    p, q = rest[:, 0], rest[:, 1]
    scale = np.maximum(1.0, np.abs(rest).max(axis=1))
    dre = sgn * (p.real - q.real)
    tie = np.abs(p.real - q.real) <= 1e-12 * scale
    p_first = np.where(tie, p.imag >= q.imag, dre > 0)
    r2 = np.where(p_first, p, q)
    r3 = np.where(p_first, q, p)
    return np.stack([r1, r2, r3], axis=1)


def _roots_batch(lams: np.ndarray) -> np.ndarray:
    lams = np.asarray(lams, dtype=float)
    comp = np.zeros((lams.size, 3, 3), dtype=complex)
    comp[:, 0, 1] = -1.0
    comp[:, 0, 2] = 1j * lams
    comp[:, 1, 0] = 1.0
    comp[:, 2, 1] = 1.0
    r = np.linalg.eigvals(comp)
    r = _polish(r, lams)
    return _order(r, lams)


def char_roots(lam: float, tol: float = DEGENERATE_TOL) -> np.ndarray:
    """Roots of ``r**3 + r - i*lam = 0``, ordered by asymptotic branch.

    As ``lam -> +inf`` the returned roots track ``-i c``,
    ``(sqrt(3)/2 + i/2) c`` and ``(-sqrt(3)/2 + i/2) c`` with
    ``c = lam**(1/3)``.

    Raises
    ------
    DegenerateRoots
        If ``|27 lam**2 - 4| <= tol`` (double root; the exponential ansatz
        is not a basis there).
    """
    lam = float(lam)
    if not math.isfinite(lam):
        raise ValueError(f"lambda must be finite, got {lam!r}")
    if abs(27.0 * lam * lam - 4.0) <= tol:
        raise DegenerateRoots(f"cubic discriminant vanishes at lambda={lam!r}")
    return _roots_batch(np.array([lam]))[0]


# ---------------------------------------------------------------------------
# boundary system


def _shifts(roots: np.ndarray, L: float) -> np.ndarray:
    return np.maximum(np.real(roots), 0.0) * L


def boundary_matrix(roots, L: float, scaled: bool = True) -> np.ndarray:
    """3x3 boundary-condition matrix acting on the ansatz coefficients.

    Rows encode ``v(L) = 0``, ``v(0) = 0`` and ``v'(L) = 0``.  With
    ``scaled=True`` column ``j`` is multiplied by ``exp(-max(Re r_j, 0) L)``,
    which keeps every entry bounded; rows are left unscaled so the third row
    grows like ``|r_j|``.
    """
    r = np.asarray(roots, dtype=complex)
    shift = _shifts(r, L) if scaled else np.zeros(r.shape)
    e = np.exp(r * L - shift)
    m = np.exp(-shift)
    return np.stack([e - 1j * m, m - 1j * e, r * (e + 1j * m)], axis=-2)


def _normalized_matrix(roots, L):
    M = boundary_matrix(roots, L)
    rmax = np.maximum(1.0, np.abs(roots).max(axis=-1))
    M[..., 2, :] /= rmax[..., None]
    return M


def _det_batch(lams, L):
    roots = _roots_batch(lams)
    return np.linalg.det(_normalized_matrix(roots, L))


def dispersion_det(lam: float, L: float) -> complex:
    """Scaled determinant of the boundary system.

    Its real zeros are exactly the eigenvalues.  Columns are scaled as in
    :func:`boundary_matrix` and the third row is divided by
    ``max(1, max|r_j|)``; both factors are continuous in ``lam`` so ``|det|``
    is continuous (its sign flips with the root relabelling at ``lam = 0``).
    """
    roots = char_roots(lam)
    return complex(np.linalg.det(_normalized_matrix(roots, L)))


# ---------------------------------------------------------------------------
# eigenmodes


@dataclass(frozen=True)
class EigenMode:
    """One normalized eigenpair of the reflected operator.

    ``coeffs`` are the ansatz coefficients ``a_j``; ``scaled_coeffs`` are
    ``a_j * exp(max(Re r_j, 0) L)``, which is what all evaluation uses.
    """

    n: int
    lam: float
    roots: np.ndarray
    coeffs: np.ndarray
    scaled_coeffs: np.ndarray
    L: float
    trace_vp0: complex = 0j
    trace_vpL: complex = 0j
    residual: float = 0.0

    @property
    def shifts(self) -> np.ndarray:
        return _shifts(self.roots, self.L)

    def evaluate(self, x, deriv: int = 0) -> np.ndarray:
        """Sample the k-th derivative of the eigenfunction at ``x``."""
        x = np.asarray(x, dtype=float)
        r, at, s = self.roots, self.scaled_coeffs, self.shifts
        xx = x[..., None]
        near = np.exp(r * xx - s)
        far = np.exp(r * (self.L - xx) - s)
        terms = at * (r**deriv * near - 1j * (-r) ** deriv * far)
        return terms.sum(axis=-1)


def _terms(roots, at, L):
    """v as a sum of six single exponentials coef * exp(c x + d)."""
    s = _shifts(roots, L)
    coef = np.concatenate([at, -1j * at])
    c = np.concatenate([roots, -roots])
    d = np.concatenate([-s, roots * L - s])
    return coef, c, d


def _int_exp(c, d, L):
    """Integral of exp(c x + d) over [0, L].

    Stable provided the integrand is bounded by one at both ends.
    """
    c = np.asarray(c, dtype=complex)
    d = np.asarray(d, dtype=complex)
    out = np.empty(np.broadcast(c, d).shape, dtype=complex)
    c, d = np.broadcast_arrays(c, d)
    zero = c == 0
    left = (~zero) & (c.real <= 0)
    right = (~zero) & (c.real > 0)
    out[zero] = np.exp(d[zero]) * L
    out[left] = np.exp(d[left]) * np.expm1(c[left] * L) / c[left]
    out[right] = -np.exp(c[right] * L + d[right]) * np.expm1(-c[right] * L) / c[right]
    return out


def closed_form_norm_sq(roots, scaled_coeffs, L: float) -> float:
    """Exact ``int_0^L |v|^2 dx`` for the ansatz function."""
    coef, c, d = _terms(np.asarray(roots), np.asarray(scaled_coeffs), L)
    w = np.conj(coef)[:, None] * coef[None, :]
    ints = _int_exp(np.conj(c)[:, None] + c[None, :], np.conj(d)[:, None] + d[None, :], L)
    return float(np.real(np.sum(w * ints)))


def normalization_identity(mode: EigenMode) -> complex:
    """Closed-form value of ``int_0^L v(x)**2 dx`` (no conjugation).

    Evaluates

        -2iL sum_j a_j^2 e^{r_j L}
        + 4i sum_{i<j} a_i a_j (e^{r_j L} - e^{r_i L}) / (r_i - r_j)

    in scaled arithmetic.  For a normalized real eigenfunction this is 1.
    """
    r, at, s, L = mode.roots, mode.scaled_coeffs, mode.shifts, mode.L
    total = -2j * L * np.sum(at**2 * np.exp(r * L - 2 * s))
    for i in range(3):
        for j in range(i + 1, 3):
            ej = np.exp(r[j] * L - s[i] - s[j])
            ei = np.exp(r[i] * L - s[i] - s[j])
            total += 4j * at[i] * at[j] * (ej - ei) / (r[i] - r[j])
    return complex(total)


def boundary_residual(mode: EigenMode) -> float:
    M = _normalized_matrix(mode.roots, mode.L)
    return float(np.abs(M @ mode.scaled_coeffs).max())


def mode_traces(mode: EigenMode) -> tuple[complex, complex]:
    """Boundary slopes ``(v'(0), v'(L))``.

    ``v'(L)`` is zero by the boundary conditions; its computed value is a
    residual.
    """
    vp = mode.evaluate(np.array([0.0, mode.L]), deriv=1)
    return complex(vp[0]), complex(vp[1])


def normalize_mode(mode: EigenMode) -> EigenMode:
    """Rescale to unit L2 norm and fix the phase.

    The phase is chosen so the eigenfunction is real (``int v**2`` real and
    positive) with ``v'(0) > 0``; when ``v'(0)`` vanishes the largest
    sample of ``v`` is made positive instead.  Traces and residual are
    refreshed.
    """
    at = np.asarray(mode.scaled_coeffs, dtype=complex)
    nrm2 = closed_form_norm_sq(mode.roots, at, mode.L)
    if not math.isfinite(nrm2) or nrm2 <= 1e-24 * float(np.vdot(at, at).real):
        raise ZeroNorm(f"eigenfunction at lambda={mode.lam!r} has vanishing norm")
    at = at / math.sqrt(nrm2)
    out = replace(mode, scaled_coeffs=at)
    bil = normalization_identity(out)
    at = at * np.exp(-0.5j * np.angle(bil))
    out = replace(out, scaled_coeffs=at)

    vp0, _ = mode_traces(out)
    if abs(vp0) > 1e-8:
        flip = vp0.real < 0
    else:
        xs = np.linspace(0.0, mode.L, 257)
        vals = out.evaluate(xs).real
        flip = vals[np.argmax(np.abs(vals))] < 0
    if flip:
        at = -at
    out = replace(out, scaled_coeffs=at, coeffs=at * np.exp(-out.shifts))
    vp0, vpL = mode_traces(out)
    return replace(out, trace_vp0=vp0, trace_vpL=vpL, residual=boundary_residual(out))


def build_mode(lam: float, L: float, n: int = 0) -> EigenMode:
    """Eigenmode at a (certified) dispersion zero ``lam``."""
    roots = char_roots(lam)
    M = _normalized_matrix(roots, L)
    _, _, vh = np.linalg.svd(M)
    at = vh[-1].conj()
    mode = EigenMode(
        n=int(n),
        lam=float(lam),
        roots=roots,
        coeffs=at * np.exp(-_shifts(roots, L)),
        scaled_coeffs=at,
        L=float(L),
    )
    return normalize_mode(mode)


def appendix_quantities(mode: EigenMode) -> dict:
    """Diagnostic intermediaries of the |a_1| limit argument.

    ``gamma = (e^{r1 L} - e^{r3 L}) / (e^{r2 L} - e^{r3 L})`` satisfies
    ``a2 = -gamma a1`` and ``a3 = -(1 - gamma) a1``;
    ``phi = 1/(r1-r3) - 1/(r2-r3) - 1/(r1-r2)``.
    """
    r, L = mode.roots, mode.L
    m = float(np.max(r.real)) * L
    e = np.exp(r * L - m)
    gamma = (e[0] - e[2]) / (e[1] - e[2])
    phi = 1 / (r[0] - r[2]) - 1 / (r[1] - r[2]) - 1 / (r[0] - r[1])
    return {
        "gamma": complex(gamma),
        "phi": complex(phi),
        "abs_a1": float(abs(mode.coeffs[0])),
        "a1_limit": 1.0 / math.sqrt(2.0 * L),
    }


# ---------------------------------------------------------------------------
# locating eigenvalues


@dataclass
class DispersionScan:
    L: float
    lambda_window: tuple[float, float]
    lambdas: np.ndarray
    abs_det: np.ndarray
    located_roots: list[float]

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.lambdas.tolist(), self.abs_det.tolist()))


def _abs_det(lam: float, L: float) -> float:
    return float(abs(_det_batch(np.array([lam]), L)[0]))


def _refine(lo: float, hi: float, L: float) -> tuple[float, float]:
    """Minimize |det| on [lo, hi], then polish with real-axis Newton."""
    scale = max(1.0, abs(lo), abs(hi))
    res = minimize_scalar(
        lambda x: _abs_det(x, L),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-13 * scale, "maxiter": 500},
    )
    lam = float(res.x)
    best = _abs_det(lam, L)
    for _ in range(40):
        if best == 0.0:
            break
        h = 1e-7 * max(1.0, abs(lam))
        a, b = lam - h, lam + h
        if a < 0.0 < b:  # the root labelling flips at lam = 0
            a, b = (lam, lam + h) if lam >= 0 else (lam - h, lam)
        d0 = _det_batch(np.array([lam, a, b]), L)
        deriv = (d0[2] - d0[1]) / (b - a)
        if deriv == 0:
            break
        step = float(np.real(d0[0] / deriv))
        cand = lam - step
        if not lo <= cand <= hi:
            break
        val = _abs_det(cand, L)
        if val >= best:
            break
        lam, best = cand, val
        if abs(step) <= 1e-15 * max(1.0, abs(lam)):
            break
    return lam, best


def scan_dispersion(
    L: float,
    s_window: tuple[float, float],
    points_per_gap: int = 48,
    det_tol: float = DET_TOL,
) -> DispersionScan:
    """Locate certified dispersion zeros with ``lam**(1/3)`` in ``s_window``.

    The search grid is uniform in ``s = cbrt(lam)``, where consecutive
    eigenvalues are asymptotically ``2*pi/L`` apart.
    """
    s_lo, s_hi = map(float, s_window)
    step = 2.0 * math.pi / L / points_per_gap
    npts = max(int(math.ceil((s_hi - s_lo) / step)) + 1, 3)
    s = np.linspace(s_lo, s_hi, npts)
    lams = s**3
    vals = np.abs(_det_batch(lams, L))
    located = []
    interior = np.flatnonzero((vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])) + 1
    for i in interior:
        lam, best = _refine(float(lams[i - 1]), float(lams[i + 1]), L)
        if best < det_tol:
            located.append(lam)
    for i in (0, npts - 1):  # zero sitting on the window edge
        if vals[i] < det_tol:
            located.append(float(lams[i]))
    located = sorted(set(located))
    merged = []
    for lam in located:
        if merged and abs(lam - merged[-1]) <= 1e-9 * max(1.0, abs(lam)):
            continue
        merged.append(lam)
    for lam in merged:
        if abs(27.0 * lam * lam - 4.0) <= 1e-6:
            raise DegenerateRoots(
                f"dispersion zero at lambda={lam!r} coincides with a double root of the cubic"
            )
    return DispersionScan(L, (s_lo**3, s_hi**3), lams, vals, merged)


def asymptotic_eigenvalue(n: int, k: int, L: float) -> float:
    """Leading-order eigenvalue for label ``n`` and branch offset ``k``.

    Positive branch (n >= 0): ``((pi + 12 pi (k + n)) / (6 L))**3``;
    negative branch (n < 0): ``-((7 pi + 12 pi (k - n)) / (6 L))**3``.
    """
    if n >= 0:
        return ((math.pi + 12 * math.pi * (k + n)) / (6 * L)) ** 3
    return -(((7 * math.pi + 12 * math.pi * (k - n)) / (6 * L)) ** 3)


def fit_branch_offset(lams, labels, L: float) -> int:
    """Integer offset ``k`` matching located eigenvalues to the asymptotic law."""
    ks = []
    for lam, n in zip(lams, labels):
        s = abs(lam) ** (1.0 / 3.0) * L / (2 * math.pi)
        ks.append(s - 1 / 12 - n if n >= 0 else s - 7 / 12 + n)
    # the largest located eigenvalues are closest to the asymptotic regime
    return int(round(float(np.median(ks[-3:]))))


def _extend_branch(found: list[float], need: int, L: float, positive: bool) -> list[float]:
    gap = 2 * math.pi / L
    sign = 1.0 if positive else -1.0
    while len(found) < need:
        n = len(found) if positive else -(len(found) + 1)
        labels = list(range(len(found))) if positive else [-(i + 1) for i in range(len(found))]
        k = fit_branch_offset(found, labels, L)
        s_pred = sign * abs(asymptotic_eigenvalue(n, k, L)) ** (1.0 / 3.0)
        s_last = sign * abs(found[-1]) ** (1.0 / 3.0)
        lo, hi = s_pred - gap / 2, s_pred + gap / 2
        if positive:
            lo = max(lo, s_last + gap / 8)
        else:
            hi = min(hi, s_last - gap / 8)
        scan = scan_dispersion(L, (lo, hi))
        beyond = [x for x in scan.located_roots if sign * x > abs(found[-1])]
        if not beyond:
            raise BracketFailure(
                f"no dispersion zero in the bracket around predicted lambda_{n}"
                f"={sign * abs(s_pred) ** 3:.6g} (L={L})"
            )
        found.append(beyond[0] if positive else beyond[-1])
    return found


def _check_gap_growth(branch: list[float], name: str) -> None:
    mags = np.abs(np.asarray(branch))
    gaps = np.diff(mags)
    if gaps.size >= 2 and np.any(np.diff(gaps) <= 0):
        raise SpectrumError(f"eigenvalue gaps on the {name} branch do not grow: {gaps}")


def scan_eigenvalues(L: float, count: int, low_gaps: int = 4) -> list[EigenMode]:
    """The ``count`` eigenmodes nearest zero, balanced across both branches.

    Returns ``ceil(count/2)`` modes with ``lam >= 0`` (labels ``n = 0, 1,
    ...``) and ``floor(count/2)`` with ``lam < 0`` (labels ``n = -1, -2,
    ...``), sorted by ``n``.  A dense scan covers the first ``low_gaps``
    periods; further eigenvalues are bracketed with the asymptotic law.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    if count < 1:
        raise ValueError("count must be positive")
    n_pos = (count + 1) // 2
    n_neg = count // 2
    gap = 2 * math.pi / L
    s0 = gap * (low_gaps + 0.5)
    scan = scan_dispersion(L, (-s0, s0))
    pos = [x for x in scan.located_roots if x >= 0]
    neg = sorted((x for x in scan.located_roots if x < 0), reverse=True)
    if n_pos and not pos or n_neg and not neg:
        raise BracketFailure(f"initial scan found no eigenvalue on one branch (L={L})")
    pos = _extend_branch(pos, n_pos, L, True)[:n_pos] if n_pos else []
    neg = _extend_branch(neg, n_neg, L, False)[:n_neg] if n_neg else []
    _check_gap_growth(pos, "positive")
    _check_gap_growth(neg, "negative")

    modes = [build_mode(lam, L, -(i + 1)) for i, lam in enumerate(neg)]
    modes += [build_mode(lam, L, i) for i, lam in enumerate(pos)]
    modes.sort(key=lambda m: m.n)
    return modes

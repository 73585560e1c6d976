"""Eigenfunctions of the coupled system and modal coordinates.

Each real scalar mode ``v_n`` with eigenvalue ``lam_n`` yields two system
modes

    theta(x) = -sigma (i/sqrt 2) v_n(L - x),    u(x) = v_n(x) / sqrt 2,

with ``A(theta, u) = i sigma lam_n (theta, u)``.  The sigma = -1 mode is
the complex conjugate of the sigma = +1 mode, so a real state has
``c[n, -] = conj(c[n, +])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import GridTooCoarse
from .spectrum import EigenMode

_SQRT2 = math.sqrt(2.0)
REALITY_TOL = 1e-12
# Simpson error per mode stays below ~1e-6 when h * max|r| is at most this
MAX_H_ROOT = 0.1


@dataclass(frozen=True)
class SystemMode:
    base: EigenMode
    sigma: int

    def __post_init__(self):
        if self.sigma not in (1, -1):
            raise ValueError("sigma must be +1 or -1")

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def lam(self) -> float:
        return self.base.lam

    @property
    def mu(self) -> float:
        return self.sigma * self.base.lam

    @property
    def vp0(self) -> float:
        return float(self.base.trace_vp0.real)

    @property
    def beta(self) -> float:
        """Input trace: ``B*`` of the mode, ``-w_x(0) = -v'(0)/sqrt 2``."""
        return -self.vp0 / _SQRT2

    @property
    def output_trace_L(self) -> complex:
        """Slope of the theta component at ``x = L``."""
        return self.sigma * 1j * self.vp0 / _SQRT2

    @property
    def output_trace_0(self) -> float:
        """Slope of the u component at ``x = 0``."""
        return self.vp0 / _SQRT2

    def trace(self, side: str) -> complex:
        """Observation trace for the given control side."""
        if side == "left_eta":
            return complex(self.beta)
        if side == "right_w":
            return self.output_trace_L
        raise ValueError(f"unknown control side {side!r}")

    def evaluate(self, x, deriv: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """``(theta, u)`` (or their ``deriv``-th derivatives) at ``x``."""
        x = np.asarray(x, dtype=float)
        v = self.base.evaluate(x, deriv).real
        vr = self.base.evaluate(self.base.L - x, deriv).real * (-1) ** deriv
        theta = -self.sigma * 1j / _SQRT2 * vr
        return theta, v / _SQRT2 + 0j

    def label(self) -> str:
        return f"({self.n},{'+' if self.sigma > 0 else '-'})"


def lift_modes(scalar_modes) -> list[SystemMode]:
    """Both signs for each scalar mode, ordered by ``n`` with + before -."""
    out = []
    for m in sorted(scalar_modes, key=lambda m: m.n):
        out.append(SystemMode(m, 1))
        out.append(SystemMode(m, -1))
    return out


def partner_index(modes) -> np.ndarray:
    """Index of the conjugate partner of each mode, -1 if absent."""
    pos = {(m.n, m.sigma): i for i, m in enumerate(modes)}
    return np.array([pos.get((m.n, -m.sigma), -1) for m in modes])


def weights(modes, s: float) -> np.ndarray:
    lam = np.array([abs(m.lam) for m in modes])
    return (1.0 + lam) ** (2.0 * s / 3.0)


@dataclass(frozen=True)
class ModalState:
    L: float
    modes: tuple
    coeffs: np.ndarray
    reality: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        c = np.asarray(self.coeffs, dtype=complex)
        object.__setattr__(self, "coeffs", c)
        if c.shape != (len(self.modes),):
            raise ValueError(f"{c.shape[0] if c.ndim else 0} coefficients for {len(self.modes)} modes")
        if self.reality:
            defect = reality_defect(self.modes, c)
            scale = max(1.0, float(np.abs(c).max(initial=0.0)))
            if defect > REALITY_TOL * scale:
                raise ValueError(f"conjugate-pair defect {defect:.3e} exceeds tolerance")

    def with_coeffs(self, coeffs) -> "ModalState":
        return ModalState(self.L, self.modes, coeffs, self.reality)


def reality_defect(modes, coeffs) -> float:
    """``max |c[n,-] - conj(c[n,+])|``; infinite if a partner is missing."""
    idx = partner_index(modes)
    if np.any(idx < 0):
        return math.inf
    c = np.asarray(coeffs)
    return float(np.abs(c[idx] - np.conj(c)).max(initial=0.0))


def hs_norm(state: ModalState, s: float) -> float:
    """Weighted modal norm ``(sum (1+|lam|)^(2s/3) |c|^2)^(1/2)``."""
    w = weights(state.modes, s)
    return float(np.sqrt(np.sum(w * np.abs(state.coeffs) ** 2)))


def _check_resolution(modes, x):
    h = float(x[1] - x[0])
    rmax = max(float(np.abs(m.base.roots).max()) for m in modes)
    if h * rmax > MAX_H_ROOT:
        need = int(math.ceil((x[-1] - x[0]) * rmax / MAX_H_ROOT)) + 1
        raise GridTooCoarse(f"grid too coarse for the requested modes; use at least {need} points")


def sample_grid(L: float, modes, minimum: int = 201) -> np.ndarray:
    """Uniform odd-sized grid on [0, L] resolving every mode with margin
    (half the coarsest admissible spacing)."""
    rmax = max(float(np.abs(m.base.roots).max()) for m in modes)
    n = max(minimum, int(math.ceil(2 * L * rmax / MAX_H_ROOT)) + 1)
    n += 1 - n % 2
    return np.linspace(0.0, L, n)


def project(x, eta, w, modes, reality: bool | None = None) -> ModalState:
    """Modal coefficients of ``(eta, w)`` sampled on the uniform grid ``x``.

    Coefficients are Simpson approximations of ``<(eta,w), (theta,u)>``.
    ``reality`` defaults to whether the samples are real and all partners
    are present.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise GridTooCoarse("need at least 3 samples")
    modes = tuple(modes)
    _check_resolution(modes, x)
    eta = np.asarray(eta)
    w = np.asarray(w)
    c = np.empty(len(modes), dtype=complex)
    for i, m in enumerate(modes):
        th, u = m.evaluate(x)
        c[i] = simpson(eta * np.conj(th) + w * np.conj(u), x=x)
    if reality is None:
        reality = (not np.iscomplexobj(eta) and not np.iscomplexobj(w)) and bool(np.all(partner_index(modes) >= 0))
    if reality:
        # quadrature leaves the pair relation exact up to rounding; enforce it
        idx = partner_index(modes)
        plus = np.array([m.sigma > 0 for m in modes])
        c = np.where(plus, c, np.conj(c[idx]))
    L = modes[0].base.L if modes else float(x[-1])
    return ModalState(L, modes, c, reality)


def synthesize(state: ModalState, x) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the modal sum at ``x``; real arrays for real states."""
    x = np.asarray(x, dtype=float)
    eta = np.zeros(x.shape, dtype=complex)
    w = np.zeros(x.shape, dtype=complex)
    for c, m in zip(state.coeffs, state.modes):
        if c == 0:
            continue
        th, u = m.evaluate(x)
        eta += c * th
        w += c * u
    if state.reality:
        return eta.real, w.real
    return eta, w


def gram_matrix(modes, x=None) -> np.ndarray:
    """Quadrature Gram matrix ``<phi_k, phi_j>`` of system modes."""
    modes = tuple(modes)
    if x is None:
        x = sample_grid(modes[0].base.L, modes)
    vals = [m.evaluate(x) for m in modes]
    G = np.empty((len(modes), len(modes)), dtype=complex)
    for j, (tj, uj) in enumerate(vals):
        for k, (tk, uk) in enumerate(vals):
            G[j, k] = simpson(tk * np.conj(tj) + uk * np.conj(uj), x=x)
    return G


def delta_coefficients(state: ModalState) -> dict:
    """Per scalar mode ``n``, the t = 0 trace combination
    ``(c[n,+] + c[n,-]) v_n'(0) / sqrt 2``."""
    out: dict = {}
    for c, m in zip(state.coeffs, state.modes):
        out[m.n] = out.get(m.n, 0j) + c * m.output_trace_0
    return out


def random_state(modes, rng: np.random.Generator, s: float = 1.0) -> ModalState:
    """Real state with standard complex Gaussian ``c[n,+]``, unit in ``H_s``."""
    modes = tuple(modes)
    idx = partner_index(modes)
    if np.any(idx < 0):
        raise ValueError("random real states need both signs of every mode")
    plus = np.array([m.sigma > 0 for m in modes])
    z = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    c = np.where(plus, z, 0)
    c = np.where(plus, c, np.conj(c[idx]))
    st = ModalState(modes[0].base.L, modes, c, True)
    return st.with_coeffs(c / hs_norm(st, s))

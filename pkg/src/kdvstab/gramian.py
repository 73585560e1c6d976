"""Stabilizing Gramian and feedback gain on a truncated modal basis.

With observation traces ``b_m`` (one per system mode) and frequencies
``mu_m`` the Gramian has entries

    G[j, k] = int_0^inf e^{-2 omega t} conj(b_j e^{i mu_j t}) b_k e^{i mu_k t} dt
            = conj(b_j) b_k / (2 omega + i (mu_j - mu_k)).

The feedback ``u = g c`` with ``g = -b^T G^{-1}`` and input column
``conj(b)`` gives the closed-loop matrix ``K = i D + conj(b) g``.  One has
``K G = G (i D - 2 omega)``, so every closed-loop pole is ``i mu - 2 omega``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh

from .basis import ModalState, SystemMode
from .errors import KdvStabError, NotPositiveDefinite, SingularGramian
from .spectrum import scan_eigenvalues

SIDES = ("left_eta", "right_w")
FORMAT_VERSION = 1


def traces(modes, side: str) -> np.ndarray:
    return np.array([m.trace(side) for m in modes], dtype=complex)


def gramian_matrix(modes, omega: float, side: str = "left_eta") -> np.ndarray:
    """Closed-form Gramian (no factorization, no positivity check)."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    if side not in SIDES:
        raise ValueError(f"unknown control side {side!r}")
    b = traces(modes, side)
    mu = np.array([m.mu for m in modes])
    return np.conj(b)[:, None] * b[None, :] / (2 * omega + 1j * (mu[:, None] - mu[None, :]))


@dataclass(frozen=True)
class GramianOperator:
    omega: float
    modes: tuple
    matrix: np.ndarray
    factor: tuple
    control_side: str

    @property
    def traces(self) -> np.ndarray:
        return traces(self.modes, self.control_side)

    def hermitian_defect(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def eigenvalues(self) -> np.ndarray:
        return eigvalsh(self.matrix)

    def solve(self, rhs) -> np.ndarray:
        return cho_solve(self.factor, np.asarray(rhs, dtype=complex))


def assemble_gramian(modes, omega: float, control_side: str = "left_eta") -> GramianOperator:
    modes = tuple(modes)
    if not modes:
        raise ValueError("no modes")
    G = gramian_matrix(modes, omega, control_side)
    try:
        fac = cho_factor(G, lower=False)
    except LinAlgError as exc:
        raise NotPositiveDefinite(
            "Gramian is not positive definite; a mode may have zero boundary trace (critical length?)"
        ) from exc
    d = np.abs(np.diag(fac[0]))
    if d.min() <= 1e-7 * d.max():
        # pivots this small mean the factor is numerically meaningless
        raise NotPositiveDefinite(f"Gramian is numerically singular (pivot ratio {d.min() / d.max():.2e})")
    return GramianOperator(float(omega), modes, G, fac, control_side)


def solve_lax_milgram(gram: GramianOperator, state: ModalState) -> ModalState:
    """Coefficients ``p`` with ``G p = c``.

    The pairing of ``H_{-1}`` with ``H_1`` is the plain coefficient pairing,
    so no weights enter.
    """
    if tuple(state.modes) != gram.modes:
        raise ValueError("state and Gramian use different mode lists")
    c = state.coeffs
    p = gram.solve(c)
    res = np.linalg.norm(gram.matrix @ p - c)
    if not np.all(np.isfinite(p)) or res > 1e-10 * max(np.linalg.norm(c), 1e-300):
        if np.linalg.norm(c) == 0:
            return state.with_coeffs(np.zeros_like(c))
        raise SingularGramian(f"Lax-Milgram residual {res:.3e}")
    return ModalState(state.L, state.modes, p, False)


@dataclass(frozen=True)
class FeedbackLaw:
    omega: float
    gain: np.ndarray
    modes: tuple
    control_side: str = "left_eta"

    @property
    def L(self) -> float:
        return self.modes[0].base.L

    @property
    def input_column(self) -> np.ndarray:
        return np.conj(traces(self.modes, self.control_side))

    def apply(self, state) -> complex:
        c = state.coeffs if isinstance(state, ModalState) else np.asarray(state)
        return complex(self.gain @ c)

    def closed_loop_matrix(self) -> np.ndarray:
        mu = np.array([m.mu for m in self.modes])
        return np.diag(1j * mu) + np.outer(self.input_column, self.gain)

    def spectral_abscissa(self) -> float:
        return float(np.linalg.eigvals(self.closed_loop_matrix()).real.max())

    def extended(self, modes) -> "FeedbackLaw":
        """Same law on a larger mode list; extra modes get zero gain."""
        modes = tuple(modes)
        key = {(m.n, m.sigma): i for i, m in enumerate(self.modes)}
        g = np.zeros(len(modes), dtype=complex)
        for i, m in enumerate(modes):
            j = key.get((m.n, m.sigma))
            if j is not None:
                if abs(m.lam - self.modes[j].lam) > 1e-8 * max(1.0, abs(m.lam)):
                    raise ValueError(f"mode {m.label()} does not match the design mode")
                g[i] = self.gain[j]
        return FeedbackLaw(self.omega, g, modes, self.control_side)

    def scaled(self, factor: float) -> "FeedbackLaw":
        return FeedbackLaw(self.omega, self.gain * factor, self.modes, self.control_side)


def feedback_gain(gram: GramianOperator) -> FeedbackLaw:
    """``g = -b^T G^{-1}``, so ``g c = -sum_m b_m p_m`` with ``G p = c``."""
    b = gram.traces
    y = gram.solve(np.conj(b))
    if not np.all(np.isfinite(y)):
        raise SingularGramian("gain solve produced non-finite values")
    return FeedbackLaw(gram.omega, -np.conj(y), gram.modes, gram.control_side)


def design(modes, omega: float, control_side: str = "left_eta") -> FeedbackLaw:
    return feedback_gain(assemble_gramian(modes, omega, control_side))


# ---------------------------------------------------------------------------
# serialization


def _payload(law: FeedbackLaw) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "L": law.L,
        "omega": law.omega,
        "control_side": law.control_side,
        "modes": [
            {
                "n": m.n,
                "sigma": m.sigma,
                "lambda": m.lam,
                "beta": [m.trace(law.control_side).real, m.trace(law.control_side).imag],
            }
            for m in law.modes
        ],
        "gain": [[float(g.real), float(g.imag)] for g in law.gain],
    }


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def law_to_json(law: FeedbackLaw) -> str:
    payload = _payload(law)
    doc = {"feedback": payload, "sha256": _digest(payload)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def law_from_json(text: str, modes=None) -> FeedbackLaw:
    """Rebuild a law; modes are recomputed unless supplied.

    Raises ``ValueError`` on checksum mismatch or when the recomputed
    eigenvalues disagree with the stored ones.
    """
    doc = json.loads(text)
    payload = doc["feedback"]
    if _digest(payload) != doc.get("sha256"):
        raise ValueError("feedback file checksum mismatch")
    L = float(payload["L"])
    entries = payload["modes"]
    if modes is None:
        ns = sorted({e["n"] for e in entries})
        n_pos = sum(1 for n in ns if n >= 0)
        n_neg = sum(1 for n in ns if n < 0)
        count = max(2 * n_pos - 1, 2 * n_neg, 1)
        base = {m.n: m for m in scan_eigenvalues(L, count)}
        try:
            modes = [SystemMode(base[e["n"]], int(e["sigma"])) for e in entries]
        except KeyError as exc:
            raise KdvStabError(f"could not recompute mode n={exc.args[0]}") from exc
    modes = tuple(modes)
    for e, m in zip(entries, modes):
        if (e["n"], e["sigma"]) != (m.n, m.sigma) or not math.isclose(e["lambda"], m.lam, rel_tol=1e-8, abs_tol=1e-8):
            raise ValueError(f"stored mode {e['n']},{e['sigma']} does not match recomputed spectrum")
    gain = np.array([complex(a, b) for a, b in payload["gain"]])
    return FeedbackLaw(float(payload["omega"]), gain, modes, payload["control_side"])

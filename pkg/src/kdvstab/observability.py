"""Critical lengths, boundary trace series and observability constants."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .basis import ModalState, partner_index, weights
from .errors import DegenerateObservability, EmptyInput

_UNIT = 2 * math.pi / math.sqrt(3.0)
TRACE_FLAG = 1e-8


@dataclass(frozen=True)
class CriticalEntry:
    value: float
    q: int  # k^2 + k l + l^2
    pairs: tuple  # every generating (k, l)


@dataclass(frozen=True)
class CriticalLengthSet:
    bound: float
    entries: tuple

    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    def __len__(self):
        return len(self.entries)


def enumerate_critical(bound: float) -> CriticalLengthSet:
    """All ``2 pi / sqrt 3 * sqrt(k^2 + k l + l^2) <= bound`` with k, l >= 1."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    qmax = 3 * bound**2 / (4 * math.pi**2)
    groups: dict[int, list] = {}
    k = 1
    while k * k + k + 1 <= qmax:
        l = 1
        while k * k + k * l + l * l <= qmax:
            groups.setdefault(k * k + k * l + l * l, []).append((k, l))
            l += 1
        k += 1
    entries = []
    for q in sorted(groups):
        val = _UNIT * math.sqrt(q)
        if val <= bound:
            entries.append(CriticalEntry(val, q, tuple(sorted(groups[q]))))
    return CriticalLengthSet(float(bound), tuple(entries))


@dataclass(frozen=True)
class CriticalCheck:
    critical: bool
    nearest: CriticalEntry
    distance: float


def is_critical(L: float, tol: float = 1e-9) -> CriticalCheck:
    if L <= 0 or tol <= 0:
        raise ValueError("L and tol must be positive")
    # extra 2 pi guarantees a nearest entry exists
    cs = enumerate_critical(L + 1 + 2 * math.pi)
    d = np.abs(cs.values() - L)
    i = int(np.argmin(d))
    return CriticalCheck(bool(d[i] < tol and cs.entries[i].value <= L + 1), cs.entries[i], float(d[i]))


# ---------------------------------------------------------------------------
# trace series


def output_traces(modes, side: str = "left_eta") -> np.ndarray:
    """Observed slope of each mode: ``w_x(0)`` or ``eta_x(L)``."""
    if side == "left_eta":
        return np.array([m.output_trace_0 for m in modes], dtype=complex)
    if side == "right_w":
        return np.array([m.output_trace_L for m in modes], dtype=complex)
    raise ValueError(f"unknown control side {side!r}")


def trace_amplitudes(state: ModalState, side: str = "left_eta") -> np.ndarray:
    """Amplitude ``gamma_m`` of ``exp(i mu_m t)`` in the trace series."""
    return state.coeffs * output_traces(state.modes, side)


def boundary_trace_series(state: ModalState, T: float, samples: int, side: str = "left_eta"):
    """Uncontrolled boundary trace on ``linspace(0, T, samples)``.

    Each system mode contributes at its own frequency ``mu``, so every
    scalar mode enters at both ``+lam`` and ``-lam``.  Real states give a
    real series.  Returns ``(t, y)``.
    """
    if T <= 0 or samples < 2:
        raise ValueError("need T > 0 and at least 2 samples")
    t = np.linspace(0.0, T, samples)
    mu = np.array([m.mu for m in state.modes])
    y = np.exp(1j * np.outer(t, mu)) @ trace_amplitudes(state, side)
    if state.reality:
        return t, y.real
    return t, y


def time_grid(modes, T: float, per_period: int = 20) -> np.ndarray:
    """Odd-sized uniform grid with ``per_period`` points per fastest period."""
    wmax = max(float(np.abs([m.mu for m in modes]).max()), 1e-12)
    n = max(201, int(math.ceil(per_period * T * wmax / (2 * math.pi))) + 1)
    n += 1 - n % 2
    return np.linspace(0.0, T, n)


def trace_energy(coeff_sets, modes, T: float, side: str = "left_eta") -> np.ndarray:
    """``int_0^T |y(t)|^2 dt`` for each coefficient row, by Simpson."""
    t = time_grid(modes, T)
    mu = np.array([m.mu for m in modes])
    E = np.exp(1j * np.outer(t, mu))
    amp = np.atleast_2d(coeff_sets) * output_traces(modes, side)
    Y = E @ amp.T
    return simpson(np.abs(Y) ** 2, x=t, axis=0)


@dataclass
class InghamReport:
    T: float
    sample_count: int
    c_lower: float
    C_upper: float
    ratios: np.ndarray
    mode_ratios: np.ndarray
    side: str = "left_eta"
    L: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def trial_min(self) -> float:
        return float(self.ratios.min())

    @property
    def trial_max(self) -> float:
        return float(self.ratios.max())

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "T": self.T,
            "side": self.side,
            "sample_count": self.sample_count,
            "c_lower": self.c_lower,
            "C_upper": self.C_upper,
            "ratio_spread": self.c_lower / self.C_upper if self.C_upper > 0 else 0.0,
            "trial_min": self.trial_min,
            "trial_max": self.trial_max,
            "mode_ratios": [float(r) for r in self.mode_ratios],
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def trials_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["trial", "ratio"])
        for i, r in enumerate(self.ratios):
            wr.writerow([i, repr(float(r))])
        return buf.getvalue()


def ingham_constants(
    modes,
    T: float,
    trials: int = 64,
    seed: int = 0,
    side: str = "left_eta",
    allow_degenerate: bool | None = None,
) -> InghamReport:
    """Empirical bounds on ``int_0^T |trace|^2 dt / ||y0||_1^2``.

    Random real states (standard complex Gaussian ``c[n,+]``) are drawn
    from per-trial streams spawned off ``seed``.  Each single basis mode is
    evaluated too; ``c_lower``/``C_upper`` are the extremes over both.

    ``DegenerateObservability`` is raised when ``c_lower < 1e-10`` and the
    length is not critical (override with ``allow_degenerate``).
    """
    modes = tuple(modes)
    if not modes:
        raise EmptyInput("no modes")
    if T <= 0 or trials < 1:
        raise ValueError("need T > 0 and trials >= 1")
    idx = partner_index(modes)
    if np.any(idx < 0):
        raise ValueError("ingham_constants needs both signs of every mode")
    plus = np.array([m.sigma > 0 for m in modes])
    w1 = weights(modes, 1.0)

    rows = []
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        z = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
        c = np.where(plus, z, 0)
        c = np.where(plus, c, np.conj(c[idx]))
        rows.append(c / math.sqrt(float(np.sum(w1 * np.abs(c) ** 2))))
    ratios = trace_energy(np.array(rows), modes, T, side)
    basis = np.diag(1.0 / np.sqrt(w1))
    mode_ratios = trace_energy(basis, modes, T, side)

    c_lower = float(min(ratios.min(), mode_ratios.min()))
    C_upper = float(max(ratios.max(), mode_ratios.max()))
    L = modes[0].base.L
    if allow_degenerate is None:
        allow_degenerate = is_critical(L, 1e-6).critical
    if c_lower < 1e-10 and not allow_degenerate:
        raise DegenerateObservability(f"c_lower={c_lower:.3e} at non-critical L={L}")
    return InghamReport(float(T), trials, c_lower, C_upper, ratios, mode_ratios, side, float(L))


@dataclass(frozen=True)
class TraceReport:
    min_ratio: float
    ratios: np.ndarray
    flagged: tuple  # labels n of modes below TRACE_FLAG
    labels: tuple


def trace_nonvanishing(modes) -> TraceReport:
    """``|v_n'(0)|^2 / (1+|lam_n|)^(2/3)`` per scalar mode."""
    base = []
    seen = set()
    for m in modes:
        b = getattr(m, "base", m)
        if b.n not in seen:
            seen.add(b.n)
            base.append(b)
    if not base:
        raise EmptyInput("no modes")
    base.sort(key=lambda b: b.n)
    r = np.array([abs(b.trace_vp0) ** 2 / (1 + abs(b.lam)) ** (2.0 / 3.0) for b in base])
    labels = tuple(b.n for b in base)
    flagged = tuple(n for n, x in zip(labels, r) if x < TRACE_FLAG)
    return TraceReport(float(r.min()), r, flagged, labels)

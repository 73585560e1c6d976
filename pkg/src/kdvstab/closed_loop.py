"""Modal time integration of the open and closed loop, and decay fits."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .basis import ModalState, hs_norm, weights
from .errors import DegenerateFit, UnstableIntegration
from .gramian import FeedbackLaw

NORM_FLOOR = 1e-30
BLOWUP = 1e3
INTEGRATORS = ("exact_expm", "trapezoidal")


@dataclass(frozen=True)
class SimConfig:
    t_max: float = 10.0
    dt: float = 0.01
    record_stride: int = 1
    integrator: str = "exact_expm"

    def __post_init__(self):
        if not (self.t_max > 0 and self.dt > 0):
            raise ValueError("t_max and dt must be positive")
        if self.dt > self.t_max:
            raise ValueError("dt exceeds t_max")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")

    @property
    def steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass(frozen=True)
class SimResult:
    times: np.ndarray
    h1_norms: np.ndarray
    control: np.ndarray
    fitted_rate: float
    residual: float
    fitted_C: float
    final_state: ModalState | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "h1_norm", "control_f"])
        for t, h, f in zip(self.times, self.h1_norms, self.control):
            wr.writerow([repr(float(t)), repr(float(h)), repr(float(f))])
        return buf.getvalue()


def fit_decay(times, norms, t_max: float | None = None) -> tuple[float, float, float]:
    """Least-squares slope of ``log norm`` over ``[0.2 t_max, t_max]``.

    Returns ``(rate, residual, C)`` where ``norm ~ C exp(rate t)`` and
    ``residual`` is the RMS misfit of the log.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    if t_max is None:
        t_max = float(t.max()) if t.size else 0.0
    sel = (t >= 0.2 * t_max - 1e-12 * t_max) & (t <= t_max)
    if np.count_nonzero(sel) < 10:
        raise DegenerateFit(f"only {np.count_nonzero(sel)} samples in the fit window")
    ts = t[sel]
    ly = np.log(np.maximum(y[sel], NORM_FLOOR))
    X = np.column_stack([ts, np.ones_like(ts)])
    (rate, icpt), *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = float(np.sqrt(np.mean((X @ [rate, icpt] - ly) ** 2)))
    return float(rate), resid, float(math.exp(icpt))


def _state_norms(C, w1):
    return np.sqrt(np.einsum("ij,j->i", np.abs(C) ** 2, w1))


def _result(state0, times, coeffs, control, t_max) -> SimResult:
    w1 = weights(state0.modes, 1.0)
    norms = _state_norms(coeffs, w1)
    if norms[0] == 0:
        rate, res, C = 0.0, 0.0, 0.0
    else:
        try:
            rate, res, C = fit_decay(times, norms, t_max)
        except DegenerateFit:
            # too short a record to fit; the trajectory itself is still valid
            rate = res = C = math.nan
    final = ModalState(state0.L, state0.modes, coeffs[-1], False)
    return SimResult(np.asarray(times), norms, np.asarray(control), rate, res, C, final)


def _record_times(cfg: SimConfig):
    steps = cfg.steps
    idx = np.arange(0, steps + 1, cfg.record_stride)
    return idx, idx * cfg.dt


def simulate_open_loop(state0: ModalState, cfg: SimConfig, observe: str = "left_eta") -> SimResult:
    """``c(t) = exp(i mu t) c(0)`` sampled at recorded times.

    The control column records the observed trace (``w_x(0, t)`` for
    ``left_eta``, ``eta_x(L, t)`` for ``right_w``), real for real states.
    """
    mu = np.array([m.mu for m in state0.modes])
    _, times = _record_times(cfg)
    C = np.exp(1j * np.outer(times, mu)) * state0.coeffs
    if observe == "left_eta":
        tr = np.array([m.output_trace_0 for m in state0.modes])
    else:
        tr = np.array([m.output_trace_L for m in state0.modes])
    y = C @ tr
    out = y.real if state0.reality else np.abs(y)
    return _result(state0, times, C, out, cfg.t_max)


def simulate_closed_loop(state0: ModalState, law: FeedbackLaw, cfg: SimConfig) -> SimResult:
    """Integrate ``c' = K c`` with ``K = i D + conj(b) g``; record ``f = g c``."""
    if tuple(law.modes) != tuple(state0.modes):
        raise ValueError("feedback law and state use different mode lists")
    K = law.closed_loop_matrix()
    mu = np.array([m.mu for m in state0.modes])
    if cfg.integrator == "exact_expm":
        step = expm(K * cfg.dt)
    else:
        if cfg.dt * float(np.abs(mu).max(initial=0.0)) > 0.5:
            warnings.warn("trapezoidal step is coarse for the fastest mode (dt*max|mu| > 0.5)", stacklevel=2)
        eye = np.eye(len(mu))
        step = np.linalg.solve(eye - 0.5 * cfg.dt * K, eye + 0.5 * cfg.dt * K)

    w1 = weights(state0.modes, 1.0)
    n0 = hs_norm(state0, 1.0)
    c = state0.coeffs.copy()
    rec_idx, times = _record_times(cfg)
    rec = set(rec_idx.tolist())
    coeffs, control = [], []
    for k in range(cfg.steps + 1):
        if k in rec:
            coeffs.append(c.copy())
            f = law.gain @ c
            control.append(f.real if state0.reality else abs(f))
        if k == cfg.steps:
            break
        c = step @ c
        nk = math.sqrt(float(np.sum(w1 * np.abs(c) ** 2)))
        if not math.isfinite(nk) or nk > BLOWUP * max(n0, NORM_FLOOR):
            raise UnstableIntegration(f"H1 norm grew to {nk:.3e} (initial {n0:.3e}) at t={(k + 1) * cfg.dt:g}")
    return _result(state0, times, np.array(coeffs), control, cfg.t_max)

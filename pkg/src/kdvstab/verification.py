"""Consolidated numerical self-checks behind ``kdvstab verify``.

Every check returns a plain dict with ``name``, ``passed``, a measured
``value`` and its ``threshold``; :func:`run_checks` attaches a status of
``pass``, ``fail`` or ``expected-fail``.  A failure is expected only when
the length is critical and the check is one the critical set is known to
break.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import simpson

from . import fd_oracle as fd
from .basis import gram_matrix, lift_modes, random_state
from .closed_loop import SimConfig, simulate_closed_loop, simulate_open_loop
from .errors import KdvStabError
from .gramian import design, gramian_matrix
from .observability import ingham_constants, is_critical, trace_nonvanishing
from .spectrum import closed_form_norm_sq, normalization_identity, scan_eigenvalues

# checks allowed to fail at a critical length
DEGENERACY_CHECKS = {"trace_nonvanishing", "gramian_spd", "closed_loop_abscissa", "closed_loop_decay", "ingham_dichotomy"}


def _fmt(x):
    return float(x) if x is not None and math.isfinite(x) else None


def check_oracle_spectrum(L, count=8, n_points=2048, tol=1e-4):
    # extra modes so the smallest |lam| are covered even if branches interleave unevenly
    exact = sorted((m.lam for m in scan_eigenvalues(L, count + 4)), key=abs)[:count]
    op = fd.build_discrete_B_op(fd.Grid(L, n_points))
    approx = [e.real for e, _ in fd.discrete_eigs(op, count)]
    # a zero eigenvalue (critical length) is compared absolutely
    err = max(abs(a - b) / max(abs(b), 1.0) for a, b in zip(approx, exact))
    return {"name": "oracle_spectrum", "passed": err < tol, "value": err, "threshold": tol, "n_points": n_points}


def check_structure(L, n_points=512, tol=1e-6):
    g = fd.Grid(L, n_points)
    dA = fd.symmetry_defect(fd.build_discrete_A(g))["relative"]
    dB = fd.symmetry_defect(fd.build_discrete_B_op(g))["relative"]
    worst = max(dA, dB)
    return {"name": "operator_structure", "passed": worst < tol, "value": worst, "threshold": tol,
            "skew_defect_A": dA, "sym_defect_B": dB}


def check_identities(scalar, tol=1e-8, qtol=1e-6):
    ident = max(abs(normalization_identity(m) - 1) for m in scalar)
    quad = 0.0
    for m in scalar:
        x = np.linspace(0, m.L, 20001)
        v = m.evaluate(x)
        q = simpson(np.abs(v) ** 2, x=x)
        quad = max(quad, abs(q - closed_form_norm_sq(m.roots, m.scaled_coeffs, m.L)))
    return {"name": "normalization_identities", "passed": ident < tol and quad < qtol,
            "value": ident, "threshold": tol, "quadrature_defect": quad}


def check_orthonormality(modes, tol=1e-6):
    G = gram_matrix(modes)
    d = float(np.abs(G - np.eye(len(modes))).max())
    return {"name": "system_orthonormality", "passed": d < tol, "value": d, "threshold": tol}


def check_traces(scalar):
    rep = trace_nonvanishing(scalar)
    return {"name": "trace_nonvanishing", "passed": not rep.flagged, "value": rep.min_ratio,
            "threshold": 1e-8, "flagged": list(rep.flagged)}


def check_gramian(modes, omega, side):
    G = gramian_matrix(modes, omega, side)
    ev = np.linalg.eigvalsh(G)
    ratio = float(ev.min() / ev.max())
    herm = float(np.abs(G - G.conj().T).max())
    try:
        design(modes, omega, side)
        ok = True
    except KdvStabError:
        ok = False
    return {"name": "gramian_spd", "passed": ok and ratio > 1e-8, "value": ratio, "threshold": 1e-8,
            "hermitian_defect": herm}


def check_closed_loop(modes, omega, side, seed, t_max, dt):
    st = random_state(modes, np.random.default_rng(seed))
    ol = simulate_open_loop(st, SimConfig(t_max, dt))
    drift = float(np.abs(ol.h1_norms / ol.h1_norms[0] - 1).max())
    iso = {"name": "open_loop_isometry", "passed": drift < 1e-12, "value": drift, "threshold": 1e-12}
    try:
        law = design(modes, omega, side)
    except KdvStabError as exc:
        fail = {"passed": False, "value": None, "error": str(exc)}
        return [{"name": "closed_loop_abscissa", "threshold": -2 * omega * (1 - 1e-3), **fail},
                {"name": "closed_loop_decay", "threshold": -1.8 * omega, **fail}, iso]
    absc = law.spectral_abscissa()
    rates = []
    for child in np.random.SeedSequence(seed).spawn(5):
        st = random_state(modes, np.random.default_rng(child))
        rates.append(simulate_closed_loop(st, law, SimConfig(t_max, dt)).fitted_rate)
    return [
        {"name": "closed_loop_abscissa", "passed": absc <= -2 * omega * (1 - 1e-3), "value": absc,
         "threshold": -2 * omega * (1 - 1e-3)},
        {"name": "closed_loop_decay", "passed": max(rates) <= -1.8 * omega, "value": max(rates),
         "threshold": -1.8 * omega, "rates": rates},
        iso,
    ]


def check_ingham(modes, side, seed, T=1.0, trials=64):
    rep = ingham_constants(modes, T, trials, seed, side, allow_degenerate=True)
    spread = rep.c_lower / rep.C_upper
    return {"name": "ingham_dichotomy", "passed": spread >= 1e-6, "value": spread, "threshold": 1e-6,
            "c_lower": rep.c_lower, "C_upper": rep.C_upper, "T": T, "trials": trials}


def run_checks(L, omega, n_modes, seed=0, side="left_eta", t_max=10.0, dt=0.01, fd_points=2048):
    """Run every check and return the report dict (no timing data)."""
    crit = is_critical(L)
    n_scalar = max(1, n_modes // 2)
    scalar = scan_eigenvalues(L, n_scalar)
    modes = lift_modes(scalar)
    checks = [
        check_oracle_spectrum(L, min(8, 2 * n_scalar), fd_points),
        check_structure(L),
        check_identities(scalar),
        check_orthonormality(modes),
        check_traces(scalar),
        check_gramian(modes, omega, side),
        *check_closed_loop(modes, omega, side, seed, t_max, dt),
        check_ingham(modes, side, seed),
    ]
    unexpected = 0
    for c in checks:
        if c["passed"]:
            c["status"] = "pass"
        elif crit.critical and c["name"] in DEGENERACY_CHECKS:
            c["status"] = "expected-fail"
        else:
            c["status"] = "fail"
            unexpected += 1
        for k, v in list(c.items()):
            if isinstance(v, (float, np.floating)):
                c[k] = _fmt(float(v))
            elif isinstance(v, (np.bool_,)):
                c[k] = bool(v)
    return {
        "L": L,
        "omega": omega,
        "modes": 2 * n_scalar,
        "seed": seed,
        "control_side": side,
        "critical": crit.critical,
        "nearest_critical": crit.nearest.value,
        "checks": checks,
        "unexpected_failures": unexpected,
    }

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from kdvstab.errors import DegenerateRoots, SpectrumError
from kdvstab.spectrum import (
    DEGENERATE_LAMBDA,
    _check_gap_growth,
    appendix_quantities,
    asymptotic_eigenvalue,
    build_mode,
    char_roots,
    closed_form_norm_sq,
    dispersion_det,
    fit_branch_offset,
    mode_traces,
    normalization_identity,
    scan_dispersion,
    scan_eigenvalues,
)

from conftest import CRITICAL_L, scalar_modes


@given(st.floats(-1e5, 1e5).filter(lambda x: abs(abs(x) - DEGENERATE_LAMBDA) > 1e-3))
@settings(max_examples=200, deadline=None)
def test_roots_solve_cubic(lam):
    r = char_roots(lam)
    scale = max(1.0, abs(lam))
    assert np.all(np.abs(r**3 + r - 1j * lam) < 1e-10 * scale)
    assert abs(r.sum()) < 1e-9 * max(1.0, abs(lam) ** (1 / 3))


def test_roots_at_zero():
    r = char_roots(0.0)
    assert sorted(np.round(r.imag, 12)) == [-1.0, 0.0, 1.0]
    assert np.allclose(r.real, 0)


def test_degenerate_root_rejected():
    with pytest.raises(DegenerateRoots):
        char_roots(DEGENERATE_LAMBDA)
    with pytest.raises(DegenerateRoots):
        char_roots(-DEGENERATE_LAMBDA)


def test_root_ordering_sign_convention():
    r = char_roots(100.0)
    assert r[0].imag == min(r.imag)
    assert r[1].real > 0
    r = char_roots(-100.0)
    assert r[0].imag == max(r.imag)
    assert r[1].real < 0


def test_determinant_finite_for_large_lambda():
    assert np.isfinite(abs(dispersion_det(1e7, 1.0)))
    assert np.isfinite(abs(dispersion_det(-1e7, 3.0)))


def test_scan_finds_known_eigenvalues():
    sc = scan_dispersion(1.0, (-8.0, 8.0))
    lams = sorted(sc.located_roots)
    assert any(abs(x + 50.5526) < 1e-3 for x in lams)
    assert any(abs(x - 310.0992) < 1e-3 for x in lams)
    assert len(sc.samples) == len(sc.lambdas)


@pytest.mark.parametrize("L", [1.0, 3.0, CRITICAL_L])
def test_mode_contract(L):
    for m in scalar_modes(L, 32):
        assert m.residual < 1e-10
        assert abs(normalization_identity(m) - 1) < 1e-8
        # real eigenfunction, v(0) = v(L) = v'(L) = 0
        x = np.linspace(0, L, 101)
        v = m.evaluate(x)
        assert np.abs(v.imag).max() < 1e-8
        assert abs(m.evaluate(np.array([0.0]))[0]) < 1e-8
        assert abs(m.trace_vpL) < 1e-6 * max(1.0, abs(m.trace_vp0))


def test_labels_and_balance():
    modes = scalar_modes(1.0, 32)
    ns = [m.n for m in modes]
    assert ns == list(range(-16, 16))
    assert all((m.lam >= 0) == (m.n >= 0) for m in modes)


def test_norm_matches_quadrature():
    for m in scalar_modes(1.0, 32)[::5]:
        q, _ = quad(lambda x: abs(m.evaluate(np.array([x]))[0]) ** 2, 0, 1, limit=400)
        assert abs(q - closed_form_norm_sq(m.roots, m.scaled_coeffs, 1.0)) < 1e-6


def test_eigenfunction_solves_equation():
    # -(v''' + v')(L - x) = lam v(x)
    m = scalar_modes(3.0, 8)[5]
    x = np.linspace(0.1, 2.9, 7)
    lhs = -(m.evaluate(3.0 - x, 3) + m.evaluate(3.0 - x, 1))
    assert np.allclose(lhs, m.lam * m.evaluate(x), atol=1e-8 * abs(m.lam))


def test_orthogonality():
    modes = scalar_modes(1.0, 8)
    x = np.linspace(0, 1, 4001)
    V = np.array([m.evaluate(x).real for m in modes])
    from scipy.integrate import simpson

    G = simpson(V[:, None, :] * V[None, :, :], x=x, axis=-1)
    assert np.abs(G - np.eye(8)).max() < 1e-6


def test_critical_length_zero_mode():
    m = scalar_modes(CRITICAL_L, 4)
    zero = [x for x in m if abs(x.lam) < 1e-8]
    assert len(zero) == 1
    assert abs(zero[0].trace_vp0) < 1e-6
    # the zero mode is (1 - cos x) up to normalization
    x = np.linspace(0, CRITICAL_L, 50)
    v = zero[0].evaluate(x).real
    ref = (1 - np.cos(x)) / math.sqrt(3 * math.pi)
    assert np.allclose(np.abs(v), ref, atol=1e-8)


def test_mode_traces_phase():
    for m in scalar_modes(1.0, 16):
        vp0, _ = mode_traces(m)
        assert vp0.real > 0 and abs(vp0.imag) < 1e-8 * abs(vp0)


def test_a1_limit():
    for L in (1.0, 3.0):
        modes = sorted(scalar_modes(L, 32), key=lambda m: abs(m.n))[-5:]
        for m in modes:
            q = appendix_quantities(m)
            assert abs(q["abs_a1"] / q["a1_limit"] - 1) < 0.05


def test_asymptotic_branch_fit():
    modes = scalar_modes(1.0, 32)
    pos = [m for m in modes if m.n >= 0]
    k = fit_branch_offset([m.lam for m in pos], [m.n for m in pos], 1.0)
    for m in pos[-5:]:
        assert abs(asymptotic_eigenvalue(m.n, k, 1.0) / m.lam - 1) < 0.02


def test_gap_growth_violation():
    with pytest.raises(SpectrumError):
        _check_gap_growth([1.0, 5.0, 7.0, 20.0], "test")


def test_scan_rejects_bad_input():
    with pytest.raises(ValueError):
        scan_eigenvalues(-1.0, 4)
    with pytest.raises(ValueError):
        scan_eigenvalues(1.0, 0)


def test_build_mode_scaling_invariance():
    m1 = build_mode(scalar_modes(2.0, 4)[2].lam, 2.0, 0)
    assert abs(normalization_identity(m1) - 1) < 1e-10

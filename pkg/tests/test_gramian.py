import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from kdvstab.basis import ModalState, random_state
from kdvstab.errors import NotPositiveDefinite
from kdvstab.gramian import (
    FeedbackLaw,
    assemble_gramian,
    design,
    feedback_gain,
    gramian_matrix,
    law_from_json,
    law_to_json,
    solve_lax_milgram,
)

from conftest import CRITICAL_L, system_modes

SIDES = ("left_eta", "right_w")


def _quad_entry(bj, bk, mj, mk, omega):
    T = 40 / (2 * omega)
    d = mk - mj
    amp = np.conj(bj) * bk
    re, _ = quad(lambda t: math.exp(-2 * omega * t), 0, T, weight="cos", wvar=d, limit=200)
    im, _ = quad(lambda t: math.exp(-2 * omega * t), 0, T, weight="sin", wvar=d, limit=200)
    return amp * complex(re, im)


@pytest.mark.parametrize("side", SIDES)
def test_entries_match_time_integral(side):
    modes = system_modes(1.0, 8)
    G = gramian_matrix(modes, 0.25, side)
    b = [m.trace(side) for m in modes]
    for j in range(8):
        for k in range(8):
            q = _quad_entry(b[j], b[k], modes[j].mu, modes[k].mu, 0.25)
            assert abs(G[j, k] - q) < 1e-6


@pytest.mark.parametrize("side", SIDES)
def test_hermitian_positive(side):
    for L in (1.0, 3.0):
        for omega in (0.25, 0.5, 1.0, 2.0):
            for n in (8, 16, 32):
                g = assemble_gramian(system_modes(L, n), omega, side)
                assert g.hermitian_defect() < 1e-12
                assert g.eigenvalues().min() > 0
                d = np.diag(g.matrix).real
                assert np.allclose(d, np.abs(g.traces) ** 2 / (2 * omega))


def test_single_mode():
    m = system_modes(1.0, 8)[2]
    g = assemble_gramian([m], 0.5)
    assert g.matrix[0, 0] == pytest.approx(m.beta**2 / 1.0)
    p = solve_lax_milgram(g, ModalState(1.0, [m], [2.0]))
    assert p.coeffs[0] == pytest.approx(2.0 * 1.0 / m.beta**2)
    law = feedback_gain(g)
    assert law.gain[0] == pytest.approx(-1.0 / m.beta)
    pole = np.linalg.eigvals(law.closed_loop_matrix())[0]
    assert pole == pytest.approx(1j * m.mu - 1.0)


def test_lax_milgram_round_trip(modes_L1):
    g = assemble_gramian(modes_L1, 0.5)
    s = random_state(modes_L1, np.random.default_rng(0))
    p = solve_lax_milgram(g, s)
    assert np.linalg.norm(g.matrix @ p.coeffs - s.coeffs) < 1e-10 * np.linalg.norm(s.coeffs)
    back = solve_lax_milgram(g, ModalState(1.0, modes_L1, g.matrix @ s.coeffs))
    assert np.abs(back.coeffs - s.coeffs).max() < 1e-9
    zero = solve_lax_milgram(g, ModalState(1.0, modes_L1, np.zeros(16)))
    assert not np.any(zero.coeffs)


@pytest.mark.parametrize("side", SIDES)
def test_gain_definition(side, modes_L1):
    g = assemble_gramian(modes_L1, 1.0, side)
    law = feedback_gain(g)
    s = random_state(modes_L1, np.random.default_rng(9))
    p = solve_lax_milgram(g, s).coeffs
    assert law.apply(s) == pytest.approx(-np.sum(g.traces * p), rel=1e-10)
    assert law.apply(ModalState(1.0, modes_L1, np.zeros(16))) == 0


@given(st.integers(0, 2**32 - 1), st.sampled_from(SIDES), st.sampled_from([0.25, 0.5, 1.0, 2.0]))
@settings(max_examples=25, deadline=None)
def test_real_output_for_real_states(seed, side, omega):
    modes = system_modes(1.0, 16)
    law = design(modes, omega, side)
    s = random_state(modes, np.random.default_rng(seed))
    assert abs(law.apply(s).imag) < 1e-10 * max(1.0, abs(law.apply(s)))


@pytest.mark.parametrize("side", SIDES)
@pytest.mark.parametrize("omega", [0.25, 0.5, 1.0, 2.0])
def test_closed_loop_abscissa(side, omega):
    for L, n in ((1.0, 16), (3.0, 16), (1.0, 32)):
        law = design(system_modes(L, n), omega, side)
        assert law.spectral_abscissa() <= -2 * omega * (1 - 1e-3)


def test_critical_length_degenerate():
    modes = system_modes(CRITICAL_L, 8)
    G = gramian_matrix(modes, 0.5)
    ev = np.linalg.eigvalsh(G)
    assert ev.min() < 1e-8 * ev.max()
    with pytest.raises(NotPositiveDefinite):
        assemble_gramian(modes, 0.5)


def test_bad_arguments(modes_L1):
    with pytest.raises(ValueError):
        gramian_matrix(modes_L1, 0.0)
    with pytest.raises(ValueError):
        gramian_matrix(modes_L1, 1.0, "middle")
    with pytest.raises(ValueError):
        assemble_gramian([], 1.0)


def test_json_round_trip(modes_L1):
    law = design(modes_L1, 0.5, "right_w")
    text = law_to_json(law)
    back = law_from_json(text)
    assert back.control_side == "right_w" and back.omega == 0.5
    assert np.array_equal(back.gain, law.gain)
    assert [m.lam for m in back.modes] == pytest.approx([m.lam for m in law.modes], rel=1e-10)
    tampered = text.replace('"omega": 0.5', '"omega": 0.6')
    with pytest.raises(ValueError, match="checksum"):
        law_from_json(tampered)


def test_extended_law(modes_L1):
    law = design(modes_L1, 0.5)
    big = law.extended(system_modes(1.0, 24))
    assert len(big.gain) == 24
    assert np.count_nonzero(big.gain) == 16
    assert isinstance(big, FeedbackLaw)

import csv
import io
import math

import numpy as np
import pytest

from kdvstab.basis import ModalState, random_state
from kdvstab.closed_loop import SimConfig, fit_decay, simulate_closed_loop, simulate_open_loop
from kdvstab.errors import DegenerateFit, UnstableIntegration
from kdvstab.gramian import design
from kdvstab.observability import output_traces

from conftest import system_modes


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(t_max=1.0, dt=2.0)
    with pytest.raises(ValueError):
        SimConfig(integrator="euler")
    with pytest.raises(ValueError):
        SimConfig(record_stride=0)


def test_fit_exact_exponential():
    t = np.linspace(0, 10, 101)
    rate, res, C = fit_decay(t, 3.0 * np.exp(-t))
    assert rate == pytest.approx(-1.0, abs=1e-8)
    assert C == pytest.approx(3.0, rel=1e-8)
    rate, _, _ = fit_decay(t, np.full(101, 2.0))
    assert abs(rate) < 1e-10


def test_fit_oscillating_envelope():
    omega = 0.5
    t = np.linspace(0, 20 / omega, 2001)
    rate, _, _ = fit_decay(t, np.exp(-2 * omega * t) * (2 + np.sin(t)))
    assert rate == pytest.approx(-2 * omega, rel=0.05)


def test_fit_too_few_samples():
    with pytest.raises(DegenerateFit):
        fit_decay(np.linspace(0, 1, 8), np.ones(8))


def test_fit_floor_handles_zeros():
    t = np.linspace(0, 1, 50)
    rate, _, _ = fit_decay(t, np.zeros(50))
    assert math.isfinite(rate)


def test_open_loop_isometry(modes_L1):
    s = random_state(modes_L1, np.random.default_rng(0))
    r = simulate_open_loop(s, SimConfig(10.0, 0.01))
    assert np.abs(r.h1_norms / r.h1_norms[0] - 1).max() < 1e-12
    assert len(r.times) == len(r.h1_norms) == len(r.control) == 1001


def test_open_loop_single_mode_trace(modes_L1):
    m = modes_L1[5]
    s = ModalState(1.0, [m], [0.7])
    r = simulate_open_loop(s, SimConfig(1.0, 0.01))
    delta = 0.7 * output_traces([m])[0]
    assert np.allclose(r.control, abs(delta))


def test_zero_state_stays_zero(modes_L1):
    s = ModalState(1.0, modes_L1, np.zeros(16), True)
    r = simulate_open_loop(s, SimConfig(1.0, 0.1))
    assert not np.any(r.h1_norms)
    law = design(modes_L1, 0.5)
    r = simulate_closed_loop(s, law, SimConfig(1.0, 0.1))
    assert not np.any(r.h1_norms) and not np.any(r.control)


@pytest.mark.parametrize("side", ["left_eta", "right_w"])
def test_closed_loop_decay(side, modes_L1):
    omega = 0.5
    law = design(modes_L1, omega, side)
    for seed in range(3):
        s = random_state(modes_L1, np.random.default_rng(seed))
        r = simulate_closed_loop(s, law, SimConfig(10.0, 0.01))
        assert r.fitted_rate <= -2 * omega * 0.9
        # envelope with the fitted constant
        env = r.fitted_C * np.exp(-2 * omega * (1 - 1e-2) * r.times)
        assert np.all(r.h1_norms[r.times >= 2] <= 1.05 * env[r.times >= 2])
        assert abs(r.control[-1]) < 1e-3 * abs(r.control).max()


def test_single_mode_exact_decay(modes_L1):
    m = modes_L1[2]
    law = design([m], 0.75)
    s = ModalState(1.0, [m], [1.0])
    r = simulate_closed_loop(s, law, SimConfig(4.0, 0.05))
    ref = r.h1_norms[0] * np.exp(-1.5 * r.times)
    assert np.allclose(r.h1_norms, ref, rtol=1e-8)


def test_zero_gain_is_open_loop(modes_L1):
    law = design(modes_L1, 0.5).scaled(0.0)
    s = random_state(modes_L1, np.random.default_rng(1))
    r = simulate_closed_loop(s, law, SimConfig(5.0, 0.01))
    assert np.abs(r.h1_norms - r.h1_norms[0]).max() < 1e-12


def test_trapezoidal_agrees_and_warns(modes_L1):
    law = design(modes_L1, 0.5)
    s = random_state(modes_L1, np.random.default_rng(2))
    with pytest.warns(UserWarning):
        simulate_closed_loop(s, law, SimConfig(0.5, 0.01, integrator="trapezoidal"))
    mu = max(abs(m.mu) for m in modes_L1)
    dt = 0.5 / mu
    cfg = SimConfig(2.0, dt, record_stride=100)
    a = simulate_closed_loop(s, law, cfg)
    b = simulate_closed_loop(s, law, SimConfig(2.0, dt, 100, "trapezoidal"))
    assert np.abs(a.h1_norms - b.h1_norms).max() < 1e-2 * a.h1_norms[0]


def test_wrong_sign_blows_up(modes_L1):
    law = design(modes_L1, 1.0).scaled(-1.0)
    s = random_state(modes_L1, np.random.default_rng(3))
    with pytest.raises(UnstableIntegration):
        simulate_closed_loop(s, law, SimConfig(20.0, 0.01))


def test_cross_truncation(modes_L1):
    # gain designed on 16 modes, plant with 24
    law = design(modes_L1, 0.5).extended(system_modes(1.0, 24))
    s = random_state(law.modes, np.random.default_rng(4))
    r = simulate_closed_loop(s, law, SimConfig(10.0, 0.01))
    assert r.fitted_rate <= 0


def test_csv_output(modes_L1):
    law = design(modes_L1, 0.5)
    s = random_state(modes_L1, np.random.default_rng(5))
    r = simulate_closed_loop(s, law, SimConfig(1.0, 0.01, record_stride=10))
    rows = list(csv.reader(io.StringIO(r.to_csv())))
    assert rows[0] == ["t", "h1_norm", "control_f"]
    assert len(rows) == 12
    assert float(rows[5][1]) == r.h1_norms[4]
    assert math.isnan(r.fitted_rate)

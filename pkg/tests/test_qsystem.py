import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from holonomic import qsystem
from holonomic.errors import AdiabaticityError, DomainError
from holonomic.qsystem import Frame, Gate, SystemParams

from conftest import EPS, OMEGA, T_AD, paper_params

fractions = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def schroedinger_oracle(params, t1, t2):
    """U(t2, t1) by DOP853 on the 16 complex entries."""

    def rhs(t, y):
        u = y.view(complex).reshape(4, 4)
        return (-1j * qsystem.hamiltonian(params, t) @ u).ravel().view(float)

    y0 = np.eye(4, dtype=complex).ravel().view(float)
    sol = solve_ivp(rhs, (t1, t2), y0, method="DOP853", rtol=1e-12, atol=1e-12)
    return sol.y[:, -1].view(complex).reshape(4, 4)


def test_undriven_limit_is_diagonal():
    # vanishing couplings reduce H to the bare level structure
    h = qsystem.hamiltonian(paper_params(), 0.0)
    h[0, 1:] = h[1:, 0] = 0.0
    assert np.allclose(h, np.diag([0.0, EPS, EPS, EPS]))


def test_spectrum_at_base_point(gate1):
    vals = np.sort(np.linalg.eigvalsh(qsystem.hamiltonian(gate1, 0.0)))
    # (1000 -+ sqrt(1000^2 + 4 * 25^2)) / 2
    expected = np.sort([1000.6246098625197, -0.6246098625197, 1000.0, 1000.0])
    assert np.allclose(vals, expected, atol=1e-10)


def test_bright_energies_formula():
    up, dn = qsystem.bright_energies(EPS, OMEGA)
    root = math.sqrt(EPS**2 + 4 * OMEGA**2)
    assert up == pytest.approx((EPS + root) / 2, abs=1e-10)
    assert dn == pytest.approx((EPS - root) / 2, abs=1e-10)


@pytest.mark.parametrize("gate", list(Gate))
@settings(max_examples=100, deadline=None)
@given(s=fractions)
def test_hermitian_and_spectrum_invariant(gate, s):
    params = paper_params(gate)
    h = qsystem.hamiltonian(params, s * params.t_ad)
    assert np.max(np.abs(h - h.conj().T)) == 0.0
    up, dn = qsystem.bright_energies(EPS, OMEGA)
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), np.sort([up, dn, EPS, EPS]), atol=1e-10)


@pytest.mark.parametrize("gate", list(Gate))
@settings(max_examples=60, deadline=None)
@given(s=fractions)
def test_rabi_norm_conserved(gate, s):
    params = paper_params(gate)
    v = qsystem.rabi_vector(params, s * params.t_ad)
    assert v.norm == pytest.approx(OMEGA, rel=1e-12)
    if gate is Gate.GATE1:
        assert v.omega_minus == 0
    else:
        assert np.allclose(np.imag(v.as_array()), 0.0)


@pytest.mark.parametrize("gate", list(Gate))
def test_loop_closes(gate):
    params = paper_params(gate)
    assert np.allclose(qsystem.hamiltonian(params, 0.0), qsystem.hamiltonian(params, params.t_ad), atol=1e-10)


def test_base_point_drives_only_zero_level(gate1):
    v = qsystem.rabi_vector(gate1, 0.0)
    assert (v.omega_plus, v.omega_zero, v.omega_minus) == (0, OMEGA, 0)


def test_time_outside_loop_rejected(gate1):
    with pytest.raises(DomainError):
        qsystem.hamiltonian(gate1, -1.0)
    with pytest.raises(DomainError):
        qsystem.hamiltonian(gate1, 2 * gate1.t_ad)


def test_params_validation():
    with pytest.raises(DomainError):
        SystemParams(EPS, 0.0, T_AD)
    with pytest.raises(DomainError):
        SystemParams(EPS, OMEGA, -1.0)
    with pytest.warns(UserWarning, match="adiabatic"):
        SystemParams(EPS, OMEGA, 1.0)
    with pytest.warns(UserWarning, match="regime"):
        SystemParams(10.0, 6.0, 100.0)


def test_alpha_helpers(gate1):
    assert gate1.alpha == pytest.approx(OMEGA * T_AD)
    assert gate1.with_alpha(280.0).alpha == pytest.approx(280.0)
    assert gate1.with_alpha(280.0).omega == OMEGA
    p = SystemParams.from_alpha(EPS, 280.0, 20.0)
    assert p.omega == pytest.approx(14.0)


@pytest.mark.parametrize("gate", list(Gate))
@pytest.mark.parametrize("s", [0.0, 0.1, 0.37, 0.5, 0.8, 1.0])
def test_dark_bright_basis(gate, s):
    params = paper_params(gate)
    t = s * params.t_ad
    basis = qsystem.dark_bright_basis(params, t)
    v = basis.vectors
    assert np.allclose(v.conj().T @ v, np.eye(4), atol=1e-10)
    h = qsystem.hamiltonian(params, t)
    assert np.allclose(h @ v, v * basis.energies, atol=1e-9)
    assert np.all(basis.dark[qsystem.G] == 0)
    assert basis.energies[2] == basis.energies[3] == EPS


def test_dark_gauge_is_smooth(gate1):
    times = np.linspace(0.0, gate1.t_ad, 2001)
    frames = qsystem.dark_frames(gate1, times)
    jumps = np.linalg.norm(np.diff(frames, axis=0), axis=(1, 2))
    assert jumps.max() < 5e-3


def test_dark_bright_basis_reference_alignment(gate1):
    t = 0.4 * gate1.t_ad
    transported = qsystem.dark_bright_basis(gate1, t)
    aligned = qsystem.dark_bright_basis(gate1, t + 1e-4, reference=transported.dark)
    assert np.linalg.norm(aligned.dark - transported.dark) < 1e-3


@pytest.mark.parametrize("method", ["midpoint", "magnus4"])
def test_propagator_unitary(gate2, method):
    u = qsystem.ideal_propagator(gate2, 0.0, gate2.t_ad, method=method)
    assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-8)


def test_propagator_composition(gate1):
    t = gate1.t_ad
    whole = qsystem.ideal_propagator(gate1, 0.0, t, steps=4000)
    split = qsystem.ideal_propagator(gate1, 0.3 * t, t, steps=2800) @ qsystem.ideal_propagator(
        gate1, 0.0, 0.3 * t, steps=1200
    )
    assert np.linalg.norm(whole - split) < 1e-6


def test_propagator_matches_ode_oracle():
    params = paper_params(Gate.GATE2)
    t2 = 0.35 * params.t_ad
    reference = schroedinger_oracle(params, 0.0, t2)
    u = qsystem.ideal_propagator(params, 0.0, t2)
    assert np.linalg.norm(u - reference) < 1e-6


def test_convergence_orders():
    params = paper_params(Gate.GATE1)
    t2 = 0.2 * params.t_ad
    reference = qsystem.ideal_propagator(params, 0.0, t2, steps=16000)
    errs = {
        m: [np.linalg.norm(qsystem.ideal_propagator(params, 0.0, t2, steps=n, method=m) - reference) for n in (1000, 2000)]
        for m in ("magnus4", "midpoint")
    }
    assert 13.0 < errs["magnus4"][0] / errs["magnus4"][1] < 20.0
    assert 3.5 < errs["midpoint"][0] / errs["midpoint"][1] < 4.5


def test_target_gates():
    u1 = qsystem.target_gate(Gate.GATE1)
    assert np.allclose(u1, np.diag([np.exp(1j * np.pi / 4), 1.0]))
    u2 = qsystem.target_gate(Gate.GATE2)
    sigma_y = np.array([[0, -1j], [1j, 0]])
    # exp(i pi/2 sigma_y) = i sigma_y; the sign convention drops out of the phase-aligned distance
    assert qsystem.gate_distance(u2, 1j * sigma_y) < 1e-7


def test_gate_distance_ignores_global_phase():
    u = qsystem.target_gate(Gate.GATE1)
    assert qsystem.gate_distance(np.exp(0.7j) * u, u) < 1e-7
    assert qsystem.gate_distance(np.eye(2), np.diag([1.0, -1.0])) == pytest.approx(2.0)


@pytest.mark.parametrize("gate", list(Gate))
def test_transport_holonomy_matches_targets(gate):
    hol = qsystem.geometric_holonomy(paper_params(gate))
    assert qsystem.gate_distance(hol, qsystem.target_gate(gate)) < 1e-6


@pytest.mark.parametrize("gate", list(Gate))
def test_resonant_frame_holonomy(gate):
    # with degenerate dark and bright manifolds the loop is adiabatic at alpha = 280
    params = paper_params(gate, frame=Frame.RESONANT).with_alpha(280.0)
    hol = qsystem.holonomy(params)
    assert qsystem.gate_distance(hol, qsystem.target_gate(gate)) < 1e-3


def test_resonant_frame_converges_with_alpha():
    dists = []
    for alpha in (50.0, 100.0, 280.0):
        params = paper_params(Gate.GATE1, frame=Frame.RESONANT).with_alpha(alpha)
        dists.append(qsystem.gate_distance(qsystem.holonomy(params), qsystem.target_gate(Gate.GATE1)))
    assert dists[0] > dists[1] > dists[2]


def test_holonomy_rejects_small_alpha():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = paper_params().with_alpha(10.0)
    with pytest.raises(DomainError):
        qsystem.holonomy(params)


def test_holonomy_flags_leakage():
    # static frame at alpha = 280: dark to bright gap times t_ad is only ~7
    params = paper_params().with_alpha(280.0)
    with pytest.raises(AdiabaticityError) as info:
        qsystem.holonomy(params)
    assert info.value.leakage > 0.05
    block = qsystem.holonomy(params, max_leakage=1.0)
    assert qsystem.leakage(block) == pytest.approx(info.value.leakage)


def test_degenerate_drive_rejected(gate1, monkeypatch):
    monkeypatch.setattr(qsystem, "rabi_array", lambda p, t: np.zeros(3, dtype=complex))
    with pytest.raises(DomainError):
        qsystem.dark_bright_basis(gate1, 0.1)

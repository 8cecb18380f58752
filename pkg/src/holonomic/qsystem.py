"""Driven four-level system: Rabi loops, Hamiltonian, dark/bright states,
ideal propagator and holonomy extraction.

Basis ordering is (|G>, |+>, |0>, |->).  The logical qubit lives in
span{|+>, |->}, which coincides with the dark subspace at the loop base
point t = 0 (only the |0> <-> |G> transition is driven there).

Frame: the Hamiltonian has diagonal (0, eps, eps, eps) and couplings
Omega_j(t) between |j> and |G>, i.e. the explicit exp(-i eps t) factor of
the laboratory drive is dropped.  In this frame the bright energies are
static, (eps +- sqrt(eps^2 + 4 Omega^2)) / 2, and the dark energy is eps.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import AdiabaticityError, DomainError, NumericalError

G, PLUS, ZERO, MINUS = 0, 1, 2, 3
LOGICAL = (PLUS, MINUS)

FRAME_DESCRIPTIONS = {
    "static": "diag(0, eps, eps, eps) + Omega_j(t) |j><G| + h.c.; no exp(-i eps t) on the couplings",
    "resonant": "diag(0, 0, 0, 0) + Omega_j(t) |j><G| + h.c.; exact rotating frame of the laser drive",
}

ALPHA_WARN = 50.0
RATIO_WARN = 0.5

# Fraction of t_ad spent on each of the three loop legs.
LEG_FRACTIONS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
GATE1_PHI = math.pi / 4
GATE2_PHI = math.pi / 2


class Gate(str, enum.Enum):
    GATE1 = "gate1"
    GATE2 = "gate2"


class Frame(str, enum.Enum):
    STATIC = "static"
    RESONANT = "resonant"


@dataclass(frozen=True)
class SystemParams:
    """Laser and level constants defining H_0(t).

    Energies in meV, ``t_ad`` in hbar/meV.
    """

    epsilon: float
    omega: float
    t_ad: float
    gate: Gate = Gate.GATE1
    frame: Frame = Frame.STATIC

    def __post_init__(self):
        object.__setattr__(self, "gate", Gate(self.gate))
        object.__setattr__(self, "frame", Frame(self.frame))
        for name in ("epsilon", "omega", "t_ad"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")
        if self.alpha < ALPHA_WARN:
            warnings.warn(
                f"adiabatic parameter Omega*t_ad = {self.alpha:.3g} is below {ALPHA_WARN}",
                stacklevel=3,
            )
        if self.omega / self.epsilon >= RATIO_WARN:
            warnings.warn(
                f"Omega/eps = {self.omega / self.epsilon:.3g} leaves the eps >> Omega regime",
                stacklevel=3,
            )

    @property
    def alpha(self) -> float:
        return self.omega * self.t_ad

    @property
    def level_energy(self) -> float:
        """Diagonal entry of |+>, |0>, |-> in the working frame (the dark energy)."""
        return self.epsilon if self.frame is Frame.STATIC else 0.0

    @property
    def dark_bright_gap(self) -> float:
        """Splitting between the dark level and the upper bright level."""
        return bright_energies(self.level_energy, self.omega)[0] - self.level_energy

    @classmethod
    def from_alpha(cls, epsilon: float, alpha: float, t_ad: float, gate=Gate.GATE1):
        """Build parameters at fixed adiabatic parameter, Omega = alpha / t_ad."""
        return cls(epsilon=epsilon, omega=alpha / t_ad, t_ad=t_ad, gate=gate)

    def with_alpha(self, alpha: float) -> "SystemParams":
        """Same Omega, loop time rescaled so that Omega * t_ad = alpha."""
        return replace(self, t_ad=alpha / self.omega)


@dataclass(frozen=True)
class RabiVector:
    omega_plus: complex
    omega_minus: complex
    omega_zero: complex

    def as_array(self) -> np.ndarray:
        """Couplings in basis order (|+>, |0>, |->)."""
        return np.array([self.omega_plus, self.omega_zero, self.omega_minus], dtype=complex)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class DarkBrightBasis:
    """Instantaneous eigenbasis of H_0(t).

    ``vectors`` holds the columns |B_+>, |B_->, |D_1>, |D_2>; ``energies``
    the matching eigenvalues (eps_+, eps_-, eps, eps).
    """

    t: float
    vectors: np.ndarray
    energies: np.ndarray

    @property
    def dark(self) -> np.ndarray:
        return self.vectors[:, 2:]

    @property
    def bright(self) -> np.ndarray:
        return self.vectors[:, :2]


def bright_energies(epsilon: float, omega: float) -> tuple[float, float]:
    root = math.sqrt(epsilon * epsilon + 4.0 * omega * omega)
    upper = 0.5 * (epsilon + root)
    # eps_- = -Omega^2 / eps_+ avoids cancellation when eps >> Omega
    return upper, -omega * omega / upper


def _ramp(x):
    """C^2 monotone ramp from 0 to 1 with vanishing end slopes."""
    x = np.clip(x, 0.0, 1.0)
    return x - np.sin(2.0 * np.pi * x) / (2.0 * np.pi)


def loop_angles(params: SystemParams, t):
    """Spherical angles (theta, phi) of the Rabi vector at time(s) ``t``."""
    t = np.asarray(t, dtype=float)
    s = t / params.t_ad
    f1, f2, _ = LEG_FRACTIONS
    phi_max = GATE1_PHI if params.gate is Gate.GATE1 else GATE2_PHI
    leg1 = s < f1
    leg2 = (s >= f1) & (s < f1 + f2)
    theta = np.where(
        leg1,
        0.5 * np.pi * _ramp(s / f1),
        np.where(leg2, 0.5 * np.pi, 0.5 * np.pi * (1.0 - _ramp((s - f1 - f2) / (1.0 - f1 - f2)))),
    )
    phi = np.where(leg1, 0.0, np.where(leg2, phi_max * _ramp((s - f1) / f2), phi_max))
    return theta, phi


def _check_time(params: SystemParams, t) -> None:
    t = np.asarray(t, dtype=float)
    slack = 1e-12 * params.t_ad
    if np.any(~np.isfinite(t)) or np.any(t < -slack) or np.any(t > params.t_ad + slack):
        raise DomainError(f"time outside the loop interval [0, {params.t_ad}]")


def rabi_array(params: SystemParams, t) -> np.ndarray:
    """Vectorised couplings, shape ``t.shape + (3,)`` in order (+, 0, -)."""
    _check_time(params, t)
    theta, phi = loop_angles(params, t)
    om = params.omega
    out = np.empty(np.shape(theta) + (3,), dtype=complex)
    out[..., 1] = om * np.cos(theta)
    if params.gate is Gate.GATE1:
        out[..., 0] = om * np.sin(theta) * np.exp(1j * phi)
        out[..., 2] = 0.0
    else:
        out[..., 0] = om * np.sin(theta) * np.cos(phi)
        out[..., 2] = om * np.sin(theta) * np.sin(phi)
    # the loop returns exactly to its base point
    closed = np.isclose(np.asarray(t, dtype=float), params.t_ad, rtol=0, atol=1e-12 * params.t_ad)
    out[closed] = (0.0, om, 0.0)
    return out


def rabi_vector(params: SystemParams, t: float) -> RabiVector:
    plus, zero, minus = rabi_array(params, float(t))
    return RabiVector(omega_plus=complex(plus), omega_minus=complex(minus), omega_zero=complex(zero))


def hamiltonians(params: SystemParams, t) -> np.ndarray:
    """Stack of H_0 at the given times, shape ``t.shape + (4, 4)``."""
    c = rabi_array(params, t)
    h = np.zeros(c.shape[:-1] + (4, 4), dtype=complex)
    h[..., 1, 1] = h[..., 2, 2] = h[..., 3, 3] = params.level_energy
    h[..., 1:, 0] = c
    h[..., 0, 1:] = c.conj()
    return h


def hamiltonian(params: SystemParams, t: float) -> np.ndarray:
    return hamiltonians(params, float(t))


def _dark_projector(c: np.ndarray) -> np.ndarray:
    b = np.zeros(4, dtype=complex)
    b[1:] = c / np.linalg.norm(c)
    p = np.diag([0.0, 1.0, 1.0, 1.0]).astype(complex)
    return p - np.outer(b, b.conj())


def _align(projector: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Orthonormal frame of range(projector) with maximal overlap to ``reference``."""
    m = projector @ reference
    s = m.conj().T @ m
    w, v = np.linalg.eigh(s)
    if w.min() < 1e-8:
        raise NumericalError("dark-space alignment is singular; reference frame too far away")
    return m @ (v * w ** -0.5) @ v.conj().T


def logical_frame() -> np.ndarray:
    frame = np.zeros((4, 2), dtype=complex)
    frame[PLUS, 0] = 1.0
    frame[MINUS, 1] = 1.0
    return frame


def dark_frames(params: SystemParams, times) -> np.ndarray:
    """Dark frames transported along ``times`` by successive-overlap alignment.

    The first frame is aligned with the logical frame; each later frame is
    aligned with its predecessor.  Returns shape ``(len(times), 4, 2)``.
    """
    times = np.asarray(times, dtype=float)
    couplings = rabi_array(params, times)
    frames = np.empty((len(times), 4, 2), dtype=complex)
    ref = logical_frame()
    for i, c in enumerate(couplings):
        ref = _align(_dark_projector(c), ref)
        frames[i] = ref
    return frames


def _bright_vectors(params: SystemParams, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    om = params.omega
    b = np.zeros(4, dtype=complex)
    b[1:] = c / np.linalg.norm(c)
    g = np.zeros(4, dtype=complex)
    g[G] = 1.0
    e_up, e_dn = bright_energies(params.level_energy, om)
    vecs = np.empty((4, 2), dtype=complex)
    for k, lam in enumerate((e_up, e_dn)):
        vecs[:, k] = (om * g + lam * b) / math.hypot(om, lam)
    return vecs, np.array([e_up, e_dn])


def dark_bright_basis(
    params: SystemParams, t: float, reference: np.ndarray | None = None, transport_points: int = 512
) -> DarkBrightBasis:
    """Eigenbasis of H_0(t) with a smooth dark-state gauge.

    The dark pair is aligned with ``reference`` (a 4x2 frame, typically the
    previous time step's dark vectors).  Without a reference it is
    transported from the logical frame at t = 0 over ``transport_points``
    steps, so repeated calls yield one continuous gauge.
    """
    t = float(t)
    _check_time(params, t)
    c = rabi_array(params, t)
    if np.linalg.norm(c) == 0.0:
        raise DomainError("Omega = 0: dark and bright levels are not separated")
    if reference is None:
        if t == 0.0:
            dark = dark_frames(params, [0.0])[0]
        else:
            dark = dark_frames(params, np.linspace(0.0, t, transport_points + 1))[-1]
    else:
        dark = _align(_dark_projector(c), np.asarray(reference, dtype=complex))
    bright, e_bright = _bright_vectors(params, c)
    vectors = np.concatenate([bright, dark], axis=1)
    energies = np.array([e_bright[0], e_bright[1], params.level_energy, params.level_energy])
    return DarkBrightBasis(t=t, vectors=vectors, energies=energies)


def eigenbases(params: SystemParams, times) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvector stacks (N, 4, 4) and energies (4,) along a time grid.

    Column order and energies follow :class:`DarkBrightBasis`.  Only the
    gauge-invariant combinations of these vectors are used downstream, so
    the dark pair is not transported here.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    c = rabi_array(params, times)
    om, eps = params.omega, params.level_energy
    e_up, e_dn = bright_energies(eps, om)
    b = c / om
    v = np.zeros((len(times), 4, 4), dtype=complex)
    for k, lam in enumerate((e_up, e_dn)):
        norm = math.hypot(om, lam)
        v[:, 0, k] = om / norm
        v[:, 1:, k] = lam * b / norm
    # dark pair: orthonormal complement of b inside span{|+>, |0>, |->}
    for i in range(len(times)):
        q, _ = np.linalg.qr(np.column_stack([b[i], np.eye(3, dtype=complex)]))
        v[i, 1:, 2:] = q[:, 1:3]
    return v, np.array([e_up, e_dn, eps, eps])


def default_steps(params: SystemParams, duration: float, per_period: int = 64) -> int:
    """Integrator steps resolving the Rabi period 2 pi / Omega."""
    period = 2.0 * math.pi / params.omega
    return max(1, int(math.ceil(per_period * duration / period)))


def _expm_hermitian(h: np.ndarray, dt) -> np.ndarray:
    """exp(-i h dt) for a stack of Hermitian matrices."""
    w, v = np.linalg.eigh(h)
    phase = np.exp(-1j * w * np.asarray(dt)[..., None])
    return (v * phase[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


_GL_OFFSET = math.sqrt(3.0) / 6.0
_CF4_A = (3.0 - 2.0 * math.sqrt(3.0)) / 12.0
_CF4_B = (3.0 + 2.0 * math.sqrt(3.0)) / 12.0


def step_unitaries(params: SystemParams, grid: np.ndarray, method: str = "magnus4") -> np.ndarray:
    """Short-time propagators U(t_{k+1}, t_k) for consecutive grid points.

    ``midpoint`` exponentiates H at the interval midpoint (second order);
    ``magnus4`` is the fourth-order commutator-free Magnus scheme built from
    two Gauss-Legendre nodes.  Both are unitary to round-off.
    """
    grid = np.asarray(grid, dtype=float)
    t0, dt = grid[:-1], np.diff(grid)
    if method == "midpoint":
        return _expm_hermitian(hamiltonians(params, t0 + 0.5 * dt), dt)
    if method == "magnus4":
        h1 = hamiltonians(params, t0 + (0.5 - _GL_OFFSET) * dt)
        h2 = hamiltonians(params, t0 + (0.5 + _GL_OFFSET) * dt)
        first = _expm_hermitian(_CF4_B * h1 + _CF4_A * h2, dt)
        second = _expm_hermitian(_CF4_A * h1 + _CF4_B * h2, dt)
        return second @ first
    raise ValueError(f"unknown propagator method {method!r}")


def chain(unitaries: np.ndarray) -> np.ndarray:
    """Time-ordered product U_{n-1} ... U_1 U_0."""
    out = np.eye(4, dtype=complex)
    for u in unitaries:
        out = u @ out
    return out


def ideal_propagator(
    params: SystemParams, t1: float, t2: float, steps: int | None = None, method: str = "magnus4"
) -> np.ndarray:
    """Time-ordered propagator U(t2, t1) of the dissipation-free dynamics."""
    if t2 < t1:
        raise DomainError("ideal_propagator requires t1 <= t2")
    _check_time(params, [t1, t2])
    if steps is None:
        steps = default_steps(params, t2 - t1)
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if t1 == t2:
        return np.eye(4, dtype=complex)
    return chain(step_unitaries(params, np.linspace(t1, t2, steps + 1), method))


def target_gate(gate: Gate) -> np.ndarray:
    """Ideal logical gate in the (|+>, |->) basis."""
    gate = Gate(gate)
    if gate is Gate.GATE1:
        return np.diag([np.exp(1j * math.pi / 4), 1.0]).astype(complex)
    sigma_y = np.array([[0.0, 1j], [-1j, 0.0]])  # i(|+><-| - |-><+|)
    return math.cos(math.pi / 2) * np.eye(2) + 1j * math.sin(math.pi / 2) * sigma_y


def gate_distance(u: np.ndarray, target: np.ndarray) -> float:
    """Frobenius distance min_phi ||u - e^{i phi} target||."""
    overlap = abs(np.trace(target.conj().T @ u))
    sq = np.linalg.norm(u) ** 2 + np.linalg.norm(target) ** 2 - 2.0 * overlap
    return math.sqrt(max(sq, 0.0))


def logical_block(u: np.ndarray) -> np.ndarray:
    idx = np.array(LOGICAL)
    return u[np.ix_(idx, idx)]


def leakage(block: np.ndarray) -> float:
    """Worst-case population lost from the logical span."""
    smin = np.linalg.svd(block, compute_uv=False).min()
    return float(1.0 - smin * smin)


def holonomy(
    params: SystemParams,
    steps: int | None = None,
    method: str = "magnus4",
    max_leakage: float = 0.05,
) -> np.ndarray:
    """Logical 2x2 gate realised by one adiabatic loop.

    Projects U(t_ad, 0) onto span{|+>, |->} and removes the dark-level
    dynamical phase exp(-i eps t_ad).
    """
    if params.alpha < ALPHA_WARN:
        raise DomainError(f"holonomy needs Omega*t_ad >= {ALPHA_WARN}, got {params.alpha:.3g}")
    u = ideal_propagator(params, 0.0, params.t_ad, steps=steps, method=method)
    block = logical_block(u) * np.exp(1j * params.level_energy * params.t_ad)
    lost = leakage(block)
    if lost > max_leakage:
        raise AdiabaticityError(
            f"loop is not adiabatic: {lost:.3e} of the logical population leaks out", lost
        )
    return block


def geometric_holonomy(params: SystemParams, points: int = 4096) -> np.ndarray:
    """Adiabatic-limit holonomy from parallel transport of the dark frame.

    Independent of the propagator: the dark frame is carried around the
    loop by successive-overlap alignment and compared with the logical frame.
    """
    frames = dark_frames(params, np.linspace(0.0, params.t_ad, points + 1))
    return logical_frame().conj().T @ frames[-1]

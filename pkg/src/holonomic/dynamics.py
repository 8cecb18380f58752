"""Reduced density-matrix dynamics.

The Markovian equation is

    d rho / dt = -i [H_0(t), rho] - L(rho),
    L(rho) = [A, Lam rho - rho Lam^dag],

with A = diag(0, 1, 0, -1) and Lam_nk = A_nk Gamma^+(w_nk) / 2 in the
instantaneous eigenbasis of H_0(t) (w_nk = E_n - E_k).  This is the
rate-tensor sum with Gamma^+_{lmnk} = K_lmnk Gamma^+(w_nk) / 2 and
Gamma^-_{lmnk} = K_lmnk Gamma^-(w_lm) / 2, K_lmnk = A_lm A_nk.  The Lamb
shift (imaginary part of the half-Fourier transform) is not included.

The memory-kernel solver keeps the full Born integral over the history of
the interaction-picture state and serves as a cross-check of the Markov
reduction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import qsystem
from .bath import (
    BathParams,
    SpectralDensity,
    correlation_grid,
    lamb_shift,
    markov_valid,
    memory_time,
    rates,
    upward_rate,
)
from .errors import ConfigError, PositivityError
from .qsystem import SystemParams

log = logging.getLogger(__name__)

COUPLING = np.diag([0.0, 1.0, 0.0, -1.0]).astype(complex)

TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-10
EIGEN_TOL = 1e-7
POSITIVITY_ABORT = 1e-4


def coupling_operator() -> np.ndarray:
    return COUPLING.copy()


def _dag(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x.conj(), -1, -2)


def check_density_matrix(rho: np.ndarray, trace_tol: float = TRACE_TOL) -> None:
    """Validate a single 4x4 state or a stack of them."""
    rho = np.asarray(rho)
    if rho.shape[-2:] != (4, 4):
        raise ConfigError(f"density matrix must be 4x4, got shape {rho.shape}")
    if np.max(np.abs(rho - _dag(rho))) > HERMITICITY_TOL:
        raise ConfigError("density matrix is not Hermitian")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.max(np.abs(tr - 1.0)) > trace_tol:
        raise ConfigError("density matrix trace differs from 1")
    if np.min(np.linalg.eigvalsh(rho)) < -EIGEN_TOL:
        raise ConfigError("density matrix has negative eigenvalues")


def pure_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
    return psi[..., :, None] * psi[..., None, :].conj()


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integrator settings.

    ``step`` defaults to ``step_factor / max(Omega, Gamma_max)``, rounded
    down so that the loop time is an integer number of steps.  An explicit
    step must satisfy h < 0.1 / max(Omega, Gamma_max).
    """

    step: float | None = None
    step_factor: float = 0.05
    positivity_every: int = 100
    record_every: int = 100
    tensor_cadence: int = 1
    propagator: str = "magnus4"
    positivity_abort: float = POSITIVITY_ABORT
    lamb_shift: bool = False

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ConfigError("integrator step must be positive")
        if not 0 < self.step_factor < 0.1:
            raise ConfigError("step_factor must lie in (0, 0.1)")
        for name in ("positivity_every", "record_every", "tensor_cadence"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.propagator not in ("midpoint", "magnus4"):
            raise ConfigError(f"unknown propagator {self.propagator!r}")


def max_rate(sys: SystemParams, bath: BathParams) -> float:
    """Largest transition rate between instantaneous levels."""
    e_up, e_dn = qsystem.bright_energies(sys.level_energy, sys.omega)
    levels = np.array([e_up, e_dn, sys.level_energy])
    plus, minus = rates(bath, (levels[:, None] - levels[None, :]).ravel())
    return float(max(plus.max(), minus.max()))


def resolve_grid(sys: SystemParams, bath: BathParams, cfg: IntegratorConfig) -> np.ndarray:
    scale = max(sys.omega, max_rate(sys, bath))
    if cfg.step is None:
        h = cfg.step_factor / scale
    else:
        h = cfg.step
        if h >= 0.1 / scale:
            raise ConfigError(f"step {h:.3g} does not resolve the scale {scale:.3g}; need h < {0.1 / scale:.3g}")
    n = max(1, int(math.ceil(sys.t_ad / h - 1e-9)))
    return np.linspace(0.0, sys.t_ad, n + 1)


@dataclass(frozen=True)
class RedfieldTensor:
    """Rate tensor at one loop time, in the dark/bright basis ``basis``.

    ``plus[l, m, n, k] = K_lmnk Gamma^+(w_nk) / 2`` and
    ``minus[l, m, n, k] = K_lmnk Gamma^-(w_lm) / 2`` with
    ``K_lmnk = A_lm A_nk``; the one-half is the half-Fourier weight of the
    golden-rule rate.
    """

    t: float
    basis: qsystem.DarkBrightBasis
    coupling: np.ndarray
    frequencies: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    @property
    def k(self) -> np.ndarray:
        return np.einsum("lm,nk->lmnk", self.coupling, self.coupling)


def coupling_in_darkbright(basis: qsystem.DarkBrightBasis) -> np.ndarray:
    v = basis.vectors
    return v.conj().T @ COUPLING @ v


def build_redfield_tensor(
    bath: BathParams, sys: SystemParams, t: float, basis: qsystem.DarkBrightBasis | None = None
) -> RedfieldTensor:
    if not markov_valid(sys, bath):
        log.warning("Markov approximation not self-consistent at T = %.4g meV", bath.temperature)
    if basis is None:
        basis = qsystem.dark_bright_basis(sys, t)
    a = coupling_in_darkbright(basis)
    e = basis.energies
    w = e[:, None] - e[None, :]
    up = upward_rate(bath, w)
    k = np.einsum("lm,nk->lmnk", a, a)
    plus = 0.5 * k * up[None, None, :, :]
    # Gamma^-(w_lm) = Gamma^+(w_ml)
    minus = 0.5 * k * up.T[:, :, None, None]
    return RedfieldTensor(t=float(t), basis=basis, coupling=a, frequencies=w, plus=plus, minus=minus)


def dissipator(rho: np.ndarray, tensor: RedfieldTensor) -> np.ndarray:
    """L(rho) from the rate-tensor sum, evaluated in the dark/bright basis."""
    v = tensor.basis.vectors
    r = v.conj().T @ rho @ v
    p, m = tensor.plus, tensor.minus
    out = (
        np.einsum("mrrk,kn->mn", p, r)
        + np.einsum("lrrn,ml->mn", m, r)
        - np.einsum("lnmk,kl->mn", p, r)
        - np.einsum("lnmk,kl->mn", m, r)
    )
    return v @ out @ v.conj().T


def rate_operators(sys: SystemParams, bath: BathParams, times, lamb: bool = False) -> np.ndarray:
    """Lam(t) = sum_nk A_nk Gamma^+(w_nk)/2 |n><k| in the (G, +, 0, -) basis.

    Built from spectral projectors (upper bright, lower bright, dark), so it
    does not depend on the gauge of the degenerate dark pair.  With ``lamb``
    each coefficient gains i Delta(-w_nk), the principal-value part of the
    half-Fourier transform of g.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    e_up, e_dn = qsystem.bright_energies(sys.level_energy, sys.omega)
    energies = np.array([e_up, e_dn, sys.level_energy])
    b = np.zeros((len(times), 4), dtype=complex)
    b[:, 1:] = qsystem.rabi_array(sys, times) / sys.omega
    g = np.zeros(4, dtype=complex)
    g[0] = 1.0
    proj = np.empty((3, len(times), 4, 4), dtype=complex)
    for i, lam in enumerate((e_up, e_dn)):
        vec = (sys.omega * g[None, :] + lam * b) / math.hypot(sys.omega, lam)
        proj[i] = vec[:, :, None] * vec[:, None, :].conj()
    proj[2] = np.diag([0.0, 1.0, 1.0, 1.0])[None] - b[:, :, None] * b[:, None, :].conj()
    w = energies[:, None] - energies[None, :]
    coef = 0.5 * upward_rate(bath, w).astype(complex)
    if lamb:
        coef = coef + 1j * lamb_shift(bath, -w)
    out = np.zeros((len(times), 4, 4), dtype=complex)
    for i in range(3):
        left = proj[i] @ COUPLING
        for j in range(3):
            if coef[i, j] != 0.0:
                out += coef[i, j] * (left @ proj[j])
    return out


def _apply(lam: np.ndarray, a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """L(rho) = [A, Lam rho - rho Lam^dag] for a stack of states."""
    x = lam @ rho
    x = x - _dag(x)  # rho Hermitian: (Lam rho)^dag = rho Lam^dag
    return a @ x - x @ a


@dataclass
class Trajectory:
    """States recorded along one loop.

    ``states`` has shape ``(len(times),) + batch + (4, 4)``.
    """

    times: np.ndarray
    states: np.ndarray
    final: np.ndarray
    min_eigenvalue: float
    diagnostics: dict = field(default_factory=dict)


def _half_step_unitaries(sys: SystemParams, grid: np.ndarray, method: str):
    fine = np.empty(2 * len(grid) - 1)
    fine[0::2] = grid
    fine[1::2] = 0.5 * (grid[:-1] + grid[1:])
    u = qsystem.step_unitaries(sys, fine, method)
    first, second = u[0::2], u[1::2]
    return fine, first, second @ first


def ideal_step_unitaries(sys: SystemParams, cfg: IntegratorConfig, bath: BathParams | None = None):
    """Per-step propagators on the integrator grid used by :func:`evolve_markov`."""
    bath = bath or BathParams(SpectralDensity.superohmic(0.0), 0.0)
    grid = resolve_grid(sys, bath, cfg)
    return grid, _half_step_unitaries(sys, grid, cfg.propagator)[2]


def _check_positivity(rho, t, cfg, worst):
    low = float(np.min(np.linalg.eigvalsh(rho)))
    if low < -cfg.positivity_abort:
        raise PositivityError(f"density matrix lost positivity at t = {t:.6g} (min eigenvalue {low:.3e})", t, low)
    return min(worst, low)


def evolve_markov(
    rho0: np.ndarray, sys: SystemParams, bath: BathParams, cfg: IntegratorConfig | None = None
) -> Trajectory:
    """Integrate the Markovian master equation over one loop [0, t_ad].

    The coherent part is propagated exactly over each step with the
    unitary step propagators of :mod:`qsystem`; the dissipator is integrated
    with classical fourth-order Runge-Kutta in the frame co-moving with those
    propagators (integrating-factor RK4).  ``rho0`` may be a single state or
    a stack of states sharing the same Hamiltonian and bath.
    """
    cfg = cfg or IntegratorConfig()
    rho0 = np.asarray(rho0, dtype=complex)
    check_density_matrix(rho0)
    if not markov_valid(sys, bath):
        log.warning("Markov approximation not self-consistent at T = %.4g meV", bath.temperature)
    grid = resolve_grid(sys, bath, cfg)
    n = len(grid) - 1
    h = grid[1] - grid[0]
    fine, half_u, full_u = _half_step_unitaries(sys, grid, cfg.propagator)

    dissipative = not bath.spectral.is_zero
    if dissipative:
        lam = rate_operators(sys, bath, fine, lamb=cfg.lamb_shift)
        if cfg.tensor_cadence > 1:
            held = (np.arange(len(fine)) // (2 * cfg.tensor_cadence)) * (2 * cfg.tensor_cadence)
            lam = lam[np.minimum(held, len(fine) - 1)]

    rho = rho0.copy()
    record_idx = set(range(0, n + 1, cfg.record_every)) | {n}
    times, states = [0.0], [rho.copy()]
    worst = float(np.min(np.linalg.eigvalsh(rho)))
    a = COUPLING
    for k in range(n):
        u2, u = half_u[k], full_u[k]
        if dissipative:
            u2d, ud = u2.conj().T, u.conj().T
            lam0 = lam[2 * k]
            lam_h = u2d @ lam[2 * k + 1] @ u2
            a_h = u2d @ a @ u2
            lam_1 = ud @ lam[2 * k + 2] @ u
            a_1 = ud @ a @ u
            k1 = -_apply(lam0, a, rho)
            k2 = -_apply(lam_h, a_h, rho + 0.5 * h * k1)
            k3 = -_apply(lam_h, a_h, rho + 0.5 * h * k2)
            k4 = -_apply(lam_1, a_1, rho + h * k3)
            sigma = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            sigma = rho
        rho = u @ sigma @ u.conj().T
        step = k + 1
        if dissipative and (step % cfg.positivity_every == 0 or step == n):
            worst = _check_positivity(rho, grid[step], cfg, worst)
        if step in record_idx:
            times.append(grid[step])
            states.append(rho.copy())
    if worst < -EIGEN_TOL:
        log.warning("Redfield evolution produced eigenvalue %.3e", worst)
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        final=rho,
        min_eigenvalue=worst,
        diagnostics={"steps": n, "step": h, "propagator": cfg.propagator, "frame": sys.frame.value},
    )


@dataclass(frozen=True)
class MemoryConfig:
    """History settings of the memory-kernel solver.

    ``window`` (hbar/meV) bounds the memory integral; ``None`` keeps the
    whole elapsed history.  A finite window must cover the decay of Re g.
    """

    window: float | None = None
    decay_tol: float = 1e-2


def _window_steps(bath, h, n, mem: MemoryConfig) -> int:
    if mem.window is None:
        return n
    steps = max(1, int(round(mem.window / h)))
    tau_e = memory_time(bath)
    g = correlation_grid(bath, [0.0, steps * h])
    if mem.window < 10 * tau_e or abs(g[1].real) > mem.decay_tol * abs(g[0].real):
        raise ConfigError(
            f"memory window {mem.window:.3g} is shorter than the decay of Re g (tau_E = {tau_e:.3g})"
        )
    return min(steps, n)


def evolve_nonmarkov(
    rho0: np.ndarray,
    sys: SystemParams,
    bath: BathParams,
    cfg: IntegratorConfig | None = None,
    memory: MemoryConfig | None = None,
) -> Trajectory:
    """Integrate the Born master equation with its full memory integral.

    Works in the interaction picture of the ideal propagator, where

        d rho~/dt = -[A~(t), Z(t) - Z(t)^dag],
        Z(t) = int_0^t g(tau) A~(t - tau) rho~(t - tau) d tau,

    with the history integral on the trapezoid rule and Heun's method in
    time.  Returns Schroedinger-picture states.
    """
    cfg = cfg or IntegratorConfig()
    memory = memory or MemoryConfig()
    rho0 = np.asarray(rho0, dtype=complex)
    check_density_matrix(rho0)
    grid = resolve_grid(sys, bath, cfg)
    n = len(grid) - 1
    h = grid[1] - grid[0]
    window = _window_steps(bath, h, n, memory) if not bath.spectral.is_zero else 0
    return _memory_evolution(rho0, sys, bath, cfg, grid, window)


def _memory_evolution(rho0, sys, bath, cfg, grid, window, time_local=False):
    n = len(grid) - 1
    h = grid[1] - grid[0]
    full_u = _half_step_unitaries(sys, grid, cfg.propagator)[2]
    cumulative = np.empty((n + 1, 4, 4), dtype=complex)
    cumulative[0] = np.eye(4)
    for k in range(n):
        cumulative[k + 1] = full_u[k] @ cumulative[k]
    a_int = _dag(cumulative) @ COUPLING @ cumulative
    batch = rho0.shape[:-2]

    if window == 0 or bath.spectral.is_zero:
        finals = cumulative[-1] @ rho0 @ cumulative[-1].conj().T
        return Trajectory(
            times=np.array([0.0, grid[-1]]),
            states=np.array([rho0, finals]),
            final=finals,
            min_eigenvalue=float(np.min(np.linalg.eigvalsh(finals))),
            diagnostics={"steps": n, "step": h, "window_steps": 0},
        )

    g = correlation_grid(bath, h * np.arange(window + 1))
    # history X_j = A~(t_j) rho~(t_j)
    hist = np.zeros((n + 1,) + batch + (4, 4), dtype=complex)

    def weights(count):
        w = np.full(count + 1, h)
        w[0] = w[-1] = 0.5 * h
        return w

    def derivative(m, rho_t):
        """Right-hand side at grid index m; also returns X(t_m)."""
        x_now = a_int[m] @ rho_t
        count = min(m, window)
        if count == 0:
            return np.zeros_like(rho_t), x_now
        w = weights(count) * g[: count + 1]
        j = np.arange(1, count + 1)
        if time_local:
            # rho~(t - tau) -> rho~(t): the kernel acts on the current state
            z = np.tensordot(w, a_int[m - np.arange(count + 1)], axes=(0, 0)) @ rho_t
        else:
            z = np.tensordot(w[1:], hist[m - j], axes=(0, 0)) + w[0] * x_now
        z = z - _dag(z)
        return -(a_int[m] @ z - z @ a_int[m]), x_now

    rho = rho0.copy()
    f_now, hist[0] = derivative(0, rho)
    worst = float(np.min(np.linalg.eigvalsh(rho)))
    for k in range(n):
        pred = rho + h * f_now
        f_pred, _ = derivative(k + 1, pred)
        rho = rho + 0.5 * h * (f_now + f_pred)
        f_now, hist[k + 1] = derivative(k + 1, rho)
        if (k + 1) % cfg.positivity_every == 0 or k + 1 == n:
            worst = _check_positivity(
                cumulative[k + 1] @ rho @ cumulative[k + 1].conj().T, grid[k + 1], cfg, worst
            )
    final = cumulative[-1] @ rho @ cumulative[-1].conj().T
    return Trajectory(
        times=np.array([0.0, grid[-1]]),
        states=np.array([rho0, final]),
        final=final,
        min_eigenvalue=worst,
        diagnostics={"steps": n, "step": h, "window_steps": window},
    )


def purity(rho: np.ndarray):
    return np.real(np.einsum("...ij,...ji->...", rho, rho))


def dark_population(sys: SystemParams, t: float, rho: np.ndarray):
    """Population of the instantaneous dark subspace."""
    b = np.zeros(4, dtype=complex)
    b[1:] = qsystem.rabi_array(sys, t) / sys.omega
    proj = np.diag([0.0, 1.0, 1.0, 1.0]) - np.outer(b, b.conj())
    return np.real(np.einsum("ij,...ji->...", proj, rho))


TRAJECTORY_COLUMNS = (
    ["t"]
    + [f"rho_{i}{j}_{part}" for i in range(4) for j in range(4) for part in ("re", "im")]
    + ["purity", "dark_population"]
)


def write_trajectory_csv(path, trajectory: Trajectory, sys: SystemParams, sample: int = 0) -> None:
    """Dump one trajectory as CSV rows (t, rho entries, purity, dark population)."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for t, rho in zip(trajectory.times, trajectory.states):
            r = rho if rho.ndim == 2 else rho.reshape(-1, 4, 4)[sample]
            row = [repr(float(t))]
            for i in range(4):
                for j in range(4):
                    row += [repr(float(r[i, j].real)), repr(float(r[i, j].imag))]
            row += [repr(float(purity(r))), repr(float(dark_population(sys, min(t, sys.t_ad), r)))]
            writer.writerow(row)



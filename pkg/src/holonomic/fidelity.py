"""Gate fidelity against the ideal loop, state averaging and the decay-law fit.

Per sample F = sqrt(<psi_id| rho |psi_id>), where psi_id is the initial
state carried around the loop by the same numerical propagator the
dissipative run uses.  The reported fidelity is the arithmetic mean over a
deterministic lattice of initial states alpha|+> + beta|-> + eta|0>.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from . import qsystem
from .bath import BathParams, rates
from .dynamics import IntegratorConfig, evolve_markov, ideal_step_unitaries
from .errors import ConfigError, DomainError, FitError, NumericalError
from .qsystem import SystemParams

log = logging.getLogger(__name__)

DEFAULT_ETA_SQ = 0.1
DEFAULT_SAMPLES = 32
FIDELITY_SLACK = 1e-9
FIT_RESIDUAL_LIMIT = 1e-2

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class InitialState:
    """alpha|+> + beta|-> + eta|0>."""

    alpha: complex
    beta: complex
    eta: float

    def __post_init__(self):
        norm = abs(self.alpha) ** 2 + abs(self.beta) ** 2 + abs(self.eta) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"initial state is not normalised (norm^2 = {norm!r})")

    @property
    def vector(self) -> np.ndarray:
        v = np.zeros(4, dtype=complex)
        v[qsystem.PLUS] = self.alpha
        v[qsystem.ZERO] = self.eta
        v[qsystem.MINUS] = self.beta
        return v


@dataclass(frozen=True)
class FidelityResult:
    mean: float
    samples: np.ndarray
    n_samples: int
    params: dict = field(default_factory=dict)

    @property
    def minimum(self) -> float:
        return float(np.min(self.samples))

    @property
    def maximum(self) -> float:
        return float(np.max(self.samples))


@dataclass(frozen=True)
class FitResult:
    """Coefficients of F = 1 - t_ad (eta_+ Gamma^+ + eta_- Gamma^-)."""

    eta_plus: float
    eta_minus: float
    residual: float
    covariance: np.ndarray
    residuals: np.ndarray
    quality_ok: bool


def fidelity(rho_final, psi_ideal, slack: float = FIDELITY_SLACK):
    """sqrt(<psi|rho|psi>); works on a single pair or on stacks.

    Small negative overlaps (a Redfield positivity artifact) are clamped to
    zero with a warning; anything below ``-slack`` is an error.
    """
    rho = np.asarray(rho_final, dtype=complex)
    psi = np.asarray(psi_ideal, dtype=complex)
    if np.any(np.abs(np.linalg.norm(psi, axis=-1) - 1.0) > 1e-9):
        raise DomainError("ideal state must be normalised")
    overlap = np.real(np.einsum("...i,...ij,...j->...", psi.conj(), rho, psi))
    if np.any(overlap < -slack):
        raise NumericalError(f"negative fidelity overlap {float(np.min(overlap)):.3e}")
    if np.any(overlap < 0):
        log.warning("clamping negative fidelity overlap %.3e", float(np.min(overlap)))
        overlap = np.maximum(overlap, 0.0)
    out = np.sqrt(overlap)
    return float(out) if out.ndim == 0 else out


def sample_initial_states(n: int, eta_sq: float = DEFAULT_ETA_SQ) -> list[InitialState]:
    """Fibonacci lattice on the logical Bloch sphere with a real leaked amplitude."""
    if n < 1:
        raise ConfigError("need at least one sample")
    if not 0.0 <= eta_sq < 1.0:
        raise DomainError("eta_sq must lie in [0, 1)")
    scale = math.sqrt(1.0 - eta_sq)
    eta = math.sqrt(eta_sq)
    out = []
    for i in range(n):
        z = 1.0 - (2 * i + 1) / n
        half = 0.5 * math.acos(z)
        phi = (i * _GOLDEN_ANGLE) % (2.0 * math.pi)
        a = scale * math.cos(half)
        b = scale * math.sin(half) * complex(math.cos(phi), math.sin(phi))
        # absorb rounding so the norm holds to 1e-12
        fix = math.sqrt((1.0 - eta_sq) / (a * a + abs(b) ** 2)) if (a or b) else 1.0
        out.append(InitialState(alpha=complex(a * fix), beta=b * fix, eta=eta))
    return out


def averaged_fidelity(
    sys: SystemParams,
    bath: BathParams,
    samples: Sequence[InitialState] | None = None,
    cfg: IntegratorConfig | None = None,
) -> FidelityResult:
    cfg = cfg or IntegratorConfig()
    samples = list(samples) if samples is not None else sample_initial_states(DEFAULT_SAMPLES)
    psi0 = np.array([s.vector for s in samples])
    rho0 = psi0[:, :, None] * psi0[:, None, :].conj()
    trajectory = evolve_markov(rho0, sys, bath, cfg)

    _, steps = ideal_step_unitaries(sys, cfg, bath)
    u = np.eye(4, dtype=complex)
    for step in steps:
        u = step @ u
    psi_id = psi0 @ u.T
    per_sample = fidelity(trajectory.final, psi_id)
    if np.any(per_sample > 1.0 + FIDELITY_SLACK):
        # Redfield positivity artifact; reported, not clipped
        log.warning("per-sample fidelity exceeds one: %.3e", float(per_sample.max()) - 1.0)
    mean = float(math.fsum(per_sample) / len(per_sample))
    params = {
        "epsilon": sys.epsilon,
        "omega": sys.omega,
        "t_ad": sys.t_ad,
        "gate": sys.gate.value,
        "k1": bath.spectral.k1,
        "k3": bath.spectral.k3,
        "omega_c": bath.spectral.omega_c,
        "temperature": bath.temperature,
        "min_eigenvalue": trajectory.min_eigenvalue,
    }
    return FidelityResult(mean=mean, samples=per_sample, n_samples=len(samples), params=params)


def decay_rates(sys: SystemParams, bath: BathParams) -> tuple[float, float]:
    """(Gamma^+, Gamma^-) of the dark to upper-bright transition, w = Omega^2 / eps."""
    plus, minus = rates(bath, sys.omega**2 / sys.epsilon)
    return float(plus), float(minus)


def fit_decay(
    points: Sequence[tuple[float, float]],
    sys: SystemParams,
    bath_of: Callable[[float], BathParams],
    residual_limit: float = FIT_RESIDUAL_LIMIT,
) -> FitResult:
    """Nonnegative least-squares fit of (eta_+, eta_-) to points (x, F).

    ``bath_of(x)`` gives the bath at each abscissa (a temperature or a
    coupling).  ``residual`` is the root-mean-square misfit in F units.
    """
    if len(points) < 3:
        raise FitError("need at least three points")
    design = np.array([decay_rates(sys, bath_of(x)) for x, _ in points]) * sys.t_ad
    target = np.array([1.0 - f for _, f in points])
    if np.linalg.matrix_rank(design, tol=1e-12 * max(np.abs(design).max(), 1e-300)) < 2:
        raise FitError("design matrix is singular: the points do not separate Gamma^+ from Gamma^-")
    coef, _ = optimize.nnls(design, target)
    misfit = target - design @ coef
    dof = max(len(points) - 2, 1)
    sigma2 = float(misfit @ misfit) / dof
    covariance = sigma2 * np.linalg.pinv(design.T @ design)
    residual = float(np.sqrt(np.mean(misfit**2)))
    ok = residual <= residual_limit
    if not ok:
        log.warning("decay fit residual %.3e exceeds %.1e", residual, residual_limit)
    return FitResult(
        eta_plus=float(coef[0]),
        eta_minus=float(coef[1]),
        residual=residual,
        covariance=covariance,
        residuals=misfit,
        quality_ok=ok,
    )

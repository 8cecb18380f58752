"""Bosonic environment: spectral densities, correlation function, transition
rates and Markov-validity scales.

Rates follow the golden-rule form J(w) (coth(w / 2T) -+ 1).  The correlation
function carries the 1/pi normalisation, so that twice the real part of its
half-Fourier transform reproduces those rates.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalError
from .qsystem import SystemParams


class DensityKind(str, enum.Enum):
    OHMIC = "ohmic"
    SUPEROHMIC = "superohmic"
    MIXED = "mixed"


@dataclass(frozen=True)
class SpectralDensity:
    """J(w) = (k1 w + k3 w^3) exp(-(w / omega_c)^2), restricted by ``kind``.

    ``k1`` is dimensionless, ``k3`` is in meV^-2, ``omega_c`` in meV.
    """

    kind: DensityKind
    k1: float = 0.0
    k3: float = 0.0
    omega_c: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", DensityKind(self.kind))
        if self.k1 < 0 or self.k3 < 0:
            raise DomainError("couplings k1, k3 must be non-negative")
        if not self.omega_c > 0:
            raise DomainError("cutoff omega_c must be positive")
        if self.kind is DensityKind.OHMIC and self.k3 != 0:
            raise DomainError("an ohmic density has no k3 term")
        if self.kind is DensityKind.SUPEROHMIC and self.k1 != 0:
            raise DomainError("a superohmic density has no k1 term")
        if self.kind is DensityKind.MIXED and not (self.k1 > 0 and self.k3 > 0):
            raise DomainError("a mixed density needs k1 > 0 and k3 > 0")

    @classmethod
    def ohmic(cls, k1: float, omega_c: float = 0.5) -> "SpectralDensity":
        return cls(DensityKind.OHMIC, k1=k1, omega_c=omega_c)

    @classmethod
    def superohmic(cls, k3: float, omega_c: float = 0.5) -> "SpectralDensity":
        return cls(DensityKind.SUPEROHMIC, k3=k3, omega_c=omega_c)

    @classmethod
    def mixed(cls, k1: float, k3: float, omega_c: float = 0.5) -> "SpectralDensity":
        return cls(DensityKind.MIXED, k1=k1, k3=k3, omega_c=omega_c)

    @property
    def is_zero(self) -> bool:
        return self.k1 == 0 and self.k3 == 0

    def over_omega(self, w):
        """J(w) / w, finite at w = 0."""
        w = np.asarray(w, dtype=float)
        return (self.k1 + self.k3 * w * w) * np.exp(-((w / self.omega_c) ** 2))


@dataclass(frozen=True)
class BathParams:
    spectral: SpectralDensity
    temperature: float

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature >= 0):
            raise DomainError(f"temperature must be >= 0, got {self.temperature!r}")


@dataclass(frozen=True)
class QuadratureConfig:
    """Adaptive Gauss-Kronrod settings for the correlation integral.

    The frequency integral is truncated at ``cutoff_factor * omega_c``; the
    Gaussian cutoff makes the integrand negligible beyond.
    """

    cutoff_factor: float = 8.0
    rel_abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    limit: int = 400


@dataclass(frozen=True)
class CorrelationSample:
    tau: float
    g: complex


@dataclass(frozen=True)
class MarkovThreshold:
    """T_M = k3 (Omega^2/eps)^3 and tau_D = (eps/Omega^2)^3 / k3.

    ``applicable`` is False for a density without a cubic term; both scales
    are then NaN.
    """

    temperature: float
    tau_d: float
    applicable: bool = True


def spectral_density(sd: SpectralDensity, omega):
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("spectral density is defined for omega >= 0")
    out = w * sd.over_omega(w)
    return float(out) if out.ndim == 0 else out


def _w_times_occupation(w, temperature):
    """w * n(w) with n the Bose factor; tends to T as w -> 0, and 0 at T = 0."""
    w = np.asarray(w, dtype=float)
    if temperature == 0:
        return np.zeros_like(w)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        x = w / temperature
        out = np.where(x > 1e-8, w / np.expm1(x), temperature * (1.0 - 0.5 * x))
    return np.where(np.isfinite(out), out, 0.0)


def rates(bath: BathParams, omega):
    """Vectorised (Gamma^+, Gamma^-) at signed transition frequencies.

    Gamma^+(w > 0) = J(w)(coth(w/2T) - 1) is absorption, Gamma^-(w > 0) =
    J(w)(coth(w/2T) + 1) emission; a negative frequency swaps the two.  At
    w = 0 the ohmic limit 2 k1 T is returned for both.
    """
    w = np.asarray(omega, dtype=float)
    a = np.abs(w)
    sd = bath.spectral
    up = 2.0 * sd.over_omega(a) * _w_times_occupation(a, bath.temperature)
    down = up + 2.0 * a * sd.over_omega(a)
    plus = np.where(w >= 0, up, down)
    minus = np.where(w >= 0, down, up)
    return plus, minus


def rate_gamma(bath: BathParams, omega_nk: float) -> tuple[float, float]:
    plus, minus = rates(bath, float(omega_nk))
    return float(plus), float(minus)


def upward_rate(bath: BathParams, omega):
    """Golden-rule rate of a transition that raises the system energy by ``omega``."""
    return rates(bath, omega)[0]


def _j_coth(sd: SpectralDensity, temperature: float):
    """Integrand factor J(w) coth(w / 2T), finite at w = 0."""

    def f(w):
        return sd.over_omega(w) * (w + 2.0 * _w_times_occupation(w, temperature))

    return f


def correlation(bath: BathParams, tau: float, quadrature: QuadratureConfig | None = None) -> complex:
    """Bath correlation g(tau) = (1/pi) int_0^inf J [coth cos(w tau) - i sin(w tau)] dw."""
    quadrature = quadrature or QuadratureConfig()
    tau = float(tau)
    if not np.isfinite(tau):
        raise DomainError("tau must be finite")
    sd = bath.spectral
    if sd.is_zero:
        return 0j
    upper = quadrature.cutoff_factor * sd.omega_c
    # scale of the integrand for the absolute tolerance
    probe = np.linspace(0.0, upper, 65)
    scale = max(float(np.max(np.abs(_j_coth(sd, bath.temperature)(probe)))), 1e-300) * upper
    tol = quadrature.rel_abs_tol * scale
    jc = _j_coth(sd, bath.temperature)
    a = abs(tau)
    opts = dict(epsabs=tol, epsrel=quadrature.rel_tol, limit=quadrature.limit)
    if a == 0.0:
        re, err_re = integrate.quad(jc, 0.0, upper, **opts)
        im, err_im = 0.0, 0.0
    else:
        re, err_re = integrate.quad(jc, 0.0, upper, weight="cos", wvar=a, **opts)
        im, err_im = integrate.quad(
            lambda w: w * sd.over_omega(w), 0.0, upper, weight="sin", wvar=a, **opts
        )
    if max(err_re, err_im) > 100 * tol + 1e-6 * max(abs(re), abs(im)):
        raise NumericalError(
            f"correlation quadrature did not converge at tau={tau}: errors {err_re:.2e}, {err_im:.2e}"
        )
    im = -im if tau > 0 else im
    return complex(re / math.pi, im / math.pi)


def correlation_samples(bath: BathParams, taus, quadrature: QuadratureConfig | None = None):
    return [CorrelationSample(float(t), correlation(bath, t, quadrature)) for t in taus]


def _panel_rule(upper: float, panels: int, order: int = 16):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    nodes = (edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def correlation_grid(
    bath: BathParams, taus, quadrature: QuadratureConfig | None = None, panels: int = 64
) -> np.ndarray:
    """g(tau) on many points at once with composite Gauss-Legendre panels.

    The result is compared with a rule on half as many panels; a discrepancy
    above the configured tolerance raises :class:`NumericalError`.
    """
    quadrature = quadrature or QuadratureConfig()
    taus = np.asarray(taus, dtype=float)
    sd = bath.spectral
    if sd.is_zero:
        return np.zeros(taus.shape, dtype=complex)
    upper = quadrature.cutoff_factor * sd.omega_c
    jc = _j_coth(sd, bath.temperature)

    def evaluate(n):
        nodes, weights = _panel_rule(upper, n)
        phase = np.outer(np.abs(taus), nodes)
        re = np.cos(phase) @ (weights * jc(nodes))
        im = -np.sign(taus) * (np.sin(phase) @ (weights * nodes * sd.over_omega(nodes)))
        return (re + 1j * im) / math.pi

    fine = evaluate(panels)
    coarse = evaluate(panels // 2)
    scale = float(np.max(np.abs(fine))) if fine.size else 0.0
    err = float(np.max(np.abs(fine - coarse))) if fine.size else 0.0
    if err > max(1e3 * quadrature.rel_abs_tol * scale, 1e-300):
        raise NumericalError(f"correlation panel rule unresolved: discrepancy {err:.2e} (scale {scale:.2e})")
    return fine


def half_fourier(
    bath: BathParams, omega: float, quadrature: QuadratureConfig | None = None, real_only: bool = False
) -> complex:
    """int_0^inf g(tau) exp(i omega tau) d tau by nested quadrature.

    The outer integral is a Fourier-type integral on [0, inf) (QUADPACK
    QAWF) over values of g computed numerically.  Twice its real part equals
    the emission rate Gamma^-(omega) for omega > 0; the imaginary part is the
    principal-value (Lamb shift) piece that the master equation omits.
    """
    if omega == 0:
        raise DomainError("half_fourier needs omega != 0")
    w = abs(omega)
    sign = 1.0 if omega > 0 else -1.0

    def re_g(t):
        return correlation(bath, t, quadrature).real

    def im_g(t):
        return correlation(bath, t, quadrature).imag

    def fourier(f, weight):
        return integrate.quad(f, 0.0, np.inf, weight=weight, wvar=w, limlst=200)[0]

    # g e^{i w t} = (Re g + i Im g)(cos + i sign sin)
    real = fourier(re_g, "cos") - sign * fourier(im_g, "sin")
    if real_only:
        return complex(real, 0.0)
    return complex(real, sign * fourier(re_g, "sin") + fourier(im_g, "cos"))


def half_fourier_rate(bath: BathParams, omega: float, quadrature: QuadratureConfig | None = None) -> float:
    """2 Re int_0^inf g(tau) e^{i omega tau} d tau, the emission rate at omega."""
    return 2.0 * half_fourier(bath, omega, quadrature, real_only=True).real


def _principal(f, pole: float, upper: float, opts: dict) -> float:
    """P int_0^upper f(w) / (w - pole) dw."""
    if 0.0 < pole < upper:
        return integrate.quad(f, 0.0, upper, weight="cauchy", wvar=pole, **opts)[0]
    return integrate.quad(lambda w: f(w) / (w - pole), 0.0, upper, **opts)[0]


def lamb_shift(bath: BathParams, omega, quadrature: QuadratureConfig | None = None):
    """Imaginary part of int_0^inf g(tau) exp(i omega tau) d tau.

    Closed form of the principal-value piece,

        (1/pi) [ -P int J (n+1) / (w' - omega) + P int J n / (w' + omega) ] dw',

    which at omega = 0 reduces to -(1/pi) int J(w') / w' dw'.
    """
    quadrature = quadrature or QuadratureConfig()
    sd = bath.spectral
    omegas = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.zeros(omegas.shape)
    if sd.is_zero:
        return out if np.ndim(omega) else float(out[0])
    upper = quadrature.cutoff_factor * sd.omega_c
    temp = bath.temperature
    opts = dict(epsabs=1e-14, epsrel=quadrature.rel_tol, limit=quadrature.limit)

    def emit(w):
        return sd.over_omega(w) * (w + _w_times_occupation(w, temp))

    def absorb(w):
        return sd.over_omega(w) * _w_times_occupation(w, temp)

    flat = out.reshape(-1)
    for i, w in enumerate(omegas.ravel()):
        if w == 0.0:
            val = -integrate.quad(sd.over_omega, 0.0, upper, **opts)[0]
        else:
            val = -_principal(emit, w, upper, opts) + _principal(absorb, -w, upper, opts)
        flat[i] = val / math.pi
    return out if np.ndim(omega) else float(out[0])


def memory_time(bath: BathParams) -> float:
    """Bath memory time tau_E = 1 / (2 pi T)."""
    if bath.temperature <= 0:
        raise DomainError("memory time diverges at T = 0; the Markov solver cannot be used")
    return 1.0 / (2.0 * math.pi * bath.temperature)


def markov_threshold(sys: SystemParams, sd: SpectralDensity) -> MarkovThreshold:
    if sd.k3 == 0:
        return MarkovThreshold(temperature=math.nan, tau_d=math.nan, applicable=False)
    w = sys.omega**2 / sys.epsilon
    return MarkovThreshold(temperature=sd.k3 * w**3, tau_d=1.0 / (sd.k3 * w**3))


def markov_valid(sys: SystemParams, bath: BathParams) -> bool:
    """Self-consistency of the Markov approximation, tau_E < tau_D.

    With a cubic term this is T > T_M.  A purely ohmic bath is checked
    against the decay time set by the ohmic emission rate at Omega^2/eps.
    """
    if bath.spectral.is_zero:
        return True
    if bath.temperature <= 0:
        return False
    threshold = markov_threshold(sys, bath.spectral)
    if threshold.applicable:
        return bath.temperature > threshold.temperature
    _, emission = rate_gamma(bath, sys.omega**2 / sys.epsilon)
    return emission == 0 or memory_time(bath) < 1.0 / emission

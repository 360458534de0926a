"""Exact moments of mixed trigonometric-polynomial functions of noise.

Each control channel of the vehicle carries an additive random disturbance
with a known distribution (Beta, Uniform or Gaussian).  Propagating state
moments through the dynamics requires expectations of the form

    E[(delta * w)^p * cos(delta * w)^q * sin(delta * w)^r]

where ``w`` is the disturbance and ``delta`` is the time step.  These are
obtained in closed form from derivatives of the characteristic function
``Phi(t) = E[exp(i t w)]``: expanding the cosine and sine powers into
complex exponentials gives a finite sum of shifted derivative evaluations,

    E[w^p cos(w)^q sin(w)^r]
        = 1 / (i^(p+r) 2^(q+r))
          * sum_{g=0}^{q} sum_{h=0}^{r} C(q,g) C(r,h) (-1)^(r-h)
            * Phi^(p)(2(g+h) - q - r)

and the scaling ``w -> delta*w`` turns an evaluation at ``t`` into
``delta^p * Phi^(p)(delta * t)``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Union

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_TOTAL_POWER = 8

_CHANNELS = ("speed_v", "altitude_z", "heading_psi")


class NumericalFailure(RuntimeError):
    """A moment computation did not converge or produced a non-finite value."""


@dataclass(frozen=True)
class Beta:
    """Beta distribution on the unit interval [0, 1]."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(
                f"Beta shape parameters must be positive, got "
                f"alpha={self.alpha}, beta={self.beta}"
            )


@dataclass(frozen=True)
class Uniform:
    """Uniform distribution on [low, high].

    low == high is allowed and denotes a point mass, so noise-free channels
    can be expressed without a separate distribution type.
    """

    low: float
    high: float

    def __post_init__(self) -> None:
        if not self.low <= self.high:
            raise ValueError(f"Uniform requires low <= high, got [{self.low}, {self.high}]")


@dataclass(frozen=True)
class Gaussian:
    """Gaussian distribution with mean and standard deviation.

    std == 0 is allowed and denotes a point mass at the mean.
    """

    mean: float
    std: float

    def __post_init__(self) -> None:
        if not self.std >= 0:
            raise ValueError(f"Gaussian std must be non-negative, got {self.std}")


Distribution = Union[Beta, Uniform, Gaussian]


@dataclass(frozen=True)
class NoiseSpec:
    """Disturbance model of one control channel.

    Attributes:
        channel: Which control input the disturbance rides on.  One of
            ``"speed_v"``, ``"altitude_z"``, ``"heading_psi"``.
        distribution: The disturbance law.
    """

    channel: str
    distribution: Distribution

    def __post_init__(self) -> None:
        if self.channel not in _CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}, expected one of {_CHANNELS}")


@dataclass(frozen=True, order=True)
class MixedTrigMomentKey:
    """Identifies E[(delta*w)^p cos(delta*w)^q sin(delta*w)^r].

    Attributes:
        p: Power of the scaled disturbance itself.
        q: Power of the cosine factor.
        r: Power of the sine factor.
        delta: Scale applied to the disturbance (the time step).
    """

    p: int
    q: int
    r: int
    delta: float

    def __post_init__(self) -> None:
        if min(self.p, self.q, self.r) < 0:
            raise ValueError(f"moment powers must be non-negative, got {(self.p, self.q, self.r)}")
        if self.p + self.q + self.r > MAX_TOTAL_POWER:
            raise ValueError(
                f"total moment power {self.p + self.q + self.r} exceeds "
                f"supported maximum {MAX_TOTAL_POWER}"
            )


@dataclass(frozen=True)
class TrigMomentTable:
    """All mixed trigonometric moments of one channel up to a power cap.

    Entries are real numbers keyed by (p, q, r, delta); the table is
    immutable once built.
    """

    spec: NoiseSpec
    delta: float
    entries: Mapping[MixedTrigMomentKey, float] = field(repr=False)

    def value(self, p: int, q: int, r: int) -> float:
        return self.entries[MixedTrigMomentKey(p, q, r, self.delta)]


def _gaussian_cf_derivative(mean: float, std: float, order: int, t: float) -> complex:
    # Phi(t) = exp(i*mean*t - std^2 t^2 / 2).  The n-th derivative is
    # P_n(t) * Phi(t) with P_0 = 1 and P_{n+1} = P_n' + (i*mean - std^2 t) P_n.
    var = std * std
    coeffs = [complex(1.0)]
    for _ in range(order):
        nxt = [complex(0.0)] * (len(coeffs) + 1)
        for k, c in enumerate(coeffs):
            if k >= 1:
                nxt[k - 1] += k * c
            nxt[k] += 1j * mean * c
            nxt[k + 1] += -var * c
        coeffs = nxt
    poly = complex(0.0)
    for c in reversed(coeffs):
        poly = poly * t + c
    return poly * cmath.exp(1j * mean * t - 0.5 * var * t * t)


def _uniform_cf_derivative(low: float, high: float, order: int, t: float) -> complex:
    # The n-th derivative of the characteristic function of w is
    # i^n E[w^n exp(i t w)].
    if low == high:
        return (1j * low) ** order * cmath.exp(1j * t * low)
    span = high - low

    def raw_moment(m: int) -> float:
        return (high ** (m + 1) - low ** (m + 1)) / ((m + 1) * span)

    scale = max(abs(low), abs(high))
    if abs(t) * scale < 1.0:
        # Taylor series about t=0: E[w^n e^{itw}] = sum_j (it)^j mu_{n+j} / j!
        total = complex(0.0)
        term_base = complex(1.0)
        for j in range(120):
            total += term_base * raw_moment(order + j)
            term_base *= 1j * t / (j + 1)
            if abs(term_base) * scale ** (order + j + 1) < 1e-18 * max(1.0, abs(total)):
                break
        else:
            raise NumericalFailure(
                f"uniform moment series did not converge for order={order}, t={t}"
            )
        return (1j) ** order * total
    # Integration by parts: I_m = integral_low^high w^m e^{itw} dw satisfies
    # I_m = (high^m e^{it*high} - low^m e^{it*low}) / (it) - (m/(it)) I_{m-1}.
    it = 1j * t
    eh = cmath.exp(it * high)
    el = cmath.exp(it * low)
    value = (eh - el) / it
    for m in range(1, order + 1):
        value = (high**m * eh - low**m * el) / it - (m / it) * value
    return (1j) ** order * (value / span)


def _beta_cf_derivative(alpha: float, beta: float, order: int, t: float) -> complex:
    # Phi(t) = 1F1(alpha; alpha+beta; it), so
    # Phi^(n)(t) = i^n * (alpha)_n / (alpha+beta)_n * 1F1(alpha+n; alpha+beta+n; it).
    prefactor = (1j) ** order
    for k in range(order):
        prefactor *= (alpha + k) / (alpha + beta + k)
    a = alpha + order
    b = alpha + beta + order
    z = 1j * t
    term = complex(1.0)
    total = complex(1.0)
    small_streak = 0
    for m in range(1, 500):
        term *= (a + m - 1) / (b + m - 1) * z / m
        total += term
        if abs(term) <= 1e-12 * max(abs(total), 1e-12):
            small_streak += 1
            if small_streak >= 2:
                return prefactor * total
        else:
            small_streak = 0
    raise NumericalFailure(
        f"confluent hypergeometric series did not converge for "
        f"Beta({alpha}, {beta}), order={order}, t={t}"
    )


def char_fn_derivative(spec: NoiseSpec, order: int, t: float) -> complex:
    """Evaluate the order-th derivative of the characteristic function at t.

    Args:
        spec: Channel disturbance model.
        order: Derivative order, 0 <= order <= 8.
        t: Evaluation point.

    Returns:
        Phi^(order)(t) as a complex number.

    Raises:
        ValueError: If the order is negative or above the supported cap.
        NumericalFailure: If a series evaluation fails to converge.
    """
    if not 0 <= order <= MAX_TOTAL_POWER:
        raise ValueError(f"derivative order must be in [0, {MAX_TOTAL_POWER}], got {order}")
    dist = spec.distribution
    if isinstance(dist, Gaussian):
        if dist.std == 0.0:
            return (1j * dist.mean) ** order * cmath.exp(1j * t * dist.mean)
        return _gaussian_cf_derivative(dist.mean, dist.std, order, t)
    if isinstance(dist, Uniform):
        return _uniform_cf_derivative(dist.low, dist.high, order, t)
    if isinstance(dist, Beta):
        return _beta_cf_derivative(dist.alpha, dist.beta, order, t)
    raise TypeError(f"unsupported distribution type {type(dist).__name__}")


def mixed_trig_moment(spec: NoiseSpec, key: MixedTrigMomentKey) -> float:
    """Compute E[(delta*w)^p cos(delta*w)^q sin(delta*w)^r] in closed form.

    The result of the complex-exponential expansion is mathematically real;
    a residual imaginary part above 1e-9 in magnitude signals a numerical
    problem and raises instead of being silently dropped.
    """
    p, q, r, delta = key.p, key.q, key.r, key.delta
    total = complex(0.0)
    for g in range(q + 1):
        cg = math.comb(q, g)
        for h in range(r + 1):
            weight = cg * math.comb(r, h) * (-1) ** (r - h)
            shift = float(2 * (g + h) - q - r)
            # d^p/dt^p Phi(delta*t) = delta^p * Phi^(p)(delta*t)
            total += weight * char_fn_derivative(spec, p, delta * shift)
    total *= delta**p / ((1j) ** (p + r) * 2 ** (q + r))
    if abs(total.imag) > 1e-9:
        raise NumericalFailure(
            f"moment {key} for {spec} has non-negligible imaginary part {total.imag:.3e}"
        )
    value = total.real
    if not math.isfinite(value):
        raise NumericalFailure(f"moment {key} for {spec} is not finite")
    return value


def quadrature_moment_oracle(spec: NoiseSpec, key: MixedTrigMomentKey, nodes: int = 256) -> float:
    """Numerically integrate the same moment as an independent cross-check.

    Uses Gauss-Jacobi quadrature for Beta weights, Gauss-Legendre for the
    Uniform, and Gauss-Legendre on the interval mean +- 10 std for the
    Gaussian.  Intended for validation, not for production use.
    """
    if nodes < 64:
        raise ValueError(f"oracle needs at least 64 quadrature nodes, got {nodes}")
    p, q, r, delta = key.p, key.q, key.r, key.delta

    def integrand(w):
        s = delta * w
        return s**p * np.cos(s) ** q * np.sin(s) ** r

    dist = spec.distribution
    if isinstance(dist, Beta):
        # Gauss-Jacobi on [-1,1] with weight (1-x)^a (1+x)^b maps to the
        # Beta(alpha, beta) weight on [0,1] via x = 2w - 1.
        x, wgt = roots_jacobi(nodes, dist.beta - 1.0, dist.alpha - 1.0)
        w = (x + 1.0) / 2.0
        norm = math.gamma(dist.alpha) * math.gamma(dist.beta) / math.gamma(dist.alpha + dist.beta)
        scale = 0.5 ** (dist.alpha + dist.beta - 1.0) / norm
        return float((wgt * integrand(w)).sum() * scale)
    if isinstance(dist, Uniform):
        if dist.low == dist.high:
            return float(integrand(dist.low))
        x, wgt = roots_legendre(nodes)
        w = dist.low + (x + 1.0) * (dist.high - dist.low) / 2.0
        return float((wgt * integrand(w)).sum() / 2.0)
    if isinstance(dist, Gaussian):
        if dist.std == 0.0:
            return float(integrand(dist.mean))
        x, wgt = roots_legendre(nodes)
        half_width = 10.0 * dist.std
        w = dist.mean + x * half_width
        dens = [
            math.exp(-((wi - dist.mean) ** 2) / (2 * dist.std**2))
            / (dist.std * math.sqrt(2 * math.pi))
            for wi in w
        ]
        return float(sum(wg * d * iv for wg, d, iv in zip(wgt, dens, integrand(w))) * half_width)
    raise TypeError(f"unsupported distribution type {type(dist).__name__}")


def build_moment_table(spec: NoiseSpec, delta: float, max_total_power: int = 4) -> TrigMomentTable:
    """Tabulate every mixed trigonometric moment with p+q+r <= cap.

    Args:
        spec: Channel disturbance model.
        delta: Time step scaling the disturbance.
        max_total_power: Inclusive cap on p+q+r.

    Returns:
        An immutable table whose (0,0,0) entry equals one exactly.

    Raises:
        NumericalFailure: If any entry is non-finite or fails to converge.
    """
    if not 0 <= max_total_power <= MAX_TOTAL_POWER:
        raise ValueError(f"max_total_power must be in [0, {MAX_TOTAL_POWER}]")
    entries = {}
    for total in range(max_total_power + 1):
        for p in range(total + 1):
            for q in range(total - p + 1):
                r = total - p - q
                key = MixedTrigMomentKey(p, q, r, delta)
                entries[key] = mixed_trig_moment(spec, key)
    return TrigMomentTable(spec=spec, delta=delta, entries=MappingProxyType(entries))

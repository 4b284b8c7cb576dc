"""Gamma, two-parameter Mittag-Leffler and Wright-M evaluation for real arguments.

Every scalar evaluator returns an :class:`EvalResult` carrying an absolute
error estimate next to the value.  Grid code uses :func:`mittag_leffler_values`,
which shares the series and the stopping rule of :func:`mittag_leffler`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from mpmath import mp
from scipy import integrate, special

import config
from errors import DomainError, PoleError

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
_CHUNK = 64
_LOG_MAX = 700.0
# stop once the geometric tail bound drops below this fraction of the sum
_TAIL_REL = 1e-17
# relative error the double-precision series must reach before extended precision takes over
_CANCEL_REL = 1e-13


@dataclass(frozen=True)
class EvalResult:
    value: float
    est_abs_error: float
    terms_used: int

    def __float__(self) -> float:
        return self.value


def gamma_fn(x: float) -> float:
    """Γ(x) for real x; raises PoleError at non-positive integers."""
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"Gamma argument must be finite, got {x}")
    if x <= 0 and x == math.floor(x):
        raise PoleError(f"Gamma has a pole at x={x:g}")
    if x > config.GAMMA_MAX_ARG:
        raise OverflowError(f"Gamma({x:g}) overflows double precision (cap {config.GAMMA_MAX_ARG:g})")
    return float(special.gamma(x))


def _check_ml_parameters(alpha: float, beta: float) -> None:
    if not (alpha > 0 and beta > 0):
        raise DomainError(f"Mittag-Leffler parameters must be positive, got alpha={alpha}, beta={beta}")
    if alpha > 2:
        raise DomainError(f"Mittag-Leffler order must lie in (0, 2], got alpha={alpha}")


def _ml_extended(alpha: float, beta: float, z: float, abs_sum: float) -> float:
    # enough digits to absorb the cancellation measured by the double-precision pass
    digits = 25 + int(2 * math.log10(max(abs_sum, 1.0)))
    with mp.workdps(digits):
        a, b, zz = mp.mpf(alpha), mp.mpf(beta), mp.mpf(z)
        total = mp.rgamma(b)
        tol = mp.mpf(10) ** (-digits)
        k = 1
        while k <= config.ML_MAX_TERMS:
            term = zz**k * mp.rgamma(a * k + b)
            total += term
            past_peak = abs(zz) * mp.gamma(a * k + b) < mp.gamma(a * (k + 1) + b)
            if past_peak and abs(term) <= tol * max(abs(total), tol):
                return float(total)
            k += 1
    raise DomainError(f"Mittag-Leffler series at z={z:g} did not settle within {config.ML_MAX_TERMS} terms")


def _ml_series(alpha: float, beta: float, z: np.ndarray):
    """Vectorized series with Neumaier compensation.

    Returns (values, abs_error, terms_used) with the shapes of the flattened z.
    """
    n = z.size
    total = np.full(n, float(special.rgamma(beta)))
    comp = np.zeros(n)
    abs_sum = np.abs(total)
    trunc = np.zeros(n)
    terms_used = np.ones(n, dtype=int)
    done = np.zeros(n, dtype=bool)
    with np.errstate(divide="ignore"):
        log_abs_z = np.log(np.abs(z))
    negative = z < 0

    k0 = 1
    while not done.all():
        if k0 > config.ML_MAX_TERMS:
            raise DomainError(f"Mittag-Leffler series did not settle within {config.ML_MAX_TERMS} terms")
        active = np.flatnonzero(~done)
        ks = np.arange(k0, k0 + _CHUNK, dtype=float)
        lz = log_abs_z[active][:, None]
        log_terms = ks[None, :] * lz - special.gammaln(alpha * ks + beta)[None, :]
        if np.any(log_terms > _LOG_MAX):
            raise DomainError("Mittag-Leffler series term overflows double precision")
        magnitudes = np.exp(log_terms)
        odd = (ks % 2 == 1)[None, :]
        terms = np.where(negative[active][:, None] & odd, -magnitudes, magnitudes)

        s = total[active]
        c = comp[active]
        for j in range(_CHUNK):
            tj = terms[:, j]
            new = s + tj
            c = c + np.where(np.abs(s) >= np.abs(tj), (s - new) + tj, (tj - new) + s)
            s = new
        total[active] = s
        comp[active] = c
        abs_sum[active] += magnitudes.sum(axis=1)

        k_last = ks[-1]
        log_ratio = lz[:, 0] + special.gammaln(alpha * k_last + beta) - special.gammaln(alpha * (k_last + 1) + beta)
        ratio = np.exp(log_ratio)
        last = magnitudes[:, -1]
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(ratio < 1, last * ratio / (1 - ratio), np.inf)
        tail = np.where(np.isfinite(lz[:, 0]), tail, 0.0)
        finished = tail <= _TAIL_REL * np.abs(s + c) + 1e-2 * _EPS * abs_sum[active]
        trunc[active[finished]] = tail[finished]
        terms_used[active[finished]] = int(k_last) + 1
        done[active[finished]] = True
        k0 += _CHUNK

    values = total + comp
    errors = 2.0 * trunc + 4.0 * _EPS * abs_sum
    return values, errors, terms_used, abs_sum


def _ml_evaluate(alpha: float, beta: float, z):
    _check_ml_parameters(alpha, beta)
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    if not np.all(np.isfinite(flat)):
        raise DomainError("Mittag-Leffler argument must be finite")
    if np.any(np.abs(flat) > config.ML_MAX_ABS_Z):
        worst = float(np.max(np.abs(flat)))
        raise DomainError(f"|z|={worst:g} exceeds the validated Mittag-Leffler range {config.ML_MAX_ABS_Z:g}")
    values, errors, terms, abs_sum = _ml_series(alpha, beta, flat)

    cancelled = errors > _CANCEL_REL * np.abs(values)
    for idx in np.flatnonzero(cancelled):
        values[idx] = _ml_extended(alpha, beta, float(flat[idx]), float(abs_sum[idx]))
        errors[idx] = 2.0 * _EPS * abs(values[idx])
    if cancelled.any():
        logger.debug("Mittag-Leffler: %d argument(s) re-summed in extended precision", int(cancelled.sum()))
    if not np.all(np.isfinite(values)):
        raise DomainError("Mittag-Leffler value is not finite")
    return values.reshape(z.shape), errors.reshape(z.shape), terms.reshape(z.shape)


def mittag_leffler(alpha: float, beta: float, z: float) -> EvalResult:
    """E_{α,β}(z) = Σ z^k / Γ(αk+β) for real z with |z| inside the configured range."""
    values, errors, terms = _ml_evaluate(alpha, beta, float(z))
    return EvalResult(float(values), float(errors), int(terms))


def mittag_leffler_values(alpha: float, beta: float, z) -> np.ndarray:
    values, _, _ = _ml_evaluate(alpha, beta, z)
    return values


def _kanter_log(alpha: float, phi: float) -> float:
    """log A(φ) for the Zolotarev-Kanter kernel; all sines are positive on (0, π)."""
    s_alpha = math.sin(alpha * phi)
    return (
        (math.log(s_alpha) - math.log(math.sin(phi))) / (1.0 - alpha)
        + math.log(math.sin((1.0 - alpha) * phi))
        - math.log(s_alpha)
    )


def _wright_m_integral(alpha: float, theta: float) -> EvalResult:
    scale = theta ** (1.0 / (1.0 - alpha))
    log_prefactor = (alpha / (1.0 - alpha)) * math.log(theta) - math.log(math.pi * (1.0 - alpha))

    def integrand(phi: float) -> float:
        log_a = _kanter_log(alpha, phi)
        return math.exp(log_prefactor + log_a - scale * math.exp(log_a))

    value, abserr, info = integrate.quad(integrand, 0.0, math.pi, epsabs=0.0, epsrel=1e-12, limit=400, full_output=1)[:3]
    return EvalResult(float(value), float(abserr) + 2.0 * _EPS * abs(value), int(info["neval"]))


def wright_m(alpha: float, theta: float) -> EvalResult:
    """Mainardi function M_α(θ) for 0 < α < 1 and 0 ≤ θ ≤ the configured cap."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"Wright-M needs 0 < alpha < 1, got {alpha}")
    if not (0.0 <= theta <= config.WRIGHT_THETA_MAX):
        raise DomainError(f"theta={theta:g} outside [0, {config.WRIGHT_THETA_MAX:g}]")
    if theta == 0.0:
        return EvalResult(float(special.rgamma(1.0 - alpha)), 2.0 * _EPS, 1)

    log_theta = math.log(theta)
    total = 0.0
    comp = 0.0
    largest = 0.0
    quiet = 0
    n = 0
    omitted = 0.0
    while n < config.WRIGHT_MAX_TERMS:
        arg = 1.0 - alpha * (n + 1)
        if arg <= 0 and arg == math.floor(arg):
            n += 1  # 1/Γ vanishes at the pole
            continue
        log_mag = n * log_theta - math.lgamma(n + 1) - special.gammaln(arg)
        if log_mag > _LOG_MAX:
            return _wright_m_integral(alpha, theta)
        magnitude = math.exp(log_mag)
        term = magnitude * special.gammasgn(arg) * (-1.0 if n % 2 else 1.0)
        if largest > 0 and magnitude < 1e-16 * largest:
            quiet += 1
            if quiet == 3:
                omitted = magnitude
                break
        else:
            quiet = 0
        new = total + term
        comp += (total - new) + term if abs(total) >= abs(term) else (term - new) + total
        total = new
        largest = max(largest, magnitude)
        n += 1
    else:
        logger.debug("Wright-M series cap reached at theta=%g; using the integral form", theta)
        return _wright_m_integral(alpha, theta)

    value = total + comp
    rounding = 4.0 * _EPS * largest
    if rounding > _CANCEL_REL * abs(value):
        return _wright_m_integral(alpha, theta)
    return EvalResult(value, omitted + rounding, n)


def wright_m_table(alpha: float, thetas) -> np.ndarray:
    return np.array([wright_m(alpha, float(th)).value for th in np.ravel(thetas)]).reshape(np.shape(thetas))


@lru_cache(maxsize=32)
def _moment_by_quadrature(alpha: float, dbar: float) -> float:
    value, _ = integrate.quad(
        lambda th: th**dbar * wright_m(alpha, th).value,
        0.0,
        config.WRIGHT_THETA_MAX,
        epsabs=1e-14,
        epsrel=1e-11,
        limit=400,
    )
    return float(value)


def wright_moment(alpha: float, dbar: float, quadrature: bool = False) -> float:
    """∫_0^∞ θ^{d̄} M_α(θ) dθ = Γ(1+d̄)/Γ(1+αd̄); `quadrature` integrates numerically instead."""
    if dbar <= -1:
        raise DomainError(f"moment order must exceed -1, got {dbar}")
    if quadrature:
        return _moment_by_quadrature(float(alpha), float(dbar))
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"Wright-M needs 0 < alpha < 1, got {alpha}")
    return gamma_fn(1.0 + dbar) / gamma_fn(1.0 + alpha * dbar)

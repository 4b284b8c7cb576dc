"""Residual profiles and δ-Ulam-Hyers-Rassias certificates.

The differential residual of a candidate v on an evolution window is
obtained from its mild residual r = v - 𝐅v: since 𝐅v solves the linear
problem forced by F(v), ᴴ𝔇r - 𝒜r equals ᴴ𝔇v - 𝒜v - F(v) while inheriting
the solver's quadrature.  Deviations |v - u| are measured in the weighted
PC_{1-γ} sense, the norm every estimate here is stated in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from errors import DomainError, GridError, PreconditionError
from fracops import SampledFunction, WeightedTrajectory, hilfer_derivative_grid
from model import PhiData, ProblemSpec, kernel_sup_integrals
from solver import MildMap, as_columns
from specfun import gamma_fn, mittag_leffler

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ResidualSamples:
    kind: str
    index: int
    times: np.ndarray
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class ResidualProfile:
    evolution: tuple
    impulse: tuple
    restart: tuple
    eps_fit: float

    @staticmethod
    def _peak(samples) -> float:
        return max((float(np.max(s.values)) for s in samples if s.values.size), default=0.0)

    @property
    def max_evolution(self) -> float:
        return self._peak(self.evolution)

    @property
    def max_impulse(self) -> float:
        return self._peak(self.impulse)

    @property
    def max_restart(self) -> float:
        return self._peak(self.restart)


def _normalized(residual: np.ndarray, scale: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = residual / scale
    silent = residual <= 1e-14
    return np.where(scale > 0, ratio, np.where(silent, 0.0, np.inf))


def residual_profile(
    spec: ProblemSpec,
    v: WeightedTrajectory,
    phidata: PhiData | None = None,
    skip: int = 2,
    method: str = "closed_form_ml",
) -> ResidualProfile:
    mild = MildMap(spec, grids=[seg.nodes for seg in v.segments], method=method)
    if [s.kind for s in v.segments] != [w.kind for w in mild.windows]:
        raise GridError("trajectory windows do not match the problem mesh")
    residual = v.minus(mild.apply(v))
    order = spec.order
    gamma = order.gamma

    evolution, impulse, restart = [], [], []
    for seg_v, seg_r, window in zip(v.segments, residual.segments, mild.windows):
        nodes = seg_v.nodes
        if window.kind == "evolution":
            weighted = as_columns(seg_r.weighted)
            restart.append(
                ResidualSamples("restart", window.index, np.array([window.left]), np.array([gamma_fn(gamma) * np.max(np.abs(weighted[0]))]))
            )
            derivative = np.column_stack(
                [
                    hilfer_derivative_grid(order, SampledFunction(nodes, weighted[:, k], gamma - 1.0), scheme="l1")
                    for k in range(weighted.shape[1])
                ]
            )
            unweighted = mild.unweighted(nodes, weighted)
            values = np.max(np.abs(derivative - spec.gen.apply(unweighted)), axis=1)
            keep = np.arange(nodes.size) >= skip
        else:
            state = as_columns(seg_v.unweighted())
            xi = spec.impulses.xi[window.index - 1]
            values = np.max(np.abs(state - np.asarray(xi(nodes[:, None], state), dtype=float)), axis=1)
            keep = np.arange(nodes.size) >= 1 if abs(gamma - 1.0) > 1e-14 else np.ones(nodes.size, bool)
        keep &= np.isfinite(values)
        family = evolution if window.kind == "evolution" else impulse
        family.append(ResidualSamples(window.kind, window.index, nodes[keep], values[keep]))

    if phidata is None:
        eps_fit = max(ResidualProfile._peak(evolution), ResidualProfile._peak(impulse), ResidualProfile._peak(restart))
    else:
        fits = [0.0]
        for s in evolution:
            fits.extend(_normalized(s.values, phidata(s.times)))
        for s in impulse + restart:
            fits.extend(_normalized(s.values, np.full(s.values.shape, phidata.phi)))
        eps_fit = float(np.max(fits))
    return ResidualProfile(tuple(evolution), tuple(impulse), tuple(restart), float(eps_fit))


def _E(alpha: float, z: float) -> float:
    return mittag_leffler(alpha, 1.0, z).value


def uhr_constant_terms(spec: ProblemSpec, phidata: PhiData, n_grid: int = 256) -> dict:
    M, d, alpha = spec.M, spec.delta, spec.order.alpha
    L_tilde = spec.impulses.L_tilde
    L_xi = max(spec.impulses.L_xi, default=0.0)
    L_f = max(spec.nonlin.L)
    F1, F2, F3 = kernel_sup_integrals(spec, n_grid)
    reach = F3 + F1 + F2
    mesh = spec.mesh
    k = mesh.m
    c = phidata.c_varphi
    scale = gamma_fn(alpha)

    denominator = 1.0 - M * L_tilde**d - M * L_xi**d
    if denominator <= 0:
        raise DomainError(f"1 - M L~^delta - M L_xi^delta = {denominator:.4g} must be positive")

    e_full = _E(alpha, M * L_f * reach * scale * mesh.T**alpha)
    growth = 1.0 + M * L_xi * e_full
    evolution = (M * (1.0 + c) * (M * L_tilde * e_full * growth ** max(k - 1, 0) + growth**k) * e_full) ** d
    impulse = M / denominator
    e_xi = _E(alpha, M * L_xi * reach * scale * mesh.t[0] ** alpha)
    e_f = _E(alpha, M * L_f * reach * scale * mesh.t[0] ** alpha)
    initial = M * (M + L_tilde) * c * (e_xi + 1.0) * e_f
    terms = {"evolution": evolution, "impulse": impulse, "initial": initial}
    logger.info("uhr constant terms: %s", ", ".join(f"{name}={value:.6g}" for name, value in terms.items()))
    return terms


def uhr_constant(spec: ProblemSpec, phidata: PhiData, n_grid: int = 256) -> float:
    return float(sum(uhr_constant_terms(spec, phidata, n_grid).values()))


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    C: float
    delta: float
    phidata: PhiData
    times: np.ndarray
    observed: np.ndarray
    bound_values: np.ndarray
    verdict: bool
    slack: float

    def bound(self, t):
        return self.C * (self.phidata.phi**self.delta + self.phidata(t) ** self.delta)


def _check_precondition(profile_v: ResidualProfile, profile_u: ResidualProfile, phidata: PhiData, rtol: float, atol: float):
    pairs = [(a, b, phidata(a.times)) for a, b in zip(profile_v.evolution, profile_u.evolution)]
    pairs += [
        (a, b, np.full(a.values.shape, phidata.phi))
        for a, b in zip(profile_v.impulse + profile_v.restart, profile_u.impulse + profile_u.restart)
    ]
    for candidate, reference, allowed in pairs:
        if candidate.values.shape != reference.values.shape:
            raise GridError("candidate and reference residuals are sampled differently")
        limit = allowed * (1.0 + rtol) + reference.values + atol
        excess = candidate.values - limit
        if excess.size and np.max(excess) > 0:
            worst = int(np.argmax(excess))
            raise PreconditionError(
                f"{candidate.kind} residual {candidate.values[worst]:.4g} at t={candidate.times[worst]:g} "
                f"exceeds the allowed {limit[worst]:.4g}"
            )


def observed_deviation(u: WeightedTrajectory, v: WeightedTrajectory, delta: float):
    """Node times and |v - u|^δ, the deviation measured in weighted form."""
    difference = v.minus(u)
    gap = np.concatenate([np.max(np.abs(as_columns(seg.weighted)), axis=1) for seg in difference.segments])
    return difference.times(), gap**delta


def certify_uhr(
    spec: ProblemSpec,
    u: WeightedTrajectory,
    v: WeightedTrajectory,
    phidata: PhiData,
    rtol: float = 0.25,
    atol: float = 1e-9,
    skip: int = 2,
) -> StabilityCertificate:
    """Check |v - u|^δ ≤ C(ϕ^δ + φ(t)^δ) on the grid after confirming v satisfies the residual inequalities."""
    if not u.same_grid(v):
        raise GridError("u and v must share a grid")
    profile_v = residual_profile(spec, v, phidata, skip)
    profile_u = residual_profile(spec, u, None, skip)
    _check_precondition(profile_v, profile_u, phidata, rtol, atol)

    C = uhr_constant(spec, phidata)
    d = spec.delta
    times, observed = observed_deviation(u, v, d)
    bound_values = C * (phidata.phi**d + phidata(times) ** d)
    margin = bound_values - observed
    verdict = bool(np.all(margin >= -1e-9))
    logger.info("uhr certificate: C=%.6g, slack %.3e, verdict %s", C, float(np.min(margin)), verdict)
    return StabilityCertificate(C, d, phidata, times, observed, bound_values, verdict, float(np.min(margin)))


def certify_uh(spec: ProblemSpec, u: WeightedTrajectory, v: WeightedTrajectory, eps: float, **kwargs) -> StabilityCertificate:
    """δ-Ulam-Hyers: constant residual profile φ ≡ ε with impulse tolerance ε."""
    T = spec.mesh.T
    phidata = PhiData(lambda t: np.full(np.shape(t), float(eps)), float(eps), T, T, f"{eps:g}")
    return certify_uhr(spec, u, v, phidata, **kwargs)


def certify_guh(
    spec: ProblemSpec,
    u: WeightedTrajectory,
    v: WeightedTrajectory,
    eps: float,
    theta: Callable | None = None,
    **kwargs,
) -> StabilityCertificate:
    """Generalized δ-Ulam-Hyers: |v - u|^δ ≤ θ(ε) for a continuous θ with θ(0) = 0.

    The residual precondition is the constant one of `certify_uh`.  Without
    ``theta`` the rate is the one that certificate proves, θ(ε) = 2Cε^δ.
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    base = certify_uh(spec, u, v, eps, **kwargs)
    if theta is None:
        return base
    if float(theta(0.0)) != 0.0:
        raise DomainError(f"theta must vanish at 0, got theta(0) = {theta(0.0)}")
    level = float(theta(eps))
    if not (np.isfinite(level) and level >= 0.0):
        raise DomainError(f"theta(eps) must be finite and non-negative, got {level}")

    d = base.delta
    bound_values = np.full(base.times.shape, level)
    margin = bound_values - base.observed
    verdict = bool(np.all(margin >= -1e-9))
    logger.info("generalized uh certificate: theta(eps)=%.6g, slack %.3e, verdict %s", level, float(np.min(margin)), verdict)
    # C scales the constant profile so that bound(t) = θ(ε)
    C = level / (2.0 * eps**d)
    return StabilityCertificate(C, d, base.phidata, base.times, base.observed, bound_values, verdict, float(np.min(margin)))

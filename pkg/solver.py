"""Mild-solution Picard solver for the impulsive nonlocal Hilfer problem.

On an evolution window (s_i, t_{i+1}] the solution satisfies

    u(t) = P(t - s_i) c_i + ∫_{s_i}^t K(t - s) F(s) ds,  F(s) = f(s, u, 𝔗u, 𝔙u),

with P(τ) = τ^{γ-1} E_{α,γ}(𝒜τ^α), K(τ) = τ^{α-1} E_{α,α}(𝒜τ^α),
c_0 = u_0 - g(u) and c_i = ξ_i(s_i, u(s_i)) - g(u).  On an impulse window
(t_i, s_i] u(t) = ξ_i(t, u(t)) pointwise.  All states are stored in weighted
form (t - left)^{1-γ} u(t) on per-window grids, uniform unless graded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

import config
from errors import DomainError, GridError, NonConvergence, PointwiseImpulseError, ValidationError
from fracops import IDENTITY, FracOrder, SampledFunction, WeightedTrajectory, frac_integral, graded_grid, pc_norm, product_weights
from model import Generator, ProblemSpec, kernel_sup_integrals, validate
from specfun import gamma_fn, mittag_leffler_values, wright_m_table

logger = logging.getLogger(__name__)

METHODS = ("closed_form_ml", "wright_quadrature")

_WRIGHT_PANELS = 60
_WRIGHT_POINTS = 16
_SUBSTITUTION_CELLS = 256


@lru_cache(maxsize=8)
def _wright_table(alpha: float):
    """Composite Gauss-Legendre nodes on [0, θ_max] with weights α θ M_α(θ)."""
    x, w = legendre.leggauss(_WRIGHT_POINTS)
    edges = np.linspace(0.0, config.WRIGHT_THETA_MAX, _WRIGHT_PANELS + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    theta = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return theta, weights * alpha * theta * wright_m_table(alpha, theta)


@dataclass(frozen=True, eq=False)
class ResolventKernels:
    """Scalar propagators per eigenvalue of 𝒜 (eigen-coordinates for matrix generators)."""

    method: str
    order: FracOrder
    eigvals: np.ndarray
    V: np.ndarray
    Vinv: np.ndarray
    horizon: float

    def _squeeze(self, values: np.ndarray) -> np.ndarray:
        return values[..., 0] if self.eigvals.size == 1 else values

    def weighted_K(self, tau) -> np.ndarray:
        """τ^{1-α} K(τ) = E_{α,α}(λτ^α), shape τ.shape + (d,)."""
        tau = np.asarray(tau, dtype=float)
        alpha = self.order.alpha
        if self.method == "closed_form_ml":
            z = (tau**alpha)[..., None] * self.eigvals
            return mittag_leffler_values(alpha, alpha, z)
        theta, weights = _wright_table(alpha)
        rho = (tau**alpha)[..., None, None] * self.eigvals[:, None]
        return np.sum(weights * np.exp(rho * theta), axis=-1)

    def weighted_P(self, tau) -> np.ndarray:
        """τ^{1-γ} P(τ) = E_{α,γ}(λτ^α), shape τ.shape + (d,)."""
        tau = np.asarray(tau, dtype=float)
        alpha, gamma = self.order.alpha, self.order.gamma
        if self.method == "closed_form_ml":
            z = (tau**alpha)[..., None] * self.eigvals
            return mittag_leffler_values(alpha, gamma, z)
        mu = self.order.outer_order
        if mu <= 0:
            return self.weighted_K(tau)
        flat = tau.ravel()
        out = np.empty((flat.size, self.eigvals.size))
        for i, t in enumerate(flat):
            out[i] = self._wright_P_weighted(float(t), mu)
        return out.reshape(tau.shape + (self.eigvals.size,))

    def _wright_P_weighted(self, t: float, mu: float) -> np.ndarray:
        # P = I^μ[τ^{α-1}𝔾]; with ρ = τ^α the integrand is smooth apart from (ρ_t - ρ)^{μ-1}
        alpha, gamma = self.order.alpha, self.order.gamma
        if t == 0.0:
            return self.weighted_K(0.0) * gamma_fn(alpha) / gamma_fn(gamma)
        top = t**alpha
        rho = np.linspace(0.0, top, _SUBSTITUTION_CELLS + 1)
        tau = rho ** (1.0 / alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (t - tau) / (top - rho)
        ratio[-1] = t ** (1.0 - alpha) / alpha
        smooth = (ratio ** (mu - 1.0))[:, None] * self.weighted_K(tau)
        integral = frac_integral(IDENTITY, mu, SampledFunction(rho, smooth), top) / alpha
        return t ** (1.0 - gamma) * np.atleast_1d(integral)

    def K_a(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self._squeeze((t ** (self.order.alpha - 1.0))[..., None] * self.weighted_K(t))

    def P_ab(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self._squeeze((t ** (self.order.gamma - 1.0))[..., None] * self.weighted_P(t))


def resolvent_kernels(gen: Generator, order: FracOrder, horizon: float, method: str = "closed_form_ml") -> ResolventKernels:
    if method not in METHODS:
        raise DomainError(f"unknown resolvent method {method!r}")
    eigvals, V, Vinv = gen.spectral
    reach = float(np.max(np.abs(eigvals))) * horizon**order.alpha
    if method == "closed_form_ml" and reach > config.ML_MAX_ABS_Z:
        raise DomainError(f"|lambda| T^alpha = {reach:g} exceeds the validated Mittag-Leffler range")
    if method == "wright_quadrature" and order.alpha >= 1.0:
        raise DomainError("the Wright representation needs alpha < 1")
    return ResolventKernels(method, order, eigvals, V, Vinv, float(horizon))


@lru_cache(maxsize=8)
def _singular_weights(n_cells: int, alpha: float, kappa: float) -> np.ndarray:
    """ω[n, j] for ∫_0^n (n - ξ)^{α-1} ξ^κ ℓ(ξ) dξ on the unit grid."""
    grid = np.arange(n_cells + 1, dtype=float)
    omega = np.zeros((n_cells + 1, n_cells + 1))
    for n in range(1, n_cells + 1):
        omega[n, : n + 1] = product_weights(grid[: n + 1], alpha, kappa)
    omega.setflags(write=False)
    return omega


def _graded_matrices(offsets: np.ndarray, kernels: ResolventKernels, kappa: float) -> list:
    """Dense convolution rows for a non-uniform window, one matrix per eigen-component."""
    n = offsets.size - 1
    mats = np.zeros((kernels.eigvals.size, n + 1, n + 1))
    for row in range(1, n + 1):
        weights = product_weights(offsets[: row + 1], kernels.order.alpha, kappa)
        ek = kernels.weighted_K(offsets[row] - offsets[: row + 1]).reshape(row + 1, -1)
        mats[:, row, : row + 1] = (weights[:, None] * ek).T
    return list(mats)


class _EvolutionBlock:
    """Propagator samples and the convolution ∫ K(t - s) F(s) ds on one window.

    Uniform windows use Toeplitz weights; graded windows fall back to dense rows
    with O(n^2) kernel evaluations.
    """

    def __init__(self, nodes: np.ndarray, kernels: ResolventKernels):
        order = kernels.order
        self.n = nodes.size - 1
        steps = np.diff(nodes)
        self.uniform = bool(np.all(np.abs(steps - steps[0]) <= 1e-9 * steps[0]))
        h = nodes[1] - nodes[0]
        self.offsets = np.arange(self.n + 1) * h if self.uniform else nodes - nodes[0]
        self.kappa = order.gamma - 1.0
        self.singular = abs(self.kappa) > 1e-14
        self.dense = self.singular or not self.uniform
        self.ep = kernels.weighted_P(self.offsets)
        ek = kernels.weighted_K(self.offsets)
        alpha = order.alpha
        self.weight_out = self.offsets ** (1.0 - order.gamma)

        if not self.uniform:
            self.matrices = _graded_matrices(self.offsets, kernels, self.kappa)
            self.scale = 1.0
        elif not self.singular:
            p = np.arange(1, self.n + 2, dtype=float)
            p0 = (p**alpha - (p - 1.0) ** alpha) / alpha
            p1 = (p ** (alpha + 1.0) - (p - 1.0) ** (alpha + 1.0)) / (alpha + 1.0)
            left = np.concatenate([[0.0], p1 - (p - 1.0) * p0])
            right = np.concatenate([[0.0], p * p0 - p1])
            self.coef = (left[: self.n + 1] + right[1:])[:, None] * ek
            self.boundary = right[1:][:, None] * ek
            self.scale = h**alpha
        else:
            omega = _singular_weights(self.n, alpha, self.kappa)
            rows, cols = np.indices(omega.shape)
            lag = np.clip(rows - cols, 0, self.n)
            self.matrices = [omega * ek[lag, k] for k in range(ek.shape[1])]
            self.scale = h ** (alpha + self.kappa)

    def convolve(self, forcing: np.ndarray) -> np.ndarray:
        """Weighted convolution at every node; ``forcing`` is weighted when γ < 1."""
        out = np.empty_like(forcing)
        for k in range(forcing.shape[1]):
            if self.dense:
                out[:, k] = self.matrices[k] @ forcing[:, k]
            else:
                full = np.convolve(self.coef[:, k], forcing[:, k])[: self.n + 1]
                out[:, k] = full - self.boundary[:, k] * forcing[0, k]
        out *= self.scale
        if self.singular:
            out *= self.weight_out[:, None]
        return out


def as_columns(values: np.ndarray) -> np.ndarray:
    return values[:, None] if values.ndim == 1 else values


def _volterra_cells(nodes: np.ndarray, kappa: float):
    """Left/right hat weights per cell for ∫ (s - left)^κ ℓ(s) ds."""
    x = nodes - nodes[0]
    dx = np.diff(x)
    if abs(kappa) <= 1e-14:
        return 0.5 * dx, 0.5 * dx
    a, b = x[:-1], x[1:]
    m1 = (b ** (kappa + 1.0) - a ** (kappa + 1.0)) / (kappa + 1.0)
    m2 = (b ** (kappa + 2.0) - a ** (kappa + 2.0)) / (kappa + 2.0)
    return (b * m1 - m2) / dx, (m2 - a * m1) / dx


def _solve_impulse(xi, t: np.ndarray, start: np.ndarray, tol: float = 1e-13, max_iter: int = 2000) -> np.ndarray:
    """Damped fixed point x = ξ(t, x), vectorized over nodes."""
    x = np.where(np.isfinite(start), start, 0.0)
    tt = t[:, None]
    for _ in range(max_iter):
        nxt = 0.5 * x + 0.5 * np.asarray(xi(tt, x), dtype=float)
        if not np.all(np.isfinite(nxt)):
            break
        if np.all(np.abs(nxt - x) <= tol * (1.0 + np.abs(x))):
            return nxt
        x = nxt
    raise PointwiseImpulseError(f"impulse fixed point stalled on ({t[0]:g}, {t[-1]:g}]")


class MildMap:
    """The fixed-point operator 𝐅 on per-window grids.

    ``grading`` > 1 clusters evolution-window nodes at the left end as
    left + (right - left)(j/n)^grading; impulse windows stay uniform.
    """

    def __init__(self, spec: ProblemSpec, n_grid: int = 512, method: str = "closed_form_ml", grids=None, grading: float = 1.0):
        self.spec = spec
        self.windows = spec.mesh.windows()
        self.gamma = spec.order.gamma
        self.kappa = self.gamma - 1.0
        self.dim = spec.dim
        if grids is None:
            if n_grid < 8:
                raise DomainError(f"need at least 8 cells per window, got {n_grid}")
            grids = [
                graded_grid(w.left, w.right, n_grid, grading)
                if w.kind == "evolution" and grading != 1.0
                else np.linspace(w.left, w.right, n_grid + 1)
                for w in self.windows
            ]
        self.grids = [np.asarray(g, dtype=float) for g in grids]
        self._check_grids()
        self.kernels = resolvent_kernels(spec.gen, spec.order, spec.mesh.T, method)
        self.blocks = {
            i: _EvolutionBlock(nodes, self.kernels)
            for i, (w, nodes) in enumerate(zip(self.windows, self.grids))
            if w.kind == "evolution"
        }
        self.cells = [_volterra_cells(nodes, self.kappa) for nodes in self.grids]
        self.u0 = np.broadcast_to(spec.u0, (self.dim,)).astype(float)
        self.scalar = spec.u0.ndim == 0 and self.dim == 1

    def _check_grids(self):
        if len(self.grids) != len(self.windows):
            raise GridError(f"{len(self.grids)} grids for {len(self.windows)} windows")
        for w, nodes in zip(self.windows, self.grids):
            if nodes.size < 9 or abs(nodes[0] - w.left) > 1e-12 or abs(nodes[-1] - w.right) > 1e-12:
                raise GridError(f"grid does not cover the {w.kind} window ({w.left:g}, {w.right:g}]")
            if np.any(np.diff(nodes) <= 0):
                raise GridError(f"grid on ({w.left:g}, {w.right:g}] is not strictly increasing")

    def _trajectory(self, weighted) -> WeightedTrajectory:
        pieces = [
            (w.kind, w.index, nodes, values[:, 0] if self.scalar else values)
            for w, nodes, values in zip(self.windows, self.grids, weighted)
        ]
        return WeightedTrajectory.from_weighted(self.spec.mesh, self.gamma, pieces)

    def initial_guess(self) -> WeightedTrajectory:
        level = self.u0 / gamma_fn(self.gamma)
        return self._trajectory([np.tile(level, (nodes.size, 1)) for nodes in self.grids])

    def unweighted(self, nodes: np.ndarray, weighted: np.ndarray) -> np.ndarray:
        if abs(self.kappa) <= 1e-14:
            return weighted
        offset = nodes - nodes[0]
        with np.errstate(divide="ignore"):
            factor = np.where(offset > 0, offset**self.kappa, np.nan)
        return weighted * factor[:, None]

    def volterra(self, kernel, weighted) -> list:
        """𝔗u (or 𝔙u) at every node, integrating each window's weighted samples exactly."""
        if kernel.is_zero:
            return [np.zeros_like(w) for w in weighted]
        out = []
        for q, targets in enumerate(self.grids):
            total = np.zeros((targets.size, self.dim))
            for p in range(q + 1):
                sources = self.grids[p]
                left, right = self.cells[p]
                kmat = np.broadcast_to(np.asarray(kernel(targets[:, None], sources[None, :]), dtype=float), (targets.size, sources.size))
                w = weighted[p]
                contrib = kmat[:, :-1, None] * (left[:, None] * w[:-1])[None] + kmat[:, 1:, None] * (right[:, None] * w[1:])[None]
                if p == q:
                    mask = np.tril(np.ones((targets.size, sources.size - 1)), k=-1)
                    contrib = contrib * mask[:, :, None]
                total += contrib.sum(axis=1)
            out.append(total)
        return out

    def apply(self, trajectory: WeightedTrajectory) -> WeightedTrajectory:
        spec = self.spec
        old = [as_columns(seg.weighted) for seg in trajectory.segments]
        if len(old) != len(self.grids):
            raise GridError("trajectory does not match the window grids")
        g_value = np.broadcast_to(np.asarray(spec.impulses.g(trajectory), dtype=float), (self.dim,))
        t_vals = self.volterra(spec.kernels.K, old)
        v_vals = self.volterra(spec.kernels.H, old)
        _, V, Vinv = spec.gen.spectral

        new = []
        for i, (w, nodes) in enumerate(zip(self.windows, self.grids)):
            if w.kind == "impulse":
                xi = spec.impulses.xi[w.index - 1]
                values = _solve_impulse(xi, nodes, self.unweighted(nodes, old[i]))
                weights = (nodes - nodes[0]) ** (1.0 - self.gamma)
                new.append(values * weights[:, None])
                continue

            if w.index == 0:
                start = self.u0 - g_value
            else:
                previous = np.atleast_1d(trajectory.evaluate(w.left))
                start = np.atleast_1d(spec.impulses.xi[w.index - 1](w.left, previous)) - g_value
            block = self.blocks[i]
            forcing = self._forcing(nodes, old[i], t_vals[i], v_vals[i])
            eigen_part = block.ep * (Vinv @ start)[None, :] + block.convolve(forcing @ Vinv.T)
            new.append(eigen_part @ V.T)
        return self._trajectory(new)

    def _forcing(self, nodes, weighted, t_vals, v_vals) -> np.ndarray:
        """F at the nodes, weighted by (s - left)^{1-γ} when γ < 1."""
        f = self.spec.nonlin
        if f.is_zero:
            return np.zeros_like(weighted)
        tt = np.broadcast_to(nodes[:, None], weighted.shape)
        if abs(self.kappa) <= 1e-14:
            return np.asarray(f(tt, weighted, t_vals, v_vals), dtype=float)
        offset = nodes - nodes[0]
        # weighted limit at the singular node, taken a tiny step inside the window
        offset[0] = 1e-10 * (nodes[1] - nodes[0])
        scale = offset[:, None] ** (1.0 - self.gamma)
        values = np.asarray(f(tt, weighted / scale, t_vals, v_vals), dtype=float)
        return values * scale


@dataclass(frozen=True, eq=False)
class SolveReport:
    trajectory: WeightedTrajectory
    iterations: int
    residual_history: tuple
    lambda_value: float
    converged: bool


def contraction_lambda(spec: ProblemSpec, n_grid: int = 256) -> float:
    F1, F2, _ = kernel_sup_integrals(spec, n_grid)
    M, d, alpha = spec.M, spec.delta, spec.order.alpha
    Lf1, Lf2, Lf3 = spec.nonlin.L
    Lt = spec.impulses.L_tilde
    mesh = spec.mesh

    def forcing_part(length: float) -> float:
        return (
            Lf1**d * length**d
            + Lf2**d * length ** (alpha * d) / alpha * F1
            + Lf3**d * length ** (alpha * d) / alpha * F2
        )

    branches = [M * (Lt**d + forcing_part(mesh.t[0]))]
    for i, L_xi in enumerate(spec.impulses.L_xi, start=1):
        length = mesh.t[i] - mesh.s[i]
        branches.append(M * (L_xi**d + Lt**d) + M * forcing_part(length))
    return float(max(branches))


def picard_solve(
    spec: ProblemSpec,
    n_grid: int = 512,
    tol: float = 1e-10,
    max_iter: int = 200,
    method: str = "closed_form_ml",
    raise_on_failure: bool = False,
    grading: float = 1.0,
    check: bool = True,
) -> SolveReport:
    """Iterate u ← 𝐅u until the δ-norm of the update drops below tol.

    With ``check`` the problem must pass `validate` first; callers that already
    validated may skip it.
    """
    if max_iter < 1:
        raise DomainError(f"max_iter must be at least 1, got {max_iter}")
    if check:
        checked = validate(spec)
        if not checked.ok:
            names = sorted({c.name for c in checked.failures})
            raise ValidationError(f"problem failed validation: {', '.join(names)}", names)
    lam = contraction_lambda(spec)
    if lam >= 1.0:
        logger.warning("contraction constant %.4g >= 1; Picard iteration may diverge", lam)
    mild = MildMap(spec, n_grid, method, grading=grading)
    current = mild.initial_guess()
    history = []
    converged = False
    eps = np.finfo(float).eps
    for iteration in range(1, max_iter + 1):
        updated = mild.apply(current)
        step = updated.minus(current)
        residual = pc_norm(step, spec.delta)
        history.append(residual)
        current = updated
        logger.info("picard iteration %d: residual %.3e", iteration, residual)
        peak = max(float(np.max(np.abs(s.weighted))) for s in step.segments)
        level = max(1.0, max(float(np.max(np.abs(s.weighted))) for s in current.segments))
        if residual <= tol:
            converged = True
            break
        if peak <= 64.0 * eps * level:
            logger.info("update reached the rounding floor (%.3e); stopping", peak)
            converged = True
            break

    report = SolveReport(current, iteration, tuple(history), lam, converged)
    if not converged:
        logger.warning("Picard iteration did not converge in %d steps (last residual %.3e)", max_iter, history[-1])
        if raise_on_failure:
            raise NonConvergence(f"no convergence after {max_iter} iterations", report)
    return report

"""Problem description for the impulsive nonlocal Hilfer problem.

A ProblemSpec bundles the impulse mesh, the generator, the nonlinearity with
its Volterra kernels, the impulse maps with the nonlocal term, the initial
datum and the exponent δ.  `validate` audits the assumptions (ordering,
Lipschitz constants, resolvent bound, kernel continuity) and reports every
failure instead of stopping at the first.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

import config
from errors import DomainError, HilferKitError, ValidationError
from expressions import parse_expression
from fracops import FracOrder, product_weights
from specfun import mittag_leffler_values

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Window:
    kind: str
    index: int
    left: float
    right: float


@dataclass(frozen=True)
class ImpulseMesh:
    """0 = s_0 < t_1 ≤ s_1 ≤ t_2 < … ≤ t_m ≤ s_m ≤ t_{m+1} = T.

    ``t`` holds t_1 … t_{m+1} and ``s`` holds s_0 … s_m.  Evolution happens on
    (s_i, t_{i+1}], impulses act on (t_i, s_i].
    """

    T: float
    t: tuple
    s: tuple

    def __post_init__(self):
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "s", tuple(float(v) for v in self.s))

    @classmethod
    def single(cls, T: float) -> "ImpulseMesh":
        return cls(T, (T,), (0.0,))

    @classmethod
    def from_impulses(cls, T: float, impulses) -> "ImpulseMesh":
        """Build from [(t_1, s_1), …, (t_m, s_m)]."""
        impulses = [tuple(pair) for pair in impulses]
        return cls(T, [p[0] for p in impulses] + [T], [0.0] + [p[1] for p in impulses])

    @property
    def m(self) -> int:
        return len(self.s) - 1

    def ordering_violations(self) -> list:
        problems = []
        if not self.T > 0:
            problems.append(f"T={self.T:g} must be positive")
        if len(self.t) != len(self.s):
            problems.append(f"{len(self.t)} t-nodes for {len(self.s)} s-nodes (need m+1 of each)")
            return problems
        if self.s[0] != 0.0:
            problems.append(f"s_0={self.s[0]:g} must be 0")
        if self.t[-1] != self.T:
            problems.append(f"t_(m+1)={self.t[-1]:g} must equal T={self.T:g}")
        if not self.s[0] < self.t[0]:
            problems.append(f"s_0 < t_1 violated ({self.s[0]:g} >= {self.t[0]:g})")
        for i in range(1, self.m + 1):
            if not self.t[i - 1] <= self.s[i]:
                problems.append(f"t_{i} <= s_{i} violated ({self.t[i - 1]:g} > {self.s[i]:g})")
            if not self.s[i] <= self.t[i]:
                problems.append(f"s_{i} <= t_{i + 1} violated ({self.s[i]:g} > {self.t[i]:g})")
            if not self.t[i - 1] < self.t[i]:
                problems.append(f"t_{i} < t_{i + 1} violated ({self.t[i - 1]:g} >= {self.t[i]:g})")
        return problems

    def windows(self) -> list:
        """Non-empty windows in chronological order."""
        out = []
        for i in range(self.m + 1):
            if self.s[i] < self.t[i]:
                out.append(Window("evolution", i, self.s[i], self.t[i]))
            if i < self.m and self.t[i] < self.s[i + 1]:
                out.append(Window("impulse", i + 1, self.t[i], self.s[i + 1]))
        return out


@dataclass(frozen=True, eq=False)
class Generator:
    """Scalar λ or a diagonalizable matrix with real spectrum."""

    lam: float | None = None
    matrix: np.ndarray | None = None
    declared_M: float | None = None

    def __post_init__(self):
        if (self.lam is None) == (self.matrix is None):
            raise DomainError("a generator is either a scalar lambda or a matrix")
        if self.matrix is not None:
            matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if matrix.shape[0] != matrix.shape[1]:
                raise DomainError(f"generator matrix must be square, got {matrix.shape}")
            object.__setattr__(self, "matrix", matrix)

    @property
    def kind(self) -> str:
        return "scalar" if self.matrix is None else "matrix"

    @property
    def dim(self) -> int:
        return 1 if self.matrix is None else self.matrix.shape[0]

    @cached_property
    def spectral(self):
        """(eigenvalues, V, V^{-1}) with A = V diag(eigenvalues) V^{-1}."""
        if self.matrix is None:
            return np.array([float(self.lam)]), np.eye(1), np.eye(1)
        eigvals, vecs = np.linalg.eig(self.matrix)
        scale = max(1.0, float(np.max(np.abs(eigvals))))
        if np.max(np.abs(np.imag(eigvals))) > 1e-10 * scale:
            raise DomainError("generator spectrum is not real")
        vecs = np.real(vecs)
        if np.linalg.cond(vecs) > 1e10:
            raise DomainError("generator matrix is not diagonalizable")
        return np.real(eigvals), vecs, np.linalg.inv(vecs)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """𝒜 applied to node values of shape (n,) or (n, d)."""
        if self.matrix is None:
            return self.lam * values
        return values @ self.matrix.T

    def resolvent_bound(self, order: FracOrder, horizon: float, n: int = 256) -> float:
        """max(1, sup_τ max(|E_{α,γ}(λτ^α)|, |E_{α,α}(λτ^α)|)) times cond(V) for matrices."""
        eigvals, vecs, _ = self.spectral
        rho = np.linspace(0.0, horizon, n + 1) ** order.alpha
        z = np.outer(rho, eigvals).ravel()
        peak = max(
            float(np.max(np.abs(mittag_leffler_values(order.alpha, order.gamma, z)))),
            float(np.max(np.abs(mittag_leffler_values(order.alpha, order.alpha, z)))),
        )
        factor = 1.0 if self.matrix is None else float(np.linalg.cond(vecs))
        return max(1.0, peak * factor)


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """f(t, x1, x2, x3) acting componentwise, with Lipschitz constants in x1, x2, x3."""

    fn: Callable
    L: tuple = (0.0, 0.0, 0.0)
    text: str = ""
    is_zero: bool = False

    def __call__(self, t, x1, x2, x3):
        return self.fn(t, x1, x2, x3)

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls(lambda t, x1, x2, x3: np.zeros(np.broadcast(t, x1, x2, x3).shape), (0.0, 0.0, 0.0), "0", True)

    @classmethod
    def from_expression(cls, text: str, L) -> "Nonlinearity":
        expr = parse_expression(text, ("t", "x1", "x2", "x3", "u"))
        return cls(lambda t, x1, x2, x3: expr(t, x1, x2, x3, x1), tuple(float(v) for v in L), text, expr.is_zero)


@dataclass(frozen=True, eq=False)
class Kernel:
    fn: Callable
    text: str = "0"
    is_zero: bool = True

    def __call__(self, t, s):
        return self.fn(t, s)

    @classmethod
    def from_expression(cls, text: str) -> "Kernel":
        expr = parse_expression(text, ("t", "s"))
        return cls(expr, text, expr.is_zero)

    @classmethod
    def zero(cls) -> "Kernel":
        return cls(lambda t, s: np.zeros(np.broadcast(t, s).shape), "0", True)


@dataclass(frozen=True, eq=False)
class VolterraKernels:
    K: Kernel = field(default_factory=Kernel.zero)
    H: Kernel = field(default_factory=Kernel.zero)


@dataclass(frozen=True, eq=False)
class ImpulseMap:
    fn: Callable
    L: float
    text: str = ""

    def __call__(self, t, u):
        return self.fn(t, u)

    @classmethod
    def from_expression(cls, text: str, L: float) -> "ImpulseMap":
        return cls(parse_expression(text, ("t", "u")), float(L), text)


@dataclass(frozen=True, eq=False)
class NonlocalTerm:
    """g(u) = mean over sample times τ_j of expr(τ_j, u(τ_j)); constant when no times are given."""

    fn: Callable
    times: tuple = ()
    L: float = 0.0
    text: str = "0"

    def __call__(self, trajectory):
        if not self.times:
            return np.asarray(self.fn(0.0, 0.0), dtype=float)
        samples = [np.asarray(self.fn(tau, trajectory.evaluate(tau)), dtype=float) for tau in self.times]
        return np.mean(samples, axis=0)

    @classmethod
    def from_expression(cls, text, times=(), L: float = 0.0) -> "NonlocalTerm":
        return cls(parse_expression(str(text), ("t", "u")), tuple(float(v) for v in times), float(L), str(text))

    @classmethod
    def zero(cls) -> "NonlocalTerm":
        return cls.from_expression("0")


@dataclass(frozen=True, eq=False)
class ImpulseMaps:
    xi: tuple = ()
    g: NonlocalTerm = field(default_factory=NonlocalTerm.zero)

    @property
    def L_xi(self) -> tuple:
        return tuple(m.L for m in self.xi)

    @property
    def L_tilde(self) -> float:
        return self.g.L


@dataclass(frozen=True, eq=False)
class PhiData:
    """Residual profile φ, impulse tolerance ϕ and the constant c_φ with ∫_0^t φ ≤ c_φ φ(t)."""

    varphi: Callable
    phi: float
    c_varphi: float
    horizon: float
    text: str = ""

    def __post_init__(self):
        if self.phi < 0:
            raise DomainError(f"impulse tolerance must be non-negative, got {self.phi}")
        if not self.c_varphi > 0:
            raise DomainError(f"c_varphi must be positive, got {self.c_varphi}")
        nodes, values, running = self._tabulate(self.varphi, self.horizon)
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise DomainError("varphi must be finite and non-negative")
        if np.any(np.diff(values) < -1e-12 * max(1.0, float(np.max(values)))):
            raise DomainError("varphi must be nondecreasing")
        excess = running - self.c_varphi * values
        worst = int(np.argmax(excess))
        if excess[worst] > 1e-12 * max(1.0, float(running[worst])):
            raise DomainError(
                f"integral bound fails at t={nodes[worst]:g}: "
                f"{running[worst]:.6g} > c_varphi * varphi = {self.c_varphi * values[worst]:.6g}"
            )

    @staticmethod
    def _tabulate(varphi, horizon: float, n: int = 2048):
        nodes = np.linspace(0.0, horizon, n + 1)
        values = np.broadcast_to(np.asarray(varphi(nodes), dtype=float), nodes.shape)
        running = integrate.cumulative_trapezoid(values, nodes, initial=0.0)
        return nodes, values, running

    @staticmethod
    def minimal_constant(varphi, horizon: float) -> float:
        nodes, values, running = PhiData._tabulate(varphi, horizon)
        positive = values > 0
        if not positive.any():
            return 1.0
        return float(np.max(running[positive] / values[positive]))

    def __call__(self, t):
        return np.broadcast_to(np.asarray(self.varphi(np.asarray(t, dtype=float)), dtype=float), np.shape(t))

    @classmethod
    def from_expression(cls, text: str, phi: float, horizon: float, scale: float = 1.0, c_varphi: float | None = None):
        expr = parse_expression(text, ("t",))

        def varphi(t):
            return scale * expr(t)

        if c_varphi is None:
            c_varphi = PhiData.minimal_constant(varphi, horizon) * (1.0 + 1e-9)
        return cls(varphi, float(phi), float(c_varphi), float(horizon), text)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    order: FracOrder
    mesh: ImpulseMesh
    gen: Generator
    nonlin: Nonlinearity
    kernels: VolterraKernels
    impulses: ImpulseMaps
    u0: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "u0", np.asarray(self.u0, dtype=float))

    @property
    def dim(self) -> int:
        return self.gen.dim

    @cached_property
    def computed_M(self) -> float:
        return self.gen.resolvent_bound(self.order, self.mesh.T)

    @property
    def M(self) -> float:
        declared = self.gen.declared_M
        if declared is not None and declared >= self.computed_M:
            return float(declared)
        return self.computed_M


def perturbed(spec: ProblemSpec, eps: float, varphi, impulse_shift: float = 0.0) -> ProblemSpec:
    """Same problem with f + eps·varphi(t) and ξ_i + impulse_shift (Lipschitz data unchanged)."""
    base = spec.nonlin

    def forced(t, x1, x2, x3):
        return base(t, x1, x2, x3) + eps * np.asarray(varphi(np.asarray(t, dtype=float)), dtype=float)

    nonlin = Nonlinearity(forced, base.L, f"{base.text} + {eps:g}*varphi", False)
    xi = tuple(
        ImpulseMap(lambda t, u, _m=m: _m(t, u) + impulse_shift, m.L, f"{m.text} + {impulse_shift:g}")
        for m in spec.impulses.xi
    )
    return replace(spec, nonlin=nonlin, impulses=replace(spec.impulses, xi=xi))


def kernel_sup_integrals(spec: ProblemSpec, n_grid: int = 256):
    """(F1*, F2*, F3*) with F* = sup_t ∫_0^t (t-s)^{1-α} |kernel(t, s)| ds on a uniform grid."""
    if n_grid < 16:
        raise DomainError(f"kernel sup integrals need at least 16 grid cells, got {n_grid}")
    alpha = spec.order.alpha
    T = spec.mesh.T
    tau = np.linspace(0.0, T, n_grid + 1)
    exponent = 2.0 - alpha

    def sup_integral(kernel: Kernel) -> float:
        if kernel.is_zero:
            return 0.0
        best = 0.0
        for n in range(1, n_grid + 1):
            s = tau[: n + 1]
            values = np.abs(np.broadcast_to(kernel(tau[n], s), s.shape))
            best = max(best, float(product_weights(s, exponent) @ values))
        return best

    F1 = sup_integral(spec.kernels.K)
    F2 = sup_integral(spec.kernels.H)
    F3 = T**exponent / exponent
    quadrature = float(product_weights(tau, exponent) @ np.ones_like(tau))
    logger.info("F3* closed form %.15g, grid quadrature %.15g", F3, quadrature)
    return F1, F2, F3


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def failed(self, name: str) -> bool:
        return any(c.name == name and not c.passed for c in self.checks)

    def summary(self) -> str:
        return "\n".join(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks)


@dataclass(frozen=True)
class LipschitzAudit:
    name: str
    declared: float
    observed: float

    @property
    def passed(self) -> bool:
        return self.observed <= self.declared * (1.0 + 1e-9) + 1e-12


def audit_lipschitz(name, fn, n_args, vary, declared, times, radius, seed_key, pairs=None) -> LipschitzAudit:
    """Largest sampled difference quotient of fn(t, …) in argument ``vary`` (1-based after t)."""
    pairs = pairs or config.AUDIT_PAIRS
    rng = np.random.default_rng([config.VALIDATION_SEED, seed_key])
    t = rng.choice(np.asarray(times, dtype=float), size=pairs) if len(times) else np.zeros(pairs)
    base = rng.uniform(-radius, radius, size=(n_args, pairs))
    other = rng.uniform(-radius, radius, size=pairs)
    moved = base.copy()
    moved[vary - 1] = other
    gap = np.abs(base[vary - 1] - other)
    keep = gap > 1e-9 * radius
    with np.errstate(all="ignore"):
        diff = np.abs(np.asarray(fn(t, *base), dtype=float) - np.asarray(fn(t, *moved), dtype=float))
        quotients = diff[keep] / gap[keep]
    observed = float(np.max(quotients)) if quotients.size else 0.0
    if not np.isfinite(observed):
        observed = float("inf")
    return LipschitzAudit(name, float(declared), observed)


def _safe(name: str, action) -> list:
    try:
        return action()
    except HilferKitError as exc:
        return [Check(name, False, str(exc))]


def validate(spec: ProblemSpec) -> ValidationReport:
    checks = []
    mesh = spec.mesh

    violations = mesh.ordering_violations()
    checks.extend(Check("mesh-ordering", False, v) for v in violations)
    if not violations:
        checks.append(Check("mesh-ordering", True, f"m={mesh.m}, T={mesh.T:g}"))

    checks.append(Check("delta-range", 0.0 < spec.delta <= 1.0, f"delta={spec.delta:g}"))
    checks.append(
        Check("impulse-count", len(spec.impulses.xi) == mesh.m, f"{len(spec.impulses.xi)} maps for m={mesh.m}")
    )
    u0_dim = 1 if spec.u0.ndim == 0 else spec.u0.shape[0]
    checks.append(Check("state-dimension", u0_dim == spec.dim, f"u0 has {u0_dim} component(s), generator {spec.dim}"))

    def spectrum():
        spec.gen.spectral
        return [Check("generator-spectrum", True, spec.gen.kind)]

    checks.extend(_safe("generator-spectrum", spectrum))

    def resolvent():
        computed = spec.computed_M
        declared = spec.gen.declared_M
        if declared is None:
            return [Check("resolvent-bound", True, f"computed M={computed:.6g}")]
        return [Check("resolvent-bound", declared >= computed, f"declared M={declared:g}, computed {computed:.6g}")]

    if not violations:
        checks.extend(_safe("resolvent-bound", resolvent))

    T = mesh.T
    grid = np.linspace(0.0, T, 65)
    tt, ss = np.meshgrid(grid, grid, indexing="ij")
    lower = ss <= tt
    for label, kernel in (("kernel-K", spec.kernels.K), ("kernel-H", spec.kernels.H)):
        with np.errstate(all="ignore"):
            values = np.broadcast_to(np.asarray(kernel(tt, ss), dtype=float), tt.shape)
        finite = bool(np.all(np.isfinite(values[lower])))
        checks.append(Check(f"{label}-continuity", finite, kernel.text))

    radius = 10.0 * max(1.0, float(np.max(np.abs(spec.u0))))
    times = np.linspace(0.0, T, 257)
    nonlin = spec.nonlin
    for j in (1, 2, 3):
        audit = audit_lipschitz(f"f{j}", nonlin.fn, 3, j, nonlin.L[j - 1], times, radius, j)
        checks.append(Check(f"lipschitz-f{j}", audit.passed, f"declared {audit.declared:g}, sampled {audit.observed:.6g}"))
    for i, xi in enumerate(spec.impulses.xi, start=1):
        window = np.linspace(mesh.t[i - 1], mesh.s[i], 17) if i <= mesh.m else times
        audit = audit_lipschitz(f"xi{i}", xi.fn, 1, 1, xi.L, window, radius, 10 + i)
        checks.append(Check(f"lipschitz-xi{i}", audit.passed, f"declared {audit.declared:g}, sampled {audit.observed:.6g}"))
    g = spec.impulses.g
    g_times = g.times or (0.0,)
    audit = audit_lipschitz("g", g.fn, 1, 1, g.L, g_times, radius, 100)
    checks.append(Check("lipschitz-g", audit.passed, f"declared {audit.declared:g}, sampled {audit.observed:.6g}"))
    inside = all(0.0 <= tau <= T for tau in g.times)
    checks.append(Check("nonlocal-times", inside, f"{len(g.times)} sample time(s) in [0, {T:g}]"))
    if spec.order.gamma < 1.0 and 0.0 in g.times:
        # u(t) ~ t^{γ-1} has no value at the origin
        checks.append(Check("nonlocal-times", False, f"sample time 0 is singular for gamma={spec.order.gamma:.6g} < 1"))

    report = ValidationReport(tuple(checks))
    for failure in report.failures:
        logger.warning("validation: %s: %s", failure.name, failure.detail)
    return report


def _mesh_from_dict(data: dict) -> ImpulseMesh:
    T = float(data["T"])
    if "impulses" in data:
        return ImpulseMesh.from_impulses(T, data["impulses"])
    return ImpulseMesh(T, data.get("t", [T]), data.get("s", [0.0]))


def _nonlocal_from(data) -> NonlocalTerm:
    if data is None:
        return NonlocalTerm.zero()
    if isinstance(data, (int, float, str)):
        return NonlocalTerm.from_expression(data)
    return NonlocalTerm.from_expression(data.get("expr", "0"), data.get("times", ()), data.get("L", 0.0))


def problem_from_dict(data: dict) -> ProblemSpec:
    """Build a ProblemSpec from a parsed JSON problem file."""
    try:
        order_data = data["order"]
        order = FracOrder(float(order_data["alpha"]), float(order_data["beta"]), order_data.get("convention", "standard"))
        mesh = _mesh_from_dict(data["mesh"])
        gen_data = data.get("generator", {"lambda": 0.0})
        if "matrix" in gen_data:
            gen = Generator(matrix=np.asarray(gen_data["matrix"], dtype=float), declared_M=gen_data.get("M"))
        else:
            gen = Generator(lam=float(gen_data.get("lambda", 0.0)), declared_M=gen_data.get("M"))
        f_data = data.get("nonlinearity")
        nonlin = Nonlinearity.from_expression(f_data["expr"], f_data.get("L", (0.0, 0.0, 0.0))) if f_data else Nonlinearity.zero()
        k_data = data.get("kernels", {})
        kernels = VolterraKernels(
            Kernel.from_expression(str(k_data.get("K", "0"))), Kernel.from_expression(str(k_data.get("H", "0")))
        )
        maps = data.get("impulses", data.get("impulse_maps", ()))
        xi = tuple(ImpulseMap.from_expression(str(item["expr"]), item.get("L", 0.0)) for item in maps)
        impulses = ImpulseMaps(xi, _nonlocal_from(data.get("g")))
        return ProblemSpec(order, mesh, gen, nonlin, kernels, impulses, np.asarray(data.get("u0", 0.0), dtype=float), float(data.get("delta", 1.0)))
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed problem config: {exc}", ["config-schema"]) from exc


def load_problem(path) -> ProblemSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read problem config {path}: {exc}", ["config-schema"]) from exc
    return problem_from_dict(data)

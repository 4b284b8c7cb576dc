from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from errors import DomainError, GridError, PreconditionError
from fracops import FracOrder, pc_norm
from model import (
    Generator,
    ImpulseMap,
    ImpulseMaps,
    ImpulseMesh,
    Nonlinearity,
    NonlocalTerm,
    PhiData,
    ProblemSpec,
    VolterraKernels,
    load_problem,
    perturbed,
)
from solver import MildMap, picard_solve
from stability import (
    certify_guh,
    certify_uh,
    certify_uhr,
    observed_deviation,
    residual_profile,
    uhr_constant,
    uhr_constant_terms,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

PROFILES = {
    "1": np.ones_like,
    "t": lambda t: np.asarray(t, dtype=float),
    "exp(t)": np.exp,
}


def smooth_problem(L=0.2, delta=1.0):
    return ProblemSpec(
        FracOrder(0.6, 0.5),
        ImpulseMesh.single(1.0),
        Generator(lam=-0.5),
        Nonlinearity.from_expression(f"{L}*sin(u)", (L, 0.0, 0.0)),
        VolterraKernels(),
        ImpulseMaps(),
        1.0,
        delta,
    )


def solve_pair(spec, eps, profile, shift=0.0, n_grid=128):
    u = picard_solve(spec, n_grid=n_grid)
    v = picard_solve(perturbed(spec, eps, PROFILES[profile], shift), n_grid=n_grid)
    assert u.converged and v.converged
    return u.trajectory, v.trajectory


def test_solver_output_has_small_residual():
    spec = smooth_problem()
    u = picard_solve(spec, n_grid=128).trajectory
    profile = residual_profile(spec, u)
    assert profile.max_evolution <= 1e-6
    assert profile.max_restart <= 1e-9
    assert profile.eps_fit <= 1e-6


def test_residual_sampling_skips_first_nodes():
    spec = smooth_problem()
    u = picard_solve(spec, n_grid=64).trajectory
    samples = residual_profile(spec, u).evolution[0]
    assert samples.times[0] == pytest.approx(u.segments[0].nodes[2])
    assert np.all(samples.values >= 0.0)


def test_constructed_perturbation_is_recovered():
    spec = smooth_problem()
    _, v = solve_pair(spec, 0.01, "exp(t)", n_grid=256)
    unscaled = PhiData.from_expression("exp(t)", 0.0, 1.0)
    assert 0.007 <= residual_profile(spec, v, unscaled).eps_fit <= 0.0135
    _, flat = solve_pair(spec, 0.01, "1", n_grid=256)
    assert 0.007 <= residual_profile(spec, flat).eps_fit <= 0.0135


def test_identical_candidate_has_zero_deviation():
    spec = smooth_problem()
    u = picard_solve(spec, n_grid=64).trajectory
    phidata = PhiData.from_expression("1", 0.0, 1.0, scale=1e-3)
    cert = certify_uhr(spec, u, u, phidata)
    assert cert.verdict
    assert np.all(cert.observed == 0.0)
    assert cert.slack >= 0.0


@pytest.mark.parametrize("eps", [1e-3, 1e-2, 1e-1])
@pytest.mark.parametrize("profile", ["1", "t", "exp(t)"])
@pytest.mark.parametrize("with_tolerance", [False, True])
def test_certificates_hold_for_constructed_perturbations(eps, profile, with_tolerance):
    spec = load_problem(CONFIGS / "impulsive.json")
    tolerance = eps if with_tolerance else 0.0
    u, v = solve_pair(spec, eps, profile, shift=tolerance)
    phidata = PhiData.from_expression(profile, tolerance, spec.mesh.T, scale=eps)
    cert = certify_uhr(spec, u, v, phidata)
    assert cert.verdict, cert.slack
    assert np.max(cert.observed) > 0.0
    np.testing.assert_allclose(cert.bound(cert.times), cert.bound_values)


def test_zero_tolerance_rejects_perturbed_candidate():
    spec = smooth_problem()
    u, v = solve_pair(spec, 0.01, "1", n_grid=64)
    nothing = PhiData(np.zeros_like, 0.0, 1.0, 1.0)
    with pytest.raises(PreconditionError):
        certify_uhr(spec, u, v, nothing)


def test_undersized_profile_rejects_candidate():
    spec = smooth_problem()
    u, v = solve_pair(spec, 0.01, "1", n_grid=64)
    with pytest.raises(PreconditionError):
        certify_uhr(spec, u, v, PhiData.from_expression("1", 0.0, 1.0, scale=1e-3))


def test_constant_terms_without_lipschitz_data():
    spec = smooth_problem(L=0.0)
    phidata = PhiData(np.ones_like, 0.0, 1.0, 1.0)
    terms = uhr_constant_terms(spec, phidata)
    assert set(terms) == {"evolution", "impulse", "initial"}
    assert terms["evolution"] == pytest.approx(2.0)
    assert terms["impulse"] == pytest.approx(1.0)
    assert terms["initial"] == pytest.approx(2.0)
    assert uhr_constant(spec, phidata) == pytest.approx(5.0)


def test_constant_grows_with_lipschitz_data():
    phidata = PhiData(np.ones_like, 0.0, 1.0, 1.0)
    assert uhr_constant(smooth_problem(L=0.5), phidata) > uhr_constant(smooth_problem(L=0.1), phidata)


def test_constant_needs_positive_denominator():
    spec = ProblemSpec(
        FracOrder(0.6, 0.5),
        ImpulseMesh.from_impulses(1.0, [(0.4, 0.5)]),
        Generator(lam=-0.5),
        Nonlinearity.zero(),
        VolterraKernels(),
        ImpulseMaps((ImpulseMap.from_expression("0.5*u", 0.5),), NonlocalTerm.from_expression("0.6*u", (1.0,), 0.6)),
        1.0,
        1.0,
    )
    with pytest.raises(DomainError):
        uhr_constant(spec, PhiData(np.ones_like, 0.0, 1.0, 1.0))


def test_ulam_hyers_constant_profile():
    spec = smooth_problem(delta=0.5)
    u, v = solve_pair(spec, 0.01, "1", n_grid=128)
    cert = certify_uh(spec, u, v, 0.01)
    assert cert.verdict
    assert cert.delta == 0.5
    assert cert.phidata.phi == 0.01


def test_certificate_requires_matching_grids():
    spec = smooth_problem()
    u = picard_solve(spec, n_grid=64).trajectory
    v = picard_solve(spec, n_grid=32).trajectory
    with pytest.raises(GridError):
        certify_uh(spec, u, v, 0.01)


def test_generalized_certificate_defaults_to_ulam_hyers_rate():
    spec = smooth_problem(delta=0.5)
    u, v = solve_pair(spec, 0.01, "1", n_grid=128)
    plain = certify_uh(spec, u, v, 0.01)
    general = certify_guh(spec, u, v, 0.01)
    assert general.C == plain.C
    np.testing.assert_array_equal(general.bound_values, plain.bound_values)


def test_generalized_certificate_uses_theta():
    spec = smooth_problem(delta=0.5)
    u, v = solve_pair(spec, 0.01, "1", n_grid=128)
    loose = certify_guh(spec, u, v, 0.01, theta=lambda e: 50.0 * np.sqrt(e))
    assert loose.verdict
    np.testing.assert_allclose(loose.bound_values, 5.0)
    np.testing.assert_allclose(loose.bound(loose.times), 5.0)
    tight = certify_guh(spec, u, v, 0.01, theta=lambda e: 1e-9 * e)
    assert not tight.verdict
    assert tight.slack < 0.0


def test_generalized_certificate_rejects_bad_theta():
    spec = smooth_problem()
    u, v = solve_pair(spec, 0.01, "1", n_grid=64)
    with pytest.raises(DomainError):
        certify_guh(spec, u, v, 0.01, theta=lambda e: 1.0 + e)
    with pytest.raises(DomainError):
        certify_guh(spec, u, v, 0.0, theta=lambda e: e)


def lipschitz_constant(M=1.0, L_tilde=0.1, L_xi=0.1, c=1.0):
    spec = ProblemSpec(
        FracOrder(0.6, 0.5),
        ImpulseMesh.from_impulses(1.0, [(0.4, 0.5)]),
        Generator(lam=-0.5, declared_M=M),
        Nonlinearity.from_expression("0.1*sin(u)", (0.1, 0.0, 0.0)),
        VolterraKernels(),
        ImpulseMaps((ImpulseMap.from_expression(f"{L_xi}*u", L_xi),), NonlocalTerm.from_expression(f"{L_tilde}*u", (1.0,), L_tilde)),
        1.0,
        1.0,
    )
    return uhr_constant(spec, PhiData(np.ones_like, 0.0, c, 1.0))


@given(st.sampled_from(["M", "L_tilde", "L_xi", "c"]), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_constant_nondecreasing_in_each_input(name, low, high):
    # M in [1, 1.5], c in [1, 3], Lipschitz data in [0, 0.2]
    ranges = {"M": (1.0, 0.5), "L_tilde": (0.0, 0.2), "L_xi": (0.0, 0.2), "c": (1.0, 2.0)}
    start, width = ranges[name]
    lo, hi = sorted((start + width * low, start + width * high))
    assert lipschitz_constant(**{name: lo}) <= lipschitz_constant(**{name: hi}) * (1.0 + 1e-12)


@pytest.mark.parametrize("delta", [0.3, 0.5, 1.0])
def test_doubling_the_deviation_scales_observed_by_power_of_delta(delta):
    spec = load_problem(CONFIGS / "impulsive.json")
    u, v = solve_pair(spec, 0.01, "exp(t)", n_grid=64)
    doubled = u.with_weighted([a.weighted + 2.0 * (b.weighted - a.weighted) for a, b in zip(u.segments, v.segments)])
    times, once = observed_deviation(u, v, delta)
    _, twice = observed_deviation(u, doubled, delta)
    np.testing.assert_array_equal(times, u.times())
    np.testing.assert_allclose(twice, 2.0**delta * once, rtol=1e-12, atol=1e-300)


def test_interpolated_residual_shrinks_under_grid_doubling():
    spec = smooth_problem()
    fine = picard_solve(spec, n_grid=256).trajectory
    nodes = fine.segments[0].nodes
    peaks = []
    for n in (16, 32):
        coarse = picard_solve(spec, n_grid=n).trajectory.segments[0]
        moved = fine.with_weighted([np.interp(nodes, coarse.nodes, coarse.weighted)])
        samples = residual_profile(spec, moved).evolution[0]
        peaks.append(float(np.max(samples.values[samples.times >= 0.25])))
    assert peaks[1] < peaks[0]


def test_extra_picard_steps_stay_within_tolerance():
    spec = smooth_problem()
    tol = 1e-10
    current = picard_solve(spec, n_grid=64, tol=tol).trajectory
    mild = MildMap(spec, 64)
    for _ in range(3):
        following = mild.apply(current)
        assert pc_norm(following.minus(current), spec.delta) <= tol
        current = following

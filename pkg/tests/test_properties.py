"""Randomised invariants checked with hypothesis."""
import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sbdkit import calculus as calc
from sbdkit import conditions as cd
from sbdkit import kinetics as kn
from sbdkit.conditions import ConditionInputs
from sbdkit.kernels import Exponential, Gaussian, TopHat, l1_norm
from sbdkit.model import Dispersal, Mechanism, ModelParams

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

coords = st.lists(st.floats(-3, 3, allow_nan=False), min_size=0, max_size=5, unique=True)
positive = st.floats(0.05, 3.0)

kernels = st.one_of(
    st.builds(lambda h, r: TopHat(height=h, radius=r), positive, st.floats(0.2, 1.5)),
    st.builds(lambda m, s: Gaussian(mass=m, sigma=s), positive, st.floats(0.1, 0.4)),
    st.builds(lambda m, s: Exponential(mass=m, scale=s), positive, st.floats(0.05, 0.2)),
)


def model(kappa, phi, b, mech):
    return ModelParams(m=1.0, kappa=kappa, a_plus=TopHat(height=0.5, radius=1.0), phi=phi,
                       b_plus=b, dispersal=Dispersal.DEPENDENT, mechanism=mech)


@SETTINGS
@given(coords, st.floats(-1, 1), st.floats(-2, 2))
def test_k_round_trip(xs, a, w):
    gamma = calc.Configuration(xs)
    G = lambda eta: a ** len(eta) * math.cos(w * float(np.sum(eta.points)))
    KG = lambda eta: calc.k_transform(G, eta)
    assert abs(calc.kinv_inclusion_exclusion(KG, gamma) - G(gamma)) < 1e-10


@SETTINGS
@given(coords, st.floats(-1, 1))
def test_k_of_coherent_state(xs, a):
    gamma = calc.Configuration(xs)
    f = lambda p: a * math.exp(-float(p[0]) ** 2)
    lhs = calc.k_transform(lambda eta: calc.coherent_state(f, eta), gamma)
    assert abs(lhs - calc.coherent_state(lambda p: f(p) + 1, gamma)) < 1e-12


@SETTINGS
@given(coords, st.floats(-3, 3), st.floats(0, 3), kernels, kernels,
       st.sampled_from(list(Mechanism)))
def test_birth_rate_bounds(xs, x, kappa, phi, b, mech):
    # suppression never raises the rate above its unsuppressed value
    gamma = calc.Configuration(xs)
    pkg = calc.RatePackage(model(kappa, phi, b, mech))
    rate = calc.birth_rate(np.array([x]), gamma, pkg, mech)
    free = calc.birth_rate(np.array([x]), gamma,
                           calc.RatePackage(model(kappa, TopHat(height=0.0, radius=0.5), b, mech)), mech)
    assert -1e-15 <= rate <= free + 1e-12


@SETTINGS
@given(kernels, st.floats(0.01, 1.0))
def test_scaled_mass(k, eps):
    assert math.isclose(l1_norm(k.scaled(eps)), eps * l1_norm(k), rel_tol=1e-8)


@SETTINGS
@given(st.floats(0.1, 20), st.floats(0, 3), st.floats(0, 2), st.floats(0.1, 3), st.floats(0, 4),
       st.floats(0, 4), st.floats(1, 3), st.sampled_from(list(Mechanism)))
def test_verdict_monotone_in_mortality(m, kappa, B, pm, A1, A2, C, mech):
    ci = ConditionInputs(m=m, kappa=kappa, B=B, phi_mass=pm, c_phi=0.5 * pm, A1=A1, A2=A2,
                         mechanism=mech)
    hi = ConditionInputs(**{**ci.__dict__, "m": 2 * m})
    if cd.check_mechanism(ci, C, mech).satisfied:
        assert cd.check_mechanism(hi, C, mech).satisfied


@SETTINGS
@given(st.floats(0.1, 20), st.floats(0, 3), st.floats(0, 2), st.floats(0.1, 3), st.floats(0.01, 1),
       st.floats(0, 4), st.floats(0, 4), st.floats(1, 3), st.sampled_from(list(Mechanism)))
def test_vlasov_lemma_stricter(m, kappa, B, pm, frac, A1, A2, C, mech):
    ci = ConditionInputs(m=m, kappa=kappa, B=B, phi_mass=pm, c_phi=frac * pm, A1=A1, A2=A2,
                         mechanism=mech)
    v = cd.check_vlasov_scaling(ci, C, mech)
    assert v.rhs <= cd.check_mechanism(ci, C, mech).rhs
    if v.satisfied:
        assert cd.check_mechanism(ci, C, mech).satisfied


GRID = kn.Grid(64, 12.0)
fields = st.lists(st.floats(0, 3), min_size=64, max_size=64).map(
    lambda v: kn.DensityField(np.array(v), GRID))


@SETTINGS
@given(fields, kernels)
def test_convolution_preserves_mass(f, k):
    out = kn.convolve(f, k)
    assert math.isclose(out.values.sum(), f.values.sum(), rel_tol=1e-9, abs_tol=1e-9) or \
        math.isclose(out.values.sum(), f.values.sum() * l1_norm(k), rel_tol=1e-9, abs_tol=1e-9)
    assert out.values.min() >= -1e-12


@SETTINGS
@given(fields, st.integers(0, 63), st.sampled_from(["establishment", "fecundity"]), kernels)
def test_rhs_translation_equivariant(f, shift, mech, phi):
    p = model(1.0, phi, Exponential(mass=0.3, scale=0.1), mech)
    lhs = kn.rhs(f.shifted(shift), p, mech).values
    assert np.allclose(lhs, np.roll(kn.rhs(f, p, mech).values, shift), atol=1e-12)


@SETTINGS
@given(st.floats(0, 4), st.floats(0.05, 4), st.floats(0.1, 3), st.floats(0, 3))
def test_homogeneous_flow_points_to_stable_roots(kappa, m, phi_h, u):
    p = ModelParams(m=m, kappa=kappa, a_plus=TopHat(height=0.5, radius=1.0),
                    phi=TopHat(height=phi_h / 2, radius=1.0))
    eqs = kn.homogeneous_equilibria(p)
    f = float(kn.homogeneous_rhs(u, p))
    roots = sorted(e.u for e in eqs)
    if any(abs(u - r) < 1e-6 for r in roots):
        return
    above = [r for r in roots if r > u]
    # between roots the sign is constant; above the largest root the flow is downward
    if not above:
        assert f < 0 or (u == 0 and f == 0)
    for e in eqs:
        assert (e.derivative < 0) == (e.stability == "stable")

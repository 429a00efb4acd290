import numpy as np
import pytest
from scipy.integrate import solve_bvp

from solvers import NoConvergence, ProblemSpec, leading_bracket, leading_field, rescale, solve_corrector, solve_phi
from solvers.radial import ode_residual

from .conftest import LIOUVILLE_A, LIOUVILLE_LAMBDA, liouville_phi


def test_torsion_profile_closed_form(torsion_spec):
    rp = rescale(torsion_spec, [0.0, 0.0], 1.0, 0.5)
    prof = solve_phi(rp)
    r = np.linspace(0.0, 1.0, 41)
    assert np.allclose(prof.evaluate(r), 0.125 * (1 - r**2), atol=1e-10)
    assert prof.dphi1 == pytest.approx(-0.25, abs=1e-10)
    assert prof.ddphi1 == pytest.approx(-0.25, abs=1e-10)
    assert prof.degree_one_ratio == pytest.approx(1.0, abs=1e-9)
    assert prof.delta > 0.0


def test_liouville_profile_closed_form(liouville_spec):
    rp = rescale(liouville_spec, [0.0, 0.0], 1.0, LIOUVILLE_LAMBDA)
    prof = solve_phi(rp)
    r = np.linspace(0.0, 1.0, 41)
    assert prof.phi0 == pytest.approx(2 * np.log(1 + LIOUVILLE_A), abs=1e-10)
    assert np.allclose(prof.evaluate(r), liouville_phi(r), atol=1e-9)
    assert prof.dphi1 == pytest.approx(-4 * LIOUVILLE_A / (1 + LIOUVILLE_A), abs=1e-9)
    assert ode_residual(prof) < 1e-9


def test_supercritical_liouville_does_not_converge(liouville_spec):
    rp = rescale(liouville_spec, [0.0, 0.0], 1.0, 50.0)
    with pytest.raises(NoConvergence) as info:
        solve_phi(rp)
    assert info.value.stage == "radial.solve_phi"
    assert str(info.value).startswith("NoConvergence in radial.solve_phi")


@pytest.mark.parametrize("n", [2, 3])
def test_corrector_constant_drift(n):
    b = [1.0, -0.5, 0.25][:n]
    spec = ProblemSpec.from_strings(n, "1", "0", "1", b=[str(v) for v in b])
    lam = 0.5
    rp = rescale(spec, np.zeros(n), 1.0, lam)
    corr = solve_corrector(rp, solve_phi(rp))
    expected = np.array(b) * lam / (n * (n + 2))
    assert corr.V == pytest.approx(expected, abs=1e-10)
    assert corr.W0 == pytest.approx(-expected / 2, abs=1e-10)
    assert np.allclose(corr.evaluate(1.0), 0.0, atol=1e-10)


def test_corrector_spatial_source():
    spec = ProblemSpec.from_strings(2, "1 + x1", "0", "1")
    rp = rescale(spec, [0.0, 0.0], 1.0, 0.5)
    corr = solve_corrector(rp, solve_phi(rp))
    assert corr.V == pytest.approx([-0.125, 0.0], abs=1e-10)


def test_corrector_matches_collocation_solve():
    spec = ProblemSpec.from_strings(2, "exp(u)", "0", "1", b=["1", "0"])
    lam, n = 0.3, 2
    rp = rescale(spec, [0.0, 0.0], 1.0, lam)
    prof = solve_phi(rp)
    corr = solve_corrector(rp, prof)

    def drift(x):
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, prof.derivative(x) / safe, prof.ddphi0)

    def fun(x, y):
        return np.vstack([y[1], -lam * np.exp(prof.evaluate(x)) * y[0] - drift(x)])

    def bc(ya, yb):
        return np.array([ya[1], yb[0]])

    x = np.linspace(0.0, 1.0, 101)
    S = np.array([[0.0, 0.0], [0.0, -(n + 1.0)]])
    ref = solve_bvp(fun, bc, x, np.zeros((2, x.size)), S=S, tol=1e-10, max_nodes=100000)
    assert ref.success
    assert corr.V[0] == pytest.approx(ref.sol(1.0)[1], abs=1e-6)
    assert corr.V[1] == pytest.approx(0.0, abs=1e-12)
    assert corr.W0[0] == pytest.approx(ref.sol(0.0)[0], abs=1e-6)


def test_linear_bracket_closed_form():
    spec = ProblemSpec.from_strings(2, "1 + 0.5*x1", "0.2*x1 + 0.1*x2", "1 + 0.2*x2", b=["0.3", "-0.1"])
    rp = rescale(spec, [0.0, 0.0], 1.0, 0.5)
    prof = solve_phi(rp)
    bracket = leading_bracket(rp, prof, solve_corrector(rp, prof))
    # grad f0 + (lam f/(n f1)) grad f1 - lam/(n+2) (grad f - f b/n)
    assert bracket == pytest.approx([0.15625, 0.14375], abs=1e-9)


def test_torsion_leading_field_vanishes_at_centre():
    spec = ProblemSpec.from_strings(2, "1", "x1", "exp(-(x1^2 + x2^2)/2)")
    lam = 2 * 0.5 / 1.0
    assert leading_field(spec, [2.0, 0.0], lam) == pytest.approx([0.0, 0.0], abs=1e-9)
    assert leading_field(spec, [1.0, 0.0], lam) == pytest.approx([0.5, 0.0], abs=1e-9)


def test_profile_and_corrector_scale_with_lambda_bar():
    spec = ProblemSpec.from_strings(2, "(1 + x1)*exp(u)", "0", "1")
    r = np.linspace(0.0, 1.0, 101)
    slopes, drifts = [], []
    for lam in (0.4, 0.2, 0.1, 0.05):
        rp = rescale(spec, [0.0, 0.0], 1.0, lam)
        prof = solve_phi(rp)
        corr = solve_corrector(rp, prof)
        slopes.append(np.abs(prof.derivative(r)).max() / lam)
        drifts.append(np.abs(corr.V).max() / lam)
    for values in (slopes, drifts):
        assert (max(values) - min(values)) / max(values) < 0.2


def test_profile_depends_continuously_on_the_centre():
    spec = ProblemSpec.from_strings(2, "(1 + x1)*exp(u)", "0", "1")
    dphi1 = [solve_phi(rescale(spec, [p1, 0.0], 1.0, 0.3)).dphi1 for p1 in np.linspace(0.0, 0.45, 10)]
    steps = np.diff(dphi1)
    # a stronger source steepens the profile without jumping between branches
    assert np.all(steps < 0.0)
    assert np.abs(steps).max() < 2 * np.abs(steps).mean()


def test_corrector_for_a_spatial_source_matches_collocation_solve():
    spec = ProblemSpec.from_strings(2, "(1 + x1)*exp(u)", "0", "1")
    lam, n = 0.3, 2
    rp = rescale(spec, [0.0, 0.0], 1.0, lam)
    prof = solve_phi(rp)
    corr = solve_corrector(rp, prof)

    def fun(x, y):
        source = lam * np.exp(prof.evaluate(x))
        return np.vstack([y[1], -source * y[0] - source])

    def bc(ya, yb):
        return np.array([ya[1], yb[0]])

    x = np.linspace(0.0, 1.0, 2001)
    S = np.array([[0.0, 0.0], [0.0, -(n + 1.0)]])
    ref = solve_bvp(fun, bc, x, np.zeros((2, x.size)), S=S, tol=1e-10, max_nodes=100000)
    assert ref.success
    assert corr.V[0] == pytest.approx(ref.sol(1.0)[1], abs=1e-8)
    assert corr.V[0] == pytest.approx(-0.0780455543, abs=1e-7)
    assert corr.V[1] == pytest.approx(0.0, abs=1e-12)

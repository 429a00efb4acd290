import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp

from solvers import (
    ExpressionDomainError,
    ModalOperator,
    ModeNearZero,
    ModeSolveFailure,
    ProblemSpec,
    RescaledProblem,
    SphereFunction,
    apply_inverse_hp,
    build_hp,
    dtn_operator,
    extract_K_vector,
    project_K,
    project_perp,
    rescale,
    solve_phi,
    sphere_basis,
)
from solvers.modal import dtn_multiplier, mode_family

from .conftest import LIOUVILLE_LAMBDA


@pytest.mark.parametrize("n, L", [(2, 8), (3, 6)])
def test_basis_is_orthonormal(n, L):
    basis = sphere_basis(n, L)
    assert np.allclose(basis.analysis @ basis.values, np.eye(basis.size), atol=1e-12)


def test_fourier_harmonics():
    basis = sphere_basis(2, 4)
    theta = np.arctan2(basis.nodes[1], basis.nodes[0])
    c1 = SphereFunction.harmonic(basis, 1, 1)
    assert np.allclose(c1.values(), np.cos(theta) / math.sqrt(math.pi))
    c2 = SphereFunction.harmonic(basis, 2, 2)
    assert np.allclose(c2.gradient()[0], -2 * np.sin(2 * theta) / math.sqrt(math.pi))
    s2 = SphereFunction.harmonic(basis, 2, -2)
    assert np.allclose(s2.values(), np.sin(2 * theta) / math.sqrt(math.pi))


def test_spherical_harmonics():
    basis = sphere_basis(3, 4)
    north = np.array([[0.0], [0.0], [1.0]])
    y20 = SphereFunction.harmonic(basis, 2, 0)
    assert y20.at(north) == pytest.approx([math.sqrt(5 / (4 * math.pi))])
    y10 = SphereFunction.harmonic(basis, 1, 0)
    theta = np.arccos(basis.nodes[2])
    assert np.allclose(y10.gradient()[0], -math.sqrt(3 / (4 * math.pi)) * np.sin(theta))
    assert np.allclose(y10.gradient()[1], 0.0)


@pytest.mark.parametrize("n", [2, 3])
def test_degree_one_vector(n):
    basis = sphere_basis(n, 6)
    a = np.array([0.3, -1.2, 0.7])[:n]
    f = SphereFunction.from_callable(basis, lambda om: a @ om + 0.5 * om[0] ** 2)
    assert extract_K_vector(f) == pytest.approx(a, abs=1e-12)
    assert extract_K_vector(project_perp(f)) == pytest.approx(np.zeros(n), abs=1e-12)
    assert np.allclose((project_K(f) + project_perp(f)).coeffs, f.coeffs)


def test_tail_ratio():
    basis = sphere_basis(2, 8)
    assert SphereFunction.zeros(basis).tail_ratio() == 0.0
    assert SphereFunction.harmonic(basis, 8, 8).tail_ratio() == pytest.approx(1.0)
    assert SphereFunction.harmonic(basis, 2, 2).tail_ratio() == 0.0


def test_triples_round_trip():
    basis = sphere_basis(3, 3)
    f = SphereFunction.from_triples(basis, [[2, -1, 0.5], [3, 3, -0.25]])
    again = SphereFunction.from_triples(basis, f.as_triples())
    assert np.array_equal(again.coeffs, f.coeffs)


@pytest.mark.parametrize("n", [2, 3])
def test_dtn_multipliers_are_degrees(n):
    assert [dtn_multiplier(n, l) for l in range(6)] == pytest.approx(list(range(6)))
    assert dtn_operator(n, 5).multipliers == pytest.approx(np.arange(6))


def test_torsion_hp_multipliers(torsion_spec):
    rp = rescale(torsion_spec, [0.0, 0.0], 1.0, 0.5)
    hp = build_hp(rp, solve_phi(rp), 10)
    assert hp.multipliers == pytest.approx(0.25 * (np.arange(11) - 1), abs=1e-9)


@pytest.mark.parametrize(
    "n, F, p, lam",
    [
        (2, "exp(u)", [0.0, 0.0], LIOUVILLE_LAMBDA),
        (2, "1 + u + 0.3*sin(x1)", [0.2, 0.1], 0.5),
        (3, "exp(u) + x3", [0.1, 0.0, 0.4], 0.3),
    ],
)
def test_degree_one_kernel(n, F, p, lam):
    spec = ProblemSpec.from_strings(n, F, "x1", "1")
    rp = rescale(spec, p, 1.0, lam)
    hp = build_hp(rp, solve_phi(rp), 6)
    assert abs(hp.multiplier(1)) < 1e-8 * max(1.0, np.abs(hp.multipliers).max())


def test_mode_ratio_matches_collocation_solve(liouville_spec):
    rp = rescale(liouville_spec, [0.0, 0.0], 1.0, LIOUVILLE_LAMBDA)
    prof = solve_phi(rp)
    modes = mode_family(rp, prof, 4)
    l, n = 3, 2

    def fun(x, y):
        return np.vstack([y[1], -LIOUVILLE_LAMBDA * np.exp(prof.evaluate(x)) * y[0]])

    def bc(ya, yb):
        return np.array([ya[1], yb[0] - 1.0])

    x = np.linspace(0.0, 1.0, 51)
    S = np.array([[0.0, 0.0], [0.0, -(2.0 * l + n - 1)]])
    ref = solve_bvp(fun, bc, x, np.ones((2, x.size)) * [[1.0], [0.0]], S=S, tol=1e-10, max_nodes=100000)
    assert ref.success
    assert modes.dh1[l] / modes.h1[l] == pytest.approx(ref.sol(1.0)[1], abs=1e-7)


def test_inverse_hp(torsion_spec):
    rp = rescale(torsion_spec, [0.0, 0.0], 1.0, 0.5)
    hp = build_hp(rp, solve_phi(rp), 8)
    basis = sphere_basis(2, 8)
    rng = np.random.default_rng(7)
    psi = SphereFunction(basis, rng.normal(size=basis.size))
    back = apply_inverse_hp(hp, hp.apply(psi))
    assert np.allclose(back.coeffs, project_perp(psi).coeffs, atol=1e-10)


def test_inverse_hp_rejects_small_multiplier():
    op = ModalOperator(np.array([1.0, 0.0, 0.0, 2.0]), 2, 3, kind="H_p")
    f = SphereFunction.harmonic(sphere_basis(2, 3), 3, 3)
    with pytest.raises(ModeNearZero, match=r"\[2\]"):
        apply_inverse_hp(op, f)


def test_torsion_lift_is_homogeneous_polynomial(torsion_spec):
    rp = rescale(torsion_spec, [0.0, 0.0], 1.0, 0.5)
    modes = mode_family(rp, solve_phi(rp), 4)
    psi = SphereFunction.harmonic(sphere_basis(2, 4), 2, 2)
    t = np.linspace(0.0, 2 * math.pi, 7)
    z = 0.5 * np.stack([np.cos(t), np.sin(t)])
    assert np.allclose(modes.lift(psi, z), 0.25 * np.cos(2 * t) / math.sqrt(math.pi), atol=1e-10)


def test_undefined_source_derivative_is_a_mode_failure(liouville_spec, monkeypatch):
    rp = rescale(liouville_spec, [0.0, 0.0], 1.0, LIOUVILLE_LAMBDA)
    prof = solve_phi(rp)

    def undefined(self, phi):
        raise ExpressionDomainError("sqrt of a negative value", stage="expr.evaluate")

    monkeypatch.setattr(RescaledProblem, "dF_du_center", undefined)
    with pytest.raises(ModeSolveFailure, match="F_u undefined") as info:
        mode_family(rp, prof, 4)
    assert info.value.stage == "modal.build_hp"
    assert isinstance(info.value.__cause__, ExpressionDomainError)


@pytest.mark.parametrize("seed", range(10))
def test_degree_one_kernel_for_random_sources(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.choice([2, 3]))
    a, b, c, d = rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5), rng.uniform(0.0, 0.3), rng.uniform(-0.2, 0.2)
    F = f"{a:.4f} + {b:.4f}*u + {c:.4f}*u^2 + {d:.4f}*sin(x1 + x2)"
    spec = ProblemSpec.from_strings(n, F, "0.1*x1", "1")
    rp = rescale(spec, rng.uniform(-0.5, 0.5, n), 1.0, rng.uniform(0.1, 0.5))
    hp = build_hp(rp, solve_phi(rp), 6)
    assert abs(hp.multiplier(1)) < 1e-8 * max(1.0, np.abs(hp.multipliers).max())

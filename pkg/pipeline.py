"""
Outer engine: Neumann defect, shape quasi-Newton, the vector field Y_eps(p),
point Newton and the certified DomainSolution, plus eps-sweeps and the
leading-order grid scan.

All work happens in reduced coordinates (A = I). A spec with a constant
SPD matrix A is reduced once with ``affine_reduce``; the chart travels with
the DomainSolution so results can be certified in original coordinates.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from solvers import (
    AffineChart,
    ConfigError,
    DegenerateCriticalPoint,
    ExpressionDomainError,
    FieldSolution,
    MapDegenerate,
    ModalOperator,
    NewtonDiverged,
    NotTorsion,
    OverdeterminedError,
    PointNewtonDiverged,
    ProblemSpec,
    RadialProfile,
    RescaledProblem,
    Resolution,
    ShapeNewtonDiverged,
    SolverError,
    SphereFunction,
    affine_reduce,
    apply_inverse_hp,
    build_hp,
    check_admissible,
    extract_K_vector,
    first_order_neumann,
    leading_bracket,
    leading_field,
    neumann_values,
    project_perp,
    rescale,
    solve_corrector,
    solve_dirichlet,
    solve_phi,
    sphere_basis,
)

logger = logging.getLogger(__name__)

VARIANTS = ("general", "torsion", "linear")
DET_TOL = 1e-8
TAIL_ALARM = 1e-3


@dataclass(frozen=True)
class Tolerances:
    shape: float = 1e-9
    point: float = 1e-8
    certify: float | None = None
    newton: float = 1e-10
    max_shape_iter: int = 30
    max_point_iter: int = 20
    max_newton_iter: int = 30

    def certify_for(self, n: int) -> float:
        if self.certify is not None:
            return self.certify
        return 1e-5 if n == 3 else 1e-6

    def resolved(self, n: int) -> "Tolerances":
        return Tolerances(
            shape=self.shape,
            point=self.point,
            certify=self.certify_for(n),
            newton=self.newton,
            max_shape_iter=self.max_shape_iter,
            max_point_iter=self.max_point_iter,
            max_newton_iter=self.max_newton_iter,
        )

    def as_dict(self) -> dict:
        return {
            "shape": self.shape,
            "point": self.point,
            "certify": self.certify,
            "newton": self.newton,
            "max_shape_iter": self.max_shape_iter,
            "max_point_iter": self.max_point_iter,
            "max_newton_iter": self.max_newton_iter,
        }


# -------------------------------------------------
# NEUMANN DEFECT
# -------------------------------------------------
def c_bar_of(rp: RescaledProblem, prof: RadialProfile) -> float:
    return -prof.dphi1 / rp.f1_center


def _defect(
    rp: RescaledProblem,
    prof: RadialProfile,
    B: SphereFunction,
    *,
    resolution: Resolution,
    tol: Tolerances,
    init: FieldSolution | None = None,
    c_bar: float | None = None,
) -> tuple[np.ndarray, FieldSolution]:
    """Nodal values of d_nu u + c_bar f1~ on the perturbed boundary, and the field."""
    sol = solve_dirichlet(
        rp, B, init, resolution=resolution, profile=prof, tol=tol.newton, max_iter=tol.max_newton_iter
    )
    c_bar = c_bar_of(rp, prof) if c_bar is None else c_bar
    boundary = sol.grid.z[:, sol.grid.radial.boundary]
    return neumann_values(sol) + c_bar * rp.f1_t(boundary), sol


def neumann_defect(
    rp: RescaledProblem,
    B: SphereFunction,
    *,
    profile: RadialProfile | None = None,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
) -> SphereFunction:
    """d_nu u_{eps,B} + c_bar f1~ at (1 + eps B(omega)) omega."""
    prof = profile or solve_phi(rp)
    resolution = resolution or Resolution(B.L, *_radial_nodes(rp.n))
    values, sol = _defect(rp, prof, B, resolution=resolution, tol=tol or Tolerances())
    return SphereFunction.from_values(sol.basis, values)


def _radial_nodes(n: int) -> tuple[int, int, int]:
    r = Resolution.default(n)
    return r.inner, r.mid, r.outer


def certificate(rp: RescaledProblem, sol: FieldSolution, values: np.ndarray, c_bar: float) -> dict:
    """max |defect| and its ratio to c_bar * min f1~ on the boundary."""
    boundary = sol.grid.z[:, sol.grid.radial.boundary]
    min_f1 = float(np.min(rp.f1_t(boundary)))
    max_defect = float(np.abs(values).max())
    return {
        "max_defect": max_defect,
        "relative_defect": max_defect / (abs(c_bar) * min_f1),
        "min_f1": min_f1,
    }


# -------------------------------------------------
# SHAPE QUASI-NEWTON
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class ShapeResult:
    B: SphereFunction
    defect: SphereFunction
    solution: FieldSolution = field(repr=False)
    values: np.ndarray = field(repr=False)
    Y: np.ndarray
    c_bar: float
    iterations: int
    residual: float
    history: tuple[float, ...]
    stalled: bool


def solve_shape(
    rp: RescaledProblem,
    hp: ModalOperator,
    *,
    profile: RadialProfile | None = None,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
    B0: SphereFunction | None = None,
) -> ShapeResult:
    """B <- B - H_p^{-1} P[defect(eps, B)/eps] until |P defect|_inf / |eps| < tol."""
    stage = "pipeline.solve_shape"
    tol = tol or Tolerances()
    prof = profile or solve_phi(rp)
    resolution = resolution or Resolution(hp.L, *_radial_nodes(rp.n))
    basis = sphere_basis(rp.n, resolution.degree)
    B = B0 if B0 is not None and B0.basis is basis else SphereFunction.zeros(basis)
    c_bar = c_bar_of(rp, prof)
    scale = abs(rp.eps)
    history: list[float] = []
    sol = None
    stalled = False
    for it in range(tol.max_shape_iter + 1):
        try:
            values, sol = _defect(rp, prof, B, resolution=resolution, tol=tol, init=sol, c_bar=c_bar)
        except (MapDegenerate, NewtonDiverged, ExpressionDomainError) as exc:
            if it == 0:
                if not isinstance(exc, ExpressionDomainError):
                    raise
                raise NewtonDiverged(f"defect undefined on the initial shape: {exc.detail}", stage=stage) from exc
            raise ShapeNewtonDiverged(f"forward solve failed at shape iteration {it}: {exc}", stage=stage) from exc
        defect = SphereFunction.from_values(basis, values)
        perp = project_perp(defect)
        res = perp.max_abs() / scale
        history.append(res)
        logger.info("shape %d: |P defect|/eps = %.3e, |B| = %.3e", it, res, B.max_abs())
        if res < tol.shape:
            break
        if it > 0 and res > 0.5 * history[-2] and res < 100 * tol.shape:
            stalled = True
            logger.warning("shape iteration stalled at %.3e (tolerance %.1e), accepting round-off floor", res, tol.shape)
            break
        if not math.isfinite(res) or (it >= 3 and res > history[0]):
            raise ShapeNewtonDiverged(
                f"residual grew to {res:.3e} from {history[0]:.3e} (eps={rp.eps} too large?)", stage=stage
            )
        if it == tol.max_shape_iter:
            raise ShapeNewtonDiverged(
                f"no convergence in {tol.max_shape_iter} iterations (residual {res:.3e})", stage=stage
            )
        B = B - apply_inverse_hp(hp, perp / rp.eps)

    if B.tail_ratio() > TAIL_ALARM:
        logger.warning("shape B has tail ratio %.2e above degree %d; raise the angular degree", B.tail_ratio(), B.L // 2)
    return ShapeResult(
        B=B,
        defect=defect,
        solution=sol,
        values=values,
        Y=extract_K_vector(defect),
        c_bar=c_bar,
        iterations=len(history) - 1,
        residual=res,
        history=tuple(history),
        stalled=stalled,
    )


# -------------------------------------------------
# VECTOR FIELD Y
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class _Centre:
    rp: RescaledProblem
    profile: RadialProfile
    hp: ModalOperator


def _centre(spec: ProblemSpec, p, eps: float, lam_bar: float, resolution: Resolution) -> _Centre:
    check_admissible(spec, p)
    rp = rescale(spec, p, eps, lam_bar)
    prof = solve_phi(rp)
    return _Centre(rp, prof, build_hp(rp, prof, resolution.degree))


def y_field(
    rp: RescaledProblem,
    *,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
    B0: SphereFunction | None = None,
) -> ShapeResult:
    """Solve the projected problem at rp.p; ``.Y`` is the degree-1 part of the remaining defect."""
    resolution = resolution or Resolution.default(rp.n)
    check_admissible(rp.base, rp.p)
    prof = solve_phi(rp)
    hp = build_hp(rp, prof, resolution.degree)
    return solve_shape(rp, hp, profile=prof, resolution=resolution, tol=tol, B0=B0)


# -------------------------------------------------
# DOMAIN SOLUTION
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class DomainSolution:
    p: np.ndarray
    eps: float
    lam_bar: float
    c_bar: float
    B: SphereFunction
    Y: np.ndarray
    residual_report: dict
    provenance: str
    problem: dict
    variant: str = "general"
    kappa: float | None = None
    nondegenerate: bool = True
    resolution: Resolution | None = None
    chart: AffineChart | None = None

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def p_original(self) -> np.ndarray:
        return self.p if self.chart is None else self.chart.to_original(self.p)

    @property
    def certified(self) -> bool:
        return bool(self.residual_report.get("certified", False))

    def to_dict(self) -> dict:
        return {
            "p": self.p.tolist(),
            "p_original": self.p_original.tolist(),
            "eps": self.eps,
            "lambda_bar": self.lam_bar,
            "c_bar": self.c_bar,
            "B": self.B.as_triples(),
            "Y": self.Y.tolist(),
            "residual_report": self.residual_report,
            "provenance": self.provenance,
            "problem": self.problem,
            "variant": self.variant,
            "kappa": self.kappa,
            "nondegenerate": self.nondegenerate,
            "resolution": self.resolution.as_dict() if self.resolution else None,
            "chart": self.chart.as_dict() if self.chart else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSolution":
        try:
            n = int(data["problem"]["n"])
            resolution = Resolution(**data["resolution"])
            basis = sphere_basis(n, resolution.degree)
            return cls(
                p=np.asarray(data["p"], dtype=float),
                eps=float(data["eps"]),
                lam_bar=float(data["lambda_bar"]),
                c_bar=float(data["c_bar"]),
                B=SphereFunction.from_triples(basis, data["B"]),
                Y=np.asarray(data["Y"], dtype=float),
                residual_report=dict(data["residual_report"]),
                provenance=str(data["provenance"]),
                problem=dict(data["problem"]),
                variant=data.get("variant", "general"),
                kappa=data.get("kappa"),
                nondegenerate=bool(data.get("nondegenerate", True)),
                resolution=resolution,
                chart=AffineChart.from_dict(data["chart"]) if data.get("chart") else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed DomainSolution: {exc!r}", stage="pipeline.DomainSolution") from exc


# -------------------------------------------------
# POINT NEWTON
# -------------------------------------------------
def _reduce(spec: ProblemSpec) -> ProblemSpec:
    return spec if spec.is_identity else affine_reduce(spec)


def _torsion_lambda(spec: ProblemSpec, kappa: float, stage: str) -> float:
    if not spec.is_torsion:
        raise NotTorsion(f"F must be a constant for the torsion variant, got F = {spec.F.text}", stage=stage)
    f = float(spec.F.tree)
    if f <= 0.0:
        raise ConfigError(f"torsion constant F = {f:g} must be positive", stage=stage)
    return spec.n * kappa / f


def _nondegeneracy(spec: ProblemSpec, variant: str, kappa: float | None) -> Callable[[np.ndarray], np.ndarray]:
    if variant == "torsion":
        G = spec.torsion_potential(kappa)
        hess = G.hessian(spec.xs)
        return lambda p: spec.matrix_at(hess, p)
    if variant == "linear":
        jac = tuple(e.gradient(spec.xs) for e in spec.linear_field())
        return lambda p: spec.matrix_at(jac, p)
    return spec.hessian_f0


def _locate(
    spec: ProblemSpec,
    eps: float,
    lam_bar: float,
    p0,
    *,
    variant: str,
    kappa: float | None,
    resolution: Resolution | None,
    tol: Tolerances | None,
) -> DomainSolution:
    stage = "pipeline.find_point"
    if eps == 0:
        raise ConfigError("eps must be nonzero", stage=stage)
    if lam_bar <= 0:
        raise ConfigError(f"lambda_bar must be positive, got {lam_bar}", stage=stage)
    original = spec
    work = _reduce(spec)
    n = spec.n
    resolution = resolution or Resolution.default(n)
    tol = (tol or Tolerances()).resolved(n)
    p = np.asarray(p0, dtype=float).reshape(n)
    if work.chart is not None:
        p = work.chart.to_reduced(p)

    def evaluate(q: np.ndarray, B0=None) -> tuple[np.ndarray, ShapeResult, _Centre]:
        centre = _centre(work, q, eps, lam_bar, resolution)
        shape = solve_shape(centre.rp, centre.hp, profile=centre.profile, resolution=resolution, tol=tol, B0=B0)
        return shape.Y / eps, shape, centre

    def G(q: np.ndarray, B0) -> tuple[np.ndarray, ShapeResult, _Centre]:
        try:
            return evaluate(q, B0)
        except (SolverError, ExpressionDomainError) as exc:
            raise PointNewtonDiverged(f"Y could not be evaluated at p={q.tolist()}: {exc}", stage=stage) from exc

    g, shape, centre = evaluate(p)
    norm = float(np.abs(g).max())
    steps = 0
    jac = None
    h = max(1e-4, eps**2)
    while norm >= tol.point:
        if steps == tol.max_point_iter:
            raise PointNewtonDiverged(
                f"no convergence in {tol.max_point_iter} iterations (|Y/eps| = {norm:.3e})", stage=stage
            )
        jac = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            jac[:, j] = (G(p + e, shape.B)[0] - g) / h
        try:
            dp = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise PointNewtonDiverged(f"singular Y-Jacobian at p={p.tolist()}", stage=stage) from exc
        t = 1.0
        while True:
            trial = p + t * dp
            g_new, shape_new, centre_new = G(trial, shape.B)
            norm_new = float(np.abs(g_new).max())
            if norm_new < norm or t < 1.0 / 8:
                break
            t /= 2
        if norm_new >= norm:
            raise PointNewtonDiverged(f"line search failed at p={p.tolist()} with |Y/eps| = {norm:.3e}", stage=stage)
        steps += 1
        p, g, shape, centre, norm = trial, g_new, shape_new, centre_new, norm_new
        logger.info("point %d: p=%s |Y/eps|=%.3e damping %.3g", steps, np.array2string(p, precision=12), norm, t)

    # jac is the last finite-difference Jacobian, taken one step before p
    det = float(np.linalg.det(_nondegeneracy(work, variant, kappa)(p)))
    nondegenerate = abs(det) > DET_TOL
    if not nondegenerate:
        if steps == 0:
            logger.warning(
                "p0=%s is already an exact zero of Y with degenerate %s check (det %.2e); returning it",
                p.tolist(), variant, det,
            )
        else:
            raise DegenerateCriticalPoint(
                f"|det| = {abs(det):.3e} <= {DET_TOL:g} at the converged point {p.tolist()}", stage=stage
            )

    report = certificate(centre.rp, shape.solution, shape.values, shape.c_bar)
    report.update(
        certified=report["relative_defect"] < tol.certify_for(n),
        shape_iterations=shape.iterations,
        shape_residual=shape.residual,
        stalled=shape.stalled,
        point_iterations=steps,
        point_residual=norm,
        newton_iterations=shape.solution.iterations,
        dirichlet_residual=shape.solution.residual,
        tail_ratio=shape.B.tail_ratio(),
        nondegeneracy_det=det,
        point_jacobian=jac.tolist() if jac is not None else None,
    )
    logger.info(
        "domain found: p=%s c_bar=%.12g relative defect %.2e", p.tolist(), shape.c_bar, report["relative_defect"]
    )
    return DomainSolution(
        p=p,
        eps=float(eps),
        lam_bar=float(lam_bar),
        c_bar=shape.c_bar,
        B=shape.B,
        Y=shape.Y,
        residual_report=report,
        provenance=original.spec_hash(),
        problem=original.as_dict(),
        variant=variant,
        kappa=kappa,
        nondegenerate=nondegenerate,
        resolution=resolution,
        chart=work.chart,
    )


def find_point(
    spec: ProblemSpec,
    eps: float,
    lam_bar: float,
    p0,
    *,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
) -> DomainSolution:
    """Newton on p -> Y_eps(p)/eps, nondegeneracy checked on the Hessian of f0."""
    return _locate(spec, eps, lam_bar, p0, variant="general", kappa=None, resolution=resolution, tol=tol)


def find_point_torsion(
    spec: ProblemSpec,
    eps: float,
    kappa: float,
    p0,
    *,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
) -> DomainSolution:
    """Constant F = f with lambda_bar = n kappa / f; targets critical points of f0 + kappa log f1."""
    lam_bar = _torsion_lambda(spec, kappa, "pipeline.find_point_torsion")
    return _locate(spec, eps, lam_bar, p0, variant="torsion", kappa=kappa, resolution=resolution, tol=tol)


def find_point_linear(
    spec: ProblemSpec,
    eps: float,
    lam_bar: float,
    p0,
    *,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
) -> DomainSolution:
    """F = f(x): targets nondegenerate zeros of n grad f - f b."""
    if not spec.is_linear:
        raise ConfigError(f"the linear variant needs F independent of u, got F = {spec.F.text}", stage="pipeline.find_point_linear")
    return _locate(spec, eps, lam_bar, p0, variant="linear", kappa=None, resolution=resolution, tol=tol)


def solve_variant(
    spec: ProblemSpec,
    eps: float,
    p0,
    *,
    variant: str = "general",
    lam_bar: float | None = None,
    kappa: float | None = None,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
) -> DomainSolution:
    if variant == "torsion":
        if kappa is None:
            raise ConfigError("the torsion variant needs kappa", stage="pipeline.find_point_torsion")
        return find_point_torsion(spec, eps, kappa, p0, resolution=resolution, tol=tol)
    if lam_bar is None:
        raise ConfigError(f"the {variant} variant needs lambda_bar", stage="pipeline.find_point")
    if variant == "linear":
        return find_point_linear(spec, eps, lam_bar, p0, resolution=resolution, tol=tol)
    if variant == "general":
        return find_point(spec, eps, lam_bar, p0, resolution=resolution, tol=tol)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}", stage="pipeline.find_point")


def variant_lambda(spec: ProblemSpec, variant: str, lam_bar: float | None, kappa: float | None) -> float:
    if variant == "torsion":
        if kappa is None:
            raise ConfigError("the torsion variant needs kappa", stage="pipeline.variant_lambda")
        return _torsion_lambda(spec, kappa, "pipeline.variant_lambda")
    if lam_bar is None:
        raise ConfigError("lambda_bar is required", stage="pipeline.variant_lambda")
    return lam_bar


# -------------------------------------------------
# CERTIFICATION
# -------------------------------------------------
def _resolve(solution: DomainSolution, original: ProblemSpec, resolution: Resolution | None, tol: Tolerances):
    work = original
    if solution.chart is not None:
        work = affine_reduce(original, solution.chart.anchor)
    resolution = resolution or solution.resolution or Resolution.default(original.n)
    rp = rescale(work, solution.p, solution.eps, solution.lam_bar)
    prof = solve_phi(rp)
    basis = sphere_basis(original.n, resolution.degree)
    B = solution.B if solution.B.basis is basis else SphereFunction.from_callable(basis, solution.B.at)
    sol = solve_dirichlet(rp, B, resolution=resolution, profile=prof, tol=tol.newton, max_iter=tol.max_newton_iter)
    return rp, prof, sol


def certify(
    solution: DomainSolution,
    spec: ProblemSpec | None = None,
    *,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
) -> dict:
    """Re-solve the Dirichlet problem from the profile guess and measure the overdetermined defect."""
    original = ProblemSpec.from_strings(**solution.problem)
    provenance_match = original.spec_hash() == solution.provenance
    if spec is not None:
        provenance_match = provenance_match and spec.spec_hash() == solution.provenance
    if not provenance_match:
        logger.warning("provenance mismatch: solution was computed for a different problem")
    tol = (tol or Tolerances()).resolved(original.n)
    rp, prof, sol = _resolve(solution, original, resolution, tol)
    boundary = sol.grid.z[:, sol.grid.radial.boundary]
    values = neumann_values(sol) + solution.c_bar * rp.f1_t(boundary)
    report = certificate(rp, sol, values, solution.c_bar)
    c_bar = c_bar_of(rp, prof)
    report.update(
        certified=report["relative_defect"] < tol.certify_for(original.n),
        c_bar_recomputed=c_bar,
        c_bar_mismatch=abs(c_bar - solution.c_bar),
        provenance_match=provenance_match,
        newton_iterations=sol.iterations,
        dirichlet_residual=sol.residual,
        tolerance=tol.certify_for(original.n),
    )
    if solution.chart is not None:
        report["original"] = certify_original(solution, original, dirichlet=sol)
    logger.info("certify: relative defect %.2e (%s)", report["relative_defect"], "ok" if report["certified"] else "FAILED")
    return report


def certify_original(
    solution: DomainSolution,
    spec_original: ProblemSpec,
    *,
    dirichlet: FieldSolution | None = None,
    tol: Tolerances | None = None,
) -> dict:
    """Conormal defect nu.A grad u/|A^{1/2} nu| + c f1 in original coordinates by central differences."""
    chart = solution.chart or AffineChart.identity(spec_original.n)
    if dirichlet is None:
        _, _, dirichlet = _resolve(solution, spec_original, None, (tol or Tolerances()).resolved(spec_original.n))
    grid, basis = dirichlet.grid, dirichlet.basis
    kB = grid.radial.boundary
    eps, p = solution.eps, solution.p
    omega, R, tau = basis.nodes, grid.R[kB], grid.tau[:, kB]
    nu_y = omega - np.einsum("tq,tiq->iq", tau / R, basis.frame)
    nu_x = chart.S_inv @ nu_y
    nu_x /= np.linalg.norm(nu_x, axis=0)
    x_b = chart.to_original(p[:, None] + eps * grid.z[:, kB])

    def u(x):
        return dirichlet.evaluate((chart.to_reduced(x) - p[:, None]) / eps)

    h = 1e-3 * abs(eps)
    grad = np.stack(
        [(u(x_b + h * e[:, None]) - u(x_b - h * e[:, None])) / (2 * h) for e in np.eye(spec_original.n)]
    )
    flux = (nu_x * (chart.A @ grad)).sum(axis=0) / chart.conormal_scale(nu_x)
    c = solution.c_bar / abs(eps)
    f1 = spec_original.f1(*x_b)
    defect = flux + c * f1
    return {
        "max_defect": float(np.abs(defect).max()),
        "relative_defect": float(np.abs(defect).max() / (c * f1.min())),
        "c": c,
        "step": h,
    }


# -------------------------------------------------
# SWEEPS
# -------------------------------------------------
def richardson_orders(eps_list: Sequence[float], errors: Sequence[float | None]) -> list[float | None]:
    """log(e_i/e_{i+1}) / log(eps_i/eps_{i+1}) for consecutive pairs."""
    out = []
    for (e1, a), (e2, b) in zip(zip(eps_list, errors), zip(eps_list[1:], errors[1:])):
        if a is None or b is None or a <= 0 or b <= 0 or not (math.isfinite(a) and math.isfinite(b)):
            out.append(None)
        else:
            out.append(math.log(a / b) / math.log(abs(e1 / e2)))
    return out


@dataclass(frozen=True, eq=False)
class SweepResult:
    rows: list[dict]
    solutions: list[DomainSolution | None]
    orders: dict[str, list[float | None]]


def _asymptotics_at(spec: ProblemSpec, eps: float, lam_bar: float, p0, resolution: Resolution, tol: Tolerances) -> dict:
    """Y/eps against the leading bracket and d_nu u against its first-order expansion, both at p0."""
    work = _reduce(spec)
    p = np.asarray(p0, dtype=float)
    if work.chart is not None:
        p = work.chart.to_reduced(p)
    centre = _centre(work, p, eps, lam_bar, resolution)
    rp, prof = centre.rp, centre.profile
    corr = solve_corrector(rp, prof)
    shape = solve_shape(rp, centre.hp, profile=prof, resolution=resolution, tol=tol)
    bracket = leading_bracket(rp, prof, corr)
    basis = sphere_basis(spec.n, resolution.degree)
    zero = SphereFunction.zeros(basis)
    sol = solve_dirichlet(rp, zero, resolution=resolution, profile=prof, tol=tol.newton, max_iter=tol.max_newton_iter)
    expansion = first_order_neumann(rp, prof, corr, centre.hp, zero)
    return {
        "y_error": float(np.abs(shape.Y / eps - bracket).max()),
        "neumann_error": float(np.abs(neumann_values(sol) - expansion.values()).max()),
        "initial_defect": shape.history[0] * abs(eps),
    }


def sweep(
    spec: ProblemSpec,
    eps_list: Sequence[float],
    lam_bar: float | None,
    p0,
    *,
    variant: str = "general",
    kappa: float | None = None,
    resolution: Resolution | None = None,
    tol: Tolerances | None = None,
    workers: int = 1,
) -> SweepResult:
    """One DomainSolution per eps plus Richardson orders; failing eps are recorded and skipped."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list) or any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError(f"eps_list must be positive and decreasing, got {eps_list}", stage="pipeline.sweep")
    resolution = resolution or Resolution.default(spec.n)
    tol = (tol or Tolerances()).resolved(spec.n)
    lam = variant_lambda(spec, variant, lam_bar, kappa)

    def one(eps: float) -> tuple[dict, DomainSolution | None]:
        row: dict = {"eps": eps}
        try:
            sol = solve_variant(
                spec, eps, p0, variant=variant, lam_bar=lam, kappa=kappa, resolution=resolution, tol=tol
            )
            row.update(_asymptotics_at(spec, eps, lam, p0, resolution, tol))
        except OverdeterminedError as exc:
            logger.warning("sweep eps=%g failed: %s", eps, exc)
            row.update(error=type(exc).__name__, stage=exc.stage, message=exc.detail)
            return row, None
        B_norm = sol.B.max_abs()
        row.update(
            p=sol.p_original.tolist(),
            c_bar=sol.c_bar,
            B_norm=B_norm,
            B_over_eps=B_norm / eps,
            relative_defect=sol.residual_report["relative_defect"],
            certified=sol.certified,
            error=None,
        )
        return row, sol

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, eps_list))
    rows = [r for r, _ in results]
    solutions = [s for _, s in results]
    orders = {
        key: richardson_orders(eps_list, [r.get(key) for r in rows])
        for key in ("y_error", "neumann_error", "initial_defect", "B_norm")
    }
    logger.info("sweep orders: %s", orders)
    return SweepResult(rows=rows, solutions=solutions, orders=orders)


# -------------------------------------------------
# LEADING-ORDER SCAN
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class ScanResult:
    axes: list[np.ndarray]
    points: np.ndarray
    field: np.ndarray
    cells: list[dict]


def scan(
    spec: ProblemSpec,
    lam_bar: float,
    lower: Sequence[float],
    upper: Sequence[float],
    points: int,
    *,
    workers: int = 1,
) -> ScanResult:
    """Leading-order field on a grid; cells where every component changes sign are seed candidates."""
    n = spec.n
    if points < 2:
        raise ConfigError(f"scan needs at least 2 points per axis, got {points}", stage="pipeline.scan")
    work = _reduce(spec)
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(lower, upper)]
    grid = np.array(list(product(*axes)))

    def at(x: np.ndarray) -> np.ndarray:
        y = x if work.chart is None else work.chart.to_reduced(x)
        try:
            check_admissible(work, y)
            return leading_field(work, y, lam_bar)
        except OverdeterminedError as exc:
            logger.debug("scan point %s skipped: %s", x.tolist(), exc)
            return np.full(n, np.nan)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        values = np.array(list(pool.map(at, grid)))
    cube = values.reshape((points,) * n + (n,))

    cells = []
    for idx in product(range(points - 1), repeat=n):
        corners = [tuple(i + d for i, d in zip(idx, offs)) for offs in product((0, 1), repeat=n)]
        vals = np.array([cube[c] for c in corners])
        if np.isnan(vals).any():
            continue
        if all(vals[:, k].min() <= 0.0 <= vals[:, k].max() for k in range(n)):
            lo = np.array([axes[k][idx[k]] for k in range(n)])
            hi = np.array([axes[k][idx[k] + 1] for k in range(n)])
            cells.append(
                {
                    "index": len(cells),
                    "lower": lo.tolist(),
                    "upper": hi.tolist(),
                    "seed": ((lo + hi) / 2).tolist(),
                    "min_norm": float(np.linalg.norm(vals, axis=1).min()),
                }
            )
    logger.info("scan: %d sign-change cells on a %s grid", len(cells), "x".join([str(points)] * n))
    return ScanResult(axes=axes, points=grid, field=values, cells=cells)

"""
Forward Dirichlet solver on the perturbed ball r < 1 + eps B(omega).

The domain is pulled back to the unit ball by

    (rho, omega) -> R(rho, omega) omega,   R = rho (1 + eps chi(rho) B(omega)),

with chi the quintic cutoff of :mod:`solvers.spectral`. In these coordinates
the rescaled operator Delta + eps b~ . grad is written in divergence form

    J R^{n-1} (Delta u) = d_rho Phi_rho + div_S Phi_S,
    Phi_rho = R^{n-1} (1 + |tau|^2/R^2) U_rho / J - R^{n-3} tau . grad_S U,
    Phi_S   = J R^{n-3} grad_S U - R^{n-3} tau U_rho,

where J = dR/drho and tau = grad_S R. Every radial node carries the angular
Galerkin coefficients of U; the angular divergence is integrated by parts
against the basis. Inside rho < 1/4 the map is the identity and the plain
polar Laplacian is used on the parity-folded Chebyshev subdomain.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import ExpressionDomainError, MapDegenerate, NewtonDiverged
from .modal import ModalOperator, ModeFamily, SphereBasis, SphereFunction
from .problem_core import RescaledProblem
from .radial import Corrector, RadialProfile, solve_phi
from .spectral import RadialGrid, cutoff, radial_grid

logger = logging.getLogger(__name__)

MAX_EPS_B = 0.5
NEWTON_TOL = 1e-10
MAX_NEWTON = 30


@dataclass(frozen=True)
class Resolution:
    degree: int
    inner: int = 10
    mid: int = 10
    outer: int = 16

    @classmethod
    def default(cls, n: int) -> "Resolution":
        if n == 3:
            return cls(degree=12, inner=8, mid=8, outer=12)
        return cls(degree=32)

    def as_dict(self) -> dict:
        return {"degree": self.degree, "inner": self.inner, "mid": self.mid, "outer": self.outer}


class NewtonStep(NamedTuple):
    iteration: int
    residual: float
    step: float
    damping: float


# -------------------------------------------------
# GEOMETRY
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class MappedGrid:
    rp: RescaledProblem
    B: SphereFunction
    radial: RadialGrid
    s: np.ndarray
    R: np.ndarray
    J: np.ndarray
    tau: np.ndarray
    z: np.ndarray

    @property
    def basis(self) -> SphereBasis:
        return self.B.basis

    @property
    def eps(self) -> float:
        return self.rp.eps

    @property
    def shape(self) -> tuple[int, int]:
        return self.radial.size, self.basis.size


def build_mapped_grid(rp: RescaledProblem, B: SphereFunction, resolution: Resolution) -> MappedGrid:
    if B.basis.n != rp.n:
        raise ValueError(f"B lives on S^{B.basis.n - 1}, problem has n={rp.n}")
    radial = radial_grid(resolution.inner, resolution.mid, resolution.outer)
    eps = rp.eps
    Bq = B.values()
    size = abs(eps) * np.abs(Bq).max()
    if size >= MAX_EPS_B:
        raise MapDegenerate(f"||eps B||_inf = {size:.3g} must stay below {MAX_EPS_B}", stage="forward.solve_dirichlet")
    chi, dchi = radial.chi
    rho = radial.rho[:, None]
    s = 1.0 + eps * chi[:, None] * Bq[None, :]
    R = rho * s
    J = s + rho * eps * dchi[:, None] * Bq[None, :]
    tau = rho[None] * eps * chi[None, :, None] * B.gradient()[:, None, :]
    z = R[None] * B.basis.nodes[:, None, :]
    if J.min() <= 0.0:
        raise MapDegenerate(f"radial Jacobian {J.min():.3g} <= 0", stage="forward.solve_dirichlet")
    return MappedGrid(rp=rp, B=B, radial=radial, s=s, R=R, J=J, tau=tau, z=z)


# -------------------------------------------------
# DISCRETE SYSTEM
# -------------------------------------------------
def _proj(basis: SphereBasis, diag: np.ndarray, right: np.ndarray) -> np.ndarray:
    """A diag(d_k) right for every node k: (K, Nc, Nc)."""
    return np.einsum("cq,kq,qd->kcd", basis.analysis, diag, right)


@dataclass(frozen=True, eq=False)
class _System:
    grid: MappedGrid
    linear: np.ndarray
    rhs: np.ndarray
    row_scale: np.ndarray
    pde: np.ndarray
    weight: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def nodal(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self.shape) @ self.grid.basis.values.T

    def nonlinear(self, x: np.ndarray) -> np.ndarray:
        rp = self.grid.rp
        F = rp.F_t(self.grid.z, self.nodal(x))
        out = rp.lam_bar * np.einsum("cq,kq->kc", self.grid.basis.analysis, self.weight * F)
        out[~self.pde] = 0.0
        return out.ravel()

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.row_scale * (self.linear @ x + self.nonlinear(x) - self.rhs)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        rp = self.grid.rp
        K, Nc = self.shape
        Fu = rp.dF_du_t(self.grid.z, self.nodal(x))
        blocks = rp.lam_bar * _proj(self.grid.basis, self.weight * Fu, self.grid.basis.values)
        jac = self.linear.copy()
        for k in np.flatnonzero(self.pde):
            jac[k * Nc : (k + 1) * Nc, k * Nc : (k + 1) * Nc] += blocks[k]
        return self.row_scale[:, None] * jac


def _assemble(grid: MappedGrid) -> _System:
    rp = grid.rp
    basis = grid.basis
    rad = grid.radial
    n, eps = rp.n, rp.eps
    K, Nc = grid.shape
    S, G, W = basis.values, basis.grads, basis.weights
    deg = basis.degrees
    odd = deg % 2 == 1
    lap = deg * (deg + n - 2)
    L4 = np.zeros((K, Nc, K, Nc))
    weight = np.zeros((K, basis.weights.size))
    pde = np.zeros(K, dtype=bool)

    b = rp.b_t(grid.z)  # (n, K, Nq)
    b_omega = np.einsum("ikq,iq->kq", b, basis.nodes)
    b_tan = np.einsum("ikq,tiq->tkq", b, basis.frame)

    # inner subdomain: identity map, polar Laplacian per mode
    ki = np.arange(rad.inner.start, rad.inner.stop)
    rho_i = rad.rho[ki]
    Dpar = np.where(odd[None, None, :], rad.D_odd[:, :, None], rad.D_even[:, :, None])
    D2par = np.where(odd[None, None, :], rad.D2_odd[:, :, None], rad.D2_even[:, :, None])
    radial_part = D2par + (n - 1) / rho_i[:, None, None] * Dpar
    for c in range(Nc):
        L4[ki[:, None], c, ki[None, :], c] += radial_part[:, :, c]
        L4[ki, c, ki, c] -= lap[c] / rho_i**2
    Mb = _proj(basis, eps * b_omega[ki], S)
    L4[np.ix_(ki, range(Nc), ki, range(Nc))] += np.einsum("acd,abd->acbd", Mb, Dpar)
    drift_tan = sum(_proj(basis, eps * b_tan[t, ki] / rho_i[:, None], G[t]) for t in range(n - 1))
    for a, k in enumerate(ki):
        L4[k, :, k, :] += drift_tan[a]
    weight[ki] = 1.0
    pde[ki[:-1]] = True

    # mapped subdomains in divergence form
    for seg, D in ((rad.mid, rad.D_mid), (rad.outer, rad.D_outer)):
        ks = np.arange(seg.start, seg.stop)
        R, J, tau = grid.R[ks], grid.J[ks], grid.tau[:, ks]
        Rn1, Rn3 = R ** (n - 1), R ** (n - 3)
        tau2 = (tau**2).sum(axis=0)
        alpha = Rn1 * (1.0 + tau2 / R**2) / J
        beta = Rn3[None] * tau
        gamma = J * Rn3
        vol = J * Rn1
        gamma_b = b_omega[ks] / J - (b_tan[:, ks] * tau).sum(axis=0) / (R * J)

        P = _proj(basis, alpha, S)
        Q = sum(_proj(basis, beta[t], G[t]) for t in range(n - 1))
        Gbeta = sum(np.einsum("qc,kq,qd->kcd", G[t], W * beta[t], S) for t in range(n - 1))
        Ggamma = sum(np.einsum("qc,kq,qd->kcd", G[t], W * gamma, G[t]) for t in range(n - 1))
        Bomega = _proj(basis, eps * vol * gamma_b, S)
        Btan = sum(_proj(basis, eps * vol * b_tan[t, ks] / R, G[t]) for t in range(n - 1))

        block = np.einsum("ik,kj,kcd->icjd", D, D, P)
        block -= np.einsum("ij,jcd->icjd", D, Q)
        block += np.einsum("ij,icd->icjd", D, Gbeta + Bomega)
        diag = Btan - Ggamma
        for a in range(len(ks)):
            block[a, :, a, :] += diag[a]
        rows = ks[1:-1]
        L4[np.ix_(rows, range(Nc), ks, range(Nc))] += block[1:-1]
        weight[ks] = vol
        pde[rows] = True

    # interface and boundary rows
    kI, kM0, kM1 = ki[-1], rad.mid.start, rad.mid.stop - 1
    kO0, kB = rad.outer.start, rad.outer.stop - 1
    L4[[kI, kM0, kM1, kO0, kB]] = 0.0
    mid = np.arange(rad.mid.start, rad.mid.stop)
    out = np.arange(rad.outer.start, rad.outer.stop)
    for c in range(Nc):
        L4[kI, c, kI, c] = 1.0
        L4[kI, c, kM0, c] = -1.0
        L4[kM0, c, ki, c] = Dpar[-1, :, c]
        L4[kM0, c, mid, c] -= rad.D_mid[0]
        L4[kM1, c, kM1, c] = 1.0
        L4[kM1, c, kO0, c] = -1.0
        L4[kO0, c, mid, c] = rad.D_mid[-1]
        L4[kO0, c, out, c] -= rad.D_outer[0]
        L4[kB, c, kB, c] = 1.0

    linear = L4.reshape(K * Nc, K * Nc)
    rhs = np.zeros((K, Nc))
    rhs[kB] = basis.analyze(rp.f0_t(grid.z[:, kB]))
    row_scale = 1.0 / np.abs(linear).max(axis=1)
    return _System(grid=grid, linear=linear, rhs=rhs.ravel(), row_scale=row_scale, pde=pde, weight=weight)


# -------------------------------------------------
# SOLUTIONS
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class FieldSolution:
    grid: MappedGrid
    coeffs: np.ndarray
    residual: float
    newton_log: tuple[NewtonStep, ...]
    system: _System = field(repr=False)

    @property
    def basis(self) -> SphereBasis:
        return self.grid.basis

    @property
    def iterations(self) -> int:
        return len(self.newton_log)

    def values(self) -> np.ndarray:
        """u at the nodes, shape (K, Nq)."""
        return self.coeffs @ self.basis.values.T

    def dirichlet_trace(self) -> SphereFunction:
        return SphereFunction(self.basis, self.coeffs[self.grid.radial.boundary])

    @cached_property
    def _parity(self) -> np.ndarray:
        return np.where(self.basis.degrees % 2 == 1, -1.0, 1.0)

    def evaluate(self, z) -> np.ndarray:
        """u at physical points z (n, P) of the rescaled domain (a thin layer outside is extrapolated)."""
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=0)
        inside = r > 0
        omega = np.where(inside, z / np.where(inside, r, 1.0), np.eye(z.shape[0])[:, :1])
        Bw = self.grid.B.at(omega)
        eps = self.grid.eps
        rho = r / (1.0 + eps * Bw)
        for _ in range(50):
            chi, dchi = cutoff(rho)
            g = rho * (1.0 + eps * chi * Bw) - r
            step = g / (1.0 + eps * Bw * (chi + rho * dchi))
            rho = np.maximum(rho - step, 0.0)
            if np.abs(step).max() < 1e-15:
                break
        modes = self.grid.radial.interpolate(self.coeffs, self._parity, rho)
        return np.einsum("pc,pc->p", modes, self.basis.basis_at(omega))


def _initial_guess(rp: RescaledProblem, grid: MappedGrid, profile: RadialProfile | None) -> np.ndarray:
    if profile is None and rp.lam_bar > 0:
        profile = solve_phi(rp)
    u0 = rp.u_center
    if profile is None:
        values = np.full(grid.R.shape, u0)
    else:
        values = u0 + profile.evaluate(grid.R)
    return (values @ grid.basis.analysis.T).ravel()


def solve_dirichlet(
    rp: RescaledProblem,
    B: SphereFunction,
    init: FieldSolution | None = None,
    *,
    resolution: Resolution | None = None,
    profile: RadialProfile | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = MAX_NEWTON,
) -> FieldSolution:
    """Damped Newton for L~u + lam_bar F~(z, u) = 0, u = f~0 on r = 1 + eps B."""
    stage = "forward.solve_dirichlet"
    if resolution is None:
        if init is not None:
            rad = init.grid.radial
            resolution = Resolution(B.L, rad.n_inner, rad.n_mid, rad.n_outer)
        else:
            resolution = Resolution.default(rp.n)
    resolution = Resolution(B.L, resolution.inner, resolution.mid, resolution.outer)
    grid = build_mapped_grid(rp, B, resolution)
    system = _assemble(grid)
    if init is not None and init.coeffs.shape == grid.shape:
        x = init.coeffs.ravel().copy()
    else:
        x = _initial_guess(rp, grid, profile)

    log: list[NewtonStep] = []
    try:
        res = system.residual(x)
    except ExpressionDomainError as exc:
        raise NewtonDiverged(f"initial guess outside the data's domain: {exc.detail}", stage=stage) from exc
    norm = float(np.abs(res).max())
    for it in range(1, max_iter + 1):
        try:
            jac = system.jacobian(x)
        except ExpressionDomainError as exc:
            raise NewtonDiverged(f"jacobian undefined at iteration {it}: {exc.detail}", stage=stage) from exc
        try:
            dx = scipy.linalg.solve(jac, -res, check_finite=True)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NewtonDiverged(f"singular Newton system at iteration {it}: {exc}", stage=stage) from exc
        if norm < tol:
            # one last full correction from an already-converged state
            x = x + dx
            try:
                res = system.residual(x)
            except ExpressionDomainError as exc:
                raise NewtonDiverged(f"final correction left the data's domain: {exc.detail}", stage=stage) from exc
            norm = float(np.abs(res).max())
            log.append(NewtonStep(it, norm, float(np.abs(dx).max()), 1.0))
            logger.debug("newton %d: final correction, residual %.3e", it, norm)
            break
        t = 1.0
        accepted = False
        while t >= 1.0 / 64:
            trial = x + t * dx
            try:
                trial_res = system.residual(trial)
            except ExpressionDomainError:
                t /= 2
                continue
            trial_norm = float(np.abs(trial_res).max())
            if np.isfinite(trial_norm) and trial_norm <= (1.0 - 1e-4 * t) * norm:
                accepted = True
                break
            t /= 2
        if not accepted:
            if norm < 1e3 * tol:
                logger.warning("newton stalled at residual %.3e (floor), accepting", norm)
                break
            raise NewtonDiverged(
                f"line search failed at iteration {it} with residual {norm:.3e} "
                f"(eps={rp.eps}, lambda_bar={rp.lam_bar} outside the small-parameter regime?)",
                stage=stage,
            )
        x, res, norm = trial, trial_res, trial_norm
        log.append(NewtonStep(it, norm, float(np.abs(dx).max() * t), t))
        logger.debug("newton %d: residual %.3e, damping %.3g", it, norm, t)
    else:
        raise NewtonDiverged(f"no convergence in {max_iter} iterations (residual {norm:.3e})", stage=stage)

    if norm >= 1e3 * tol:
        raise NewtonDiverged(f"residual {norm:.3e} after final correction", stage=stage)
    logger.info("dirichlet solve: %d newton steps, residual %.2e", len(log), norm)
    return FieldSolution(
        grid=grid, coeffs=x.reshape(grid.shape), residual=norm, newton_log=tuple(log), system=system
    )


# -------------------------------------------------
# NEUMANN TRACES
# -------------------------------------------------
def _normal_derivative(grid: MappedGrid, coeffs: np.ndarray) -> np.ndarray:
    """nu . grad u at (1 + eps B(omega)) omega with the exact unit normal."""
    rad, basis = grid.radial, grid.basis
    kB = rad.boundary
    U_rho = rad.D_outer[-1] @ coeffs[rad.outer]
    u_rho = basis.values @ U_rho
    grad_s = basis.grads @ coeffs[kB]  # (n-1, Nq)
    R, J, tau = grid.R[kB], grid.J[kB], grid.tau[:, kB]
    tau2 = (tau**2).sum(axis=0) / R**2
    return (u_rho / J * (1.0 + tau2) - (tau * grad_s).sum(axis=0) / R**2) / np.sqrt(1.0 + tau2)


def neumann_values(sol: FieldSolution) -> np.ndarray:
    return _normal_derivative(sol.grid, sol.coeffs)


def neumann_trace(sol: FieldSolution) -> SphereFunction:
    return SphereFunction.from_values(sol.basis, neumann_values(sol))


def linearized_dtn(sol: FieldSolution, psi: SphereFunction) -> SphereFunction:
    """Dirichlet-to-Neumann map of the linearization at sol, applied to psi."""
    system = sol.system
    K, Nc = system.shape
    rhs = np.zeros((K, Nc))
    rhs[sol.grid.radial.boundary] = psi.coeffs
    jac = system.jacobian(sol.coeffs.ravel())
    dx = scipy.linalg.solve(jac, system.row_scale * rhs.ravel())
    return SphereFunction.from_values(sol.basis, _normal_derivative(sol.grid, dx.reshape(K, Nc)))


# -------------------------------------------------
# FIRST-ORDER ASYMPTOTICS
# -------------------------------------------------
def first_order_field(
    rp: RescaledProblem,
    prof: RadialProfile,
    corr: Corrector,
    modes: ModeFamily,
    B: SphereFunction,
    z,
) -> np.ndarray:
    """f0(p) + phi(|z|) + eps [W(|z|) . z + lift(grad f0(p) . omega - phi'(1) B)](z)."""
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=0)
    spec = rp.base
    grad_f0 = spec.vector_at(spec.grad_f0, rp.p)
    psi = SphereFunction.from_callable(B.basis, lambda om: grad_f0 @ om) - prof.dphi1 * B
    u1 = (corr.evaluate(r) * z).sum(axis=0) + modes.lift(psi, z)
    return rp.u_center + prof.evaluate(r) + rp.eps * u1


def first_order_neumann(
    rp: RescaledProblem,
    prof: RadialProfile,
    corr: Corrector,
    hp: ModalOperator,
    B: SphereFunction,
) -> SphereFunction:
    """phi'(1) + eps {H_p B + [kappa1 grad f0(p) + V_p] . omega}."""
    spec = rp.base
    bracket = prof.degree_one_ratio * spec.vector_at(spec.grad_f0, rp.p) + corr.V
    basis = B.basis
    base = SphereFunction.from_callable(basis, lambda om: prof.dphi1 + 0.0 * om[0])
    linear = SphereFunction.from_callable(basis, lambda om: bracket @ om)
    return base + rp.eps * (hp.apply(B) + linear)

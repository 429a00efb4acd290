"""
Radial ODEs around a centre p.

Profile:    phi'' + (n-1)/r phi' + lam_bar F(p, f0(p) + phi) = 0,  phi'(0) = 0, phi(1) = 0
Corrector:  W_j'' + (n+1)/r W_j' + lam_bar F_u W_j + lam_bar d_jF + b_j(p) phi'/r = 0,  W_j(1) = 0

Both are regular-singular at r = 0. Integration starts at R0 from the
two-term series of the regular solution and runs DOP853 (scipy) with tight
tolerances; the profile is found by Newton shooting on phi(0) with the
variational equation carried along.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ExpressionDomainError, NoConvergence, ProfileNegative
from .problem_core import ProblemSpec, RescaledProblem, rescale

logger = logging.getLogger(__name__)

R0 = 1e-4
R_EXT = 1.25
RTOL = 1e-12
ATOL = 1e-13
GRID_SIZE = 801
MAX_SHOOTING = 50


def integrate(rhs, y0, r_end: float, stage: str, events=None):
    """solve_ivp from R0 to r_end; every failure becomes NoConvergence(stage)."""
    try:
        sol = solve_ivp(
            rhs, (R0, r_end), y0, method="DOP853", rtol=RTOL, atol=ATOL, dense_output=True, events=events
        )
    except ExpressionDomainError as exc:
        raise NoConvergence(f"ODE right-hand side left its domain: {exc.detail}", stage=stage) from exc
    if sol.status == -1 or not np.all(np.isfinite(sol.y)):
        raise NoConvergence(f"integration failed: {sol.message}", stage=stage)
    return sol


def _piecewise(r, series, dense_fn):
    """Series below R0, dense output above."""
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    out = np.empty((len(series(np.zeros(1))),) + flat.shape)
    low = flat < R0
    if low.any():
        out[:, low] = series(flat[low])
    if (~low).any():
        out[:, ~low] = dense_fn(flat[~low])
    return out.reshape((-1,) + r.shape)


@dataclass(frozen=True, eq=False)
class RadialProfile:
    p: np.ndarray
    lam_bar: float
    n: int
    phi0: float
    ddphi0: float
    delta: float
    shooting_iterations: int
    rp: RescaledProblem = field(repr=False)
    dense: object = field(repr=False)
    grid_size: int = GRID_SIZE

    @cached_property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0 + self.delta, self.grid_size)

    @cached_property
    def phi(self) -> np.ndarray:
        return self.evaluate(self.grid)

    @cached_property
    def dphi(self) -> np.ndarray:
        return self.derivative(self.grid)

    @cached_property
    def ddphi(self) -> np.ndarray:
        return self.second_derivative(self.grid)

    def state(self, r) -> np.ndarray:
        """(phi, phi') at radii r, clipped to [0, 1 + delta]."""
        r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0 + self.delta)
        c = self.ddphi0
        return _piecewise(
            r,
            lambda s: np.stack([self.phi0 + 0.5 * c * s**2, c * s]),
            lambda s: self.dense(s)[:2],
        )

    def evaluate(self, r) -> np.ndarray:
        return self.state(r)[0]

    def derivative(self, r) -> np.ndarray:
        return self.state(r)[1]

    def second_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        phi, dphi = self.state(r)
        safe = np.where(r < R0, 1.0, r)
        out = -(self.n - 1) * dphi / safe - self.lam_bar * self.rp.F_center(phi)
        return np.where(r < R0, self.ddphi0, out)

    @property
    def dphi1(self) -> float:
        return float(self.derivative(1.0))

    @property
    def ddphi1(self) -> float:
        return float(self.second_derivative(1.0))

    @property
    def degree_one_ratio(self) -> float:
        """phi''(1)/phi'(1): the degree-1 Dirichlet-to-Neumann multiplier of T_p."""
        return self.ddphi1 / self.dphi1


def _profile_rhs(rp: RescaledProblem, n: int):
    lam = rp.lam_bar

    def rhs(r, y):
        phi, dphi = y[0], y[1]
        return [dphi, -(n - 1) / r * dphi - lam * float(rp.F_center(phi))]

    return rhs


def _shooting_rhs(rp: RescaledProblem, n: int):
    lam = rp.lam_bar

    def rhs(r, y):
        phi, dphi, s, ds = y
        return [
            dphi,
            -(n - 1) / r * dphi - lam * float(rp.F_center(phi)),
            ds,
            -(n - 1) / r * ds - lam * float(rp.dF_du_center(phi)) * s,
        ]

    return rhs


def _series_start(rp: RescaledProblem, a: float, n: int) -> list[float]:
    c = -rp.lam_bar * float(rp.F_center(a)) / n
    c_a = -rp.lam_bar * float(rp.dF_du_center(a)) / n
    return [a + 0.5 * c * R0**2, c * R0, 1.0 + 0.5 * c_a * R0**2, c_a * R0]


def solve_phi(rp: RescaledProblem, *, grid_size: int = GRID_SIZE, max_iter: int = MAX_SHOOTING) -> RadialProfile:
    """Shoot on phi(0) until phi(1) = 0, then extend past r = 1."""
    stage = "radial.solve_phi"
    n = rp.n
    try:
        a = rp.lam_bar * float(rp.F_center(0.0)) / (2 * n)
    except ExpressionDomainError as exc:
        raise NoConvergence(exc.detail, stage=stage) from exc
    rhs = _shooting_rhs(rp, n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if not np.isfinite(a) or abs(a) > 50.0:
            break
        try:
            y0 = _series_start(rp, a, n)
        except ExpressionDomainError as exc:
            raise NoConvergence(exc.detail, stage=stage) from exc
        sol = integrate(rhs, y0, 1.0, stage)
        phi1, s1 = sol.y[0, -1], sol.y[2, -1]
        logger.debug("shooting %d: phi(0)=%.15g phi(1)=%.3e", it, a, phi1)
        if abs(phi1) < 1e-13 * max(1.0, abs(a)):
            converged = True
            break
        if s1 == 0.0 or not np.isfinite(s1):
            break
        step = phi1 / s1
        a -= step
        if abs(step) < 1e-15 * max(1.0, abs(a)):
            converged = True
            break
    if not converged:
        raise NoConvergence(
            f"shooting on phi(0) did not converge for lambda_bar={rp.lam_bar} at p={rp.p.tolist()} "
            "(lambda_bar too large for this centre)",
            stage=stage,
        )

    # final pass with a trust region past r = 1
    trust = 10.0 * max(1.0, abs(a))

    def leave(r, y):
        return trust - abs(y[0])

    leave.terminal = True
    try:
        sol = integrate(_profile_rhs(rp, n), _series_start(rp, a, n)[:2], R_EXT, stage, events=leave)
    except NoConvergence:
        sol = integrate(_profile_rhs(rp, n), _series_start(rp, a, n)[:2], 1.0 + 1e-3, stage)
    reached = float(sol.t[-1])
    delta = min(R_EXT - 1.0, reached - 1.0)
    if delta <= 0.0:
        raise NoConvergence("profile cannot be continued past r = 1", stage=stage)

    c = -rp.lam_bar * float(rp.F_center(a)) / n
    prof = RadialProfile(
        p=rp.p,
        lam_bar=rp.lam_bar,
        n=n,
        phi0=a,
        ddphi0=c,
        delta=delta,
        shooting_iterations=it,
        rp=rp,
        dense=sol.sol,
        grid_size=grid_size,
    )
    inside = prof.grid[prof.grid < 1.0 - 1e-12]
    if rp.lam_bar > 0 and (np.any(prof.evaluate(inside) <= 0.0) or prof.dphi1 >= 0.0):
        raise ProfileNegative(
            f"phi must be positive inside the ball with phi'(1) < 0; got min phi={prof.evaluate(inside).min():.3g}, "
            f"phi'(1)={prof.dphi1:.3g}",
            stage=stage,
        )
    logger.info(
        "profile: p=%s lambda_bar=%g phi(0)=%.12g phi'(1)=%.12g delta=%.3g (%d shooting steps)",
        rp.p.tolist(), rp.lam_bar, a, prof.dphi1, delta, it,
    )
    return prof


def ode_residual(prof: RadialProfile, points: int = 2 * GRID_SIZE) -> float:
    """Max residual of the profile ODE on a fine grid (fourth-order differences)."""
    h = 1e-3
    r = np.linspace(0.05, 1.0 + prof.delta - 3 * h, points)
    d = lambda f: (-f(r + 2 * h) + 8 * f(r + h) - 8 * f(r - h) + f(r - 2 * h)) / (12 * h)  # noqa: E731
    res1 = d(prof.evaluate) - prof.derivative(r)
    res2 = d(prof.derivative) + (prof.n - 1) / r * prof.derivative(r) + prof.lam_bar * prof.rp.F_center(prof.evaluate(r))
    return float(max(np.abs(res1).max(), np.abs(res2).max()))


# -------------------------------------------------
# CORRECTOR
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class Corrector:
    W0: np.ndarray
    V: np.ndarray
    n: int
    delta: float
    grid: np.ndarray = field(repr=False)
    series: np.ndarray = field(repr=False)
    dense: object = field(repr=False)

    @cached_property
    def W(self) -> np.ndarray:
        return self.evaluate(self.grid)

    def evaluate(self, r) -> np.ndarray:
        """W_j(r), shape (n,) + r.shape."""
        n = self.n
        r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0 + self.delta)
        return _piecewise(
            r,
            lambda s: self.W0[:, None] + self.series[:, None] * s**2,
            lambda s: self.dense(s)[2 : 2 + n] + self.W0[:, None] * self.dense(s)[2 + 2 * n],
        )


def solve_corrector(rp: RescaledProblem, prof: RadialProfile) -> Corrector:
    """W = P + W(0) H with P the zero-start particular solution and H the homogeneous one."""
    stage = "radial.solve_corrector"
    n = rp.n
    lam = rp.lam_bar
    b = rp.b_center
    a = prof.phi0
    c = prof.ddphi0

    def rhs(r, y):
        phi, dphi = y[0], y[1]
        P, dP = y[2 : 2 + n], y[2 + n : 2 + 2 * n]
        H, dH = y[2 + 2 * n], y[3 + 2 * n]
        Fu = float(rp.dF_du_center(phi))
        dF = rp.dF_dx_center(phi)
        ddP = -(n + 1) / r * dP - lam * Fu * P - lam * dF - b * dphi / r
        ddH = -(n + 1) / r * dH - lam * Fu * H
        return np.concatenate([[dphi, -(n - 1) / r * dphi - lam * float(rp.F_center(phi))], dP, ddP, [dH, ddH]])

    try:
        q = -lam * rp.dF_dx_center(a) - b * c
        h2 = -lam * float(rp.dF_du_center(a)) / (2 * (n + 2))
    except ExpressionDomainError as exc:
        raise NoConvergence(exc.detail, stage=stage) from exc
    p2 = q / (2 * (n + 2))
    y0 = np.concatenate(
        [[a + 0.5 * c * R0**2, c * R0], p2 * R0**2, 2 * p2 * R0, [1.0 + h2 * R0**2, 2 * h2 * R0]]
    )
    r_end = 1.0 + prof.delta
    sol = integrate(rhs, y0, r_end, stage)
    at1 = sol.sol(1.0)
    H1 = at1[2 + 2 * n]
    if abs(H1) < 1e-10:
        raise NoConvergence(
            f"homogeneous corrector vanishes at r=1 (H(1)={H1:.3g}); lambda_bar hits an interior eigenvalue",
            stage=stage,
        )
    W0 = -at1[2 : 2 + n] / H1
    V = at1[2 + n : 2 + 2 * n] + W0 * at1[3 + 2 * n]
    series = p2 + W0 * h2
    corr = Corrector(W0=W0, V=V, n=n, delta=prof.delta, grid=prof.grid, series=series, dense=sol.sol)
    logger.info("corrector: V=%s", np.array2string(V, precision=10))
    return corr


# -------------------------------------------------
# LEADING-ORDER FIELD
# -------------------------------------------------
def leading_bracket(rp: RescaledProblem, prof: RadialProfile, corr: Corrector) -> np.ndarray:
    """kappa1*grad f0(p) - (phi'(1)/f1(p)) grad f1(p) + V_p."""
    spec = rp.base
    grad_f0 = spec.vector_at(spec.grad_f0, rp.p)
    grad_f1 = spec.vector_at(spec.grad_f1, rp.p)
    return prof.degree_one_ratio * grad_f0 - prof.dphi1 / rp.f1_center * grad_f1 + corr.V


def leading_field(spec: ProblemSpec, p, lam_bar: float) -> np.ndarray:
    rp = rescale(spec, p, 1.0, lam_bar)
    prof = solve_phi(rp)
    return leading_bracket(rp, prof, solve_corrector(rp, prof))

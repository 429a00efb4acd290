"""
Functions on the unit sphere S^{n-1} and operators diagonal in harmonic degree.

Basis: orthonormal real Fourier modes {1, cos l t, sin l t} for n = 2 and
real spherical harmonics (no Condon-Shortley phase) for n = 3. Quadrature is
uniform in angle for n = 2 and Gauss-Legendre x uniform for n = 3, exact for
products up to degree 2L and beyond.

Coefficient order is by degree; within a degree the order m runs from -l
to l (n = 3) or is (+l, -l) = (cos, sin) (n = 2).
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import gammaln, lpmv

from .errors import ExpressionDomainError, ModeNearZero, ModeSolveFailure
from .problem_core import RescaledProblem
from .radial import R0, RadialProfile, integrate

logger = logging.getLogger(__name__)

DEFAULT_DEGREE = {2: 32, 3: 12}
NEAR_ZERO = 1e-10


# -------------------------------------------------
# BASIS
# -------------------------------------------------
def _index(n: int, L: int) -> tuple[np.ndarray, np.ndarray]:
    degrees, orders = [0], [0]
    for l in range(1, L + 1):
        ms = (l, -l) if n == 2 else range(-l, l + 1)
        for m in ms:
            degrees.append(l)
            orders.append(m)
    return np.array(degrees), np.array(orders)


def _fourier(degrees, orders, theta, with_grad=True):
    """Values and d/dtheta of the n = 2 basis at angles theta (P,)."""
    t = theta[:, None]
    l = degrees[None, :]
    norm = np.where(degrees == 0, 1.0 / math.sqrt(2 * math.pi), 1.0 / math.sqrt(math.pi))
    cos_part = orders >= 0
    vals = norm * np.where(cos_part, np.cos(l * t), np.sin(l * t))
    if not with_grad:
        return vals, None
    grad = norm * l * np.where(cos_part, -np.sin(l * t), np.cos(l * t))
    return vals, grad[None]


def _spherical(degrees, orders, theta, phi, with_grad=True):
    """Values and frame components (d/dtheta, d/dphi / sin theta) of real Y_lm."""
    x = np.cos(theta)[:, None]
    s = np.sin(theta)[:, None]
    l = degrees[None, :]
    am = np.abs(orders)[None, :]
    sign = (-1.0) ** am
    P = sign * lpmv(am, l, x)
    norm = np.sqrt((2 * l + 1) / (4 * math.pi) * np.exp(gammaln(l - am + 1) - gammaln(l + am + 1)))
    norm = np.where(am > 0, math.sqrt(2.0) * norm, norm)
    ph = phi[:, None]
    trig = np.where(orders[None, :] >= 0, np.cos(am * ph), np.sin(am * ph))
    vals = norm * P * trig
    if not with_grad:
        return vals, None
    Pm1 = np.where(l - 1 >= am, sign * lpmv(am, np.maximum(l - 1, 0), x), 0.0)
    dP = (l * x * P - (l + am) * Pm1) / s
    dtrig = np.where(orders[None, :] >= 0, -am * np.sin(am * ph), am * np.cos(am * ph))
    grad = np.stack([norm * dP * trig, norm * P * dtrig / s])
    return vals, grad


def _angles(n: int, omega: np.ndarray):
    if n == 2:
        return (np.arctan2(omega[1], omega[0]),)
    theta = np.arccos(np.clip(omega[2], -1.0, 1.0))
    return theta, np.arctan2(omega[1], omega[0])


@dataclass(frozen=True, eq=False)
class SphereBasis:
    n: int
    L: int
    degrees: np.ndarray
    orders: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    grads: np.ndarray
    frame: np.ndarray

    @property
    def size(self) -> int:
        return len(self.degrees)

    @cached_property
    def analysis(self) -> np.ndarray:
        return self.values.T * self.weights

    @cached_property
    def degree_one(self) -> np.ndarray:
        return np.flatnonzero(self.degrees == 1)

    @cached_property
    def k_matrix(self) -> np.ndarray:
        """T[c, i] with Y_c = sum_i T[c, i] omega_i for the degree-1 basis functions."""
        rows = self.analysis[self.degree_one]
        gram = (self.nodes**2 * self.weights).sum(axis=1)
        return (rows @ self.nodes.T) / gram

    def basis_at(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        omega = omega / np.linalg.norm(omega, axis=0)
        if self.n == 2:
            vals, _ = _fourier(self.degrees, self.orders, *_angles(2, omega), with_grad=False)
        else:
            vals, _ = _spherical(self.degrees, self.orders, *_angles(3, omega), with_grad=False)
        return vals

    def analyze(self, values) -> np.ndarray:
        return self.analysis @ np.asarray(values, dtype=float)

    def synthesize(self, coeffs) -> np.ndarray:
        return self.values @ np.asarray(coeffs, dtype=float)


@lru_cache(maxsize=16)
def sphere_basis(n: int, L: int) -> SphereBasis:
    degrees, orders = _index(n, L)
    if n == 2:
        nq = max(3 * L + 2, 8)
        theta = 2 * math.pi * np.arange(nq) / nq
        nodes = np.stack([np.cos(theta), np.sin(theta)])
        weights = np.full(nq, 2 * math.pi / nq)
        vals, grads = _fourier(degrees, orders, theta)
        frame = np.stack([-np.sin(theta), np.cos(theta)])[None]
    elif n == 3:
        n_theta = (3 * L) // 2 + 2
        n_phi = 3 * L + 2
        x, w = np.polynomial.legendre.leggauss(n_theta)
        theta = np.repeat(np.arccos(x), n_phi)
        phi = np.tile(2 * math.pi * np.arange(n_phi) / n_phi, n_theta)
        weights = np.repeat(w, n_phi) * (2 * math.pi / n_phi)
        st, ct = np.sin(theta), np.cos(theta)
        nodes = np.stack([st * np.cos(phi), st * np.sin(phi), ct])
        vals, grads = _spherical(degrees, orders, theta, phi)
        e_theta = np.stack([ct * np.cos(phi), ct * np.sin(phi), -st])
        e_phi = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])
        frame = np.stack([e_theta, e_phi])
    else:
        raise ValueError(f"sphere basis needs n in (2, 3), got {n}")
    for arr in (degrees, orders, nodes, weights, vals, grads, frame):
        arr.setflags(write=False)
    logger.debug("sphere basis n=%d L=%d: %d modes, %d nodes", n, L, len(degrees), len(weights))
    return SphereBasis(n, L, degrees, orders, nodes, weights, vals, grads, frame)


# -------------------------------------------------
# SPHERE FUNCTIONS
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class SphereFunction:
    basis: SphereBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.size,):
            raise ValueError(f"expected {self.basis.size} coefficients, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def L(self) -> int:
        return self.basis.L

    # ---------- constructors ----------
    @classmethod
    def zeros(cls, basis: SphereBasis) -> "SphereFunction":
        return cls(basis, np.zeros(basis.size))

    @classmethod
    def from_values(cls, basis: SphereBasis, values) -> "SphereFunction":
        return cls(basis, basis.analyze(values))

    @classmethod
    def from_callable(cls, basis: SphereBasis, f) -> "SphereFunction":
        """f maps unit vectors (n, Nq) to values (Nq,)."""
        return cls.from_values(basis, f(basis.nodes))

    @classmethod
    def harmonic(cls, basis: SphereBasis, l: int, m: int, amplitude: float = 1.0) -> "SphereFunction":
        hit = np.flatnonzero((basis.degrees == l) & (basis.orders == m))
        if len(hit) != 1:
            raise ValueError(f"no basis function of degree {l} and order {m} for n={basis.n}, L={basis.L}")
        c = np.zeros(basis.size)
        c[hit[0]] = amplitude
        return cls(basis, c)

    @classmethod
    def from_triples(cls, basis: SphereBasis, triples) -> "SphereFunction":
        c = np.zeros(basis.size)
        for l, m, value in triples:
            c += cls.harmonic(basis, int(l), int(m), float(value)).coeffs
        return cls(basis, c)

    def as_triples(self) -> list[list]:
        return [[int(l), int(m), float(v)] for l, m, v in zip(self.basis.degrees, self.basis.orders, self.coeffs)]

    # ---------- evaluation ----------
    def values(self) -> np.ndarray:
        return self.basis.synthesize(self.coeffs)

    def at(self, omega) -> np.ndarray:
        return self.basis.basis_at(omega) @ self.coeffs

    def gradient(self) -> np.ndarray:
        """Tangential gradient in the orthonormal frame, shape (n-1, Nq)."""
        return self.basis.grads @ self.coeffs

    def max_abs(self) -> float:
        return float(np.abs(self.values()).max())

    def norm2(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def degree_part(self, l: int) -> "SphereFunction":
        return SphereFunction(self.basis, np.where(self.basis.degrees == l, self.coeffs, 0.0))

    def tail_ratio(self) -> float:
        """Coefficient energy above degree L/2 relative to the total."""
        total = self.norm2()
        if total == 0.0:
            return 0.0
        tail = self.coeffs[self.basis.degrees > self.L // 2]
        return float(np.linalg.norm(tail) / total)

    # ---------- arithmetic ----------
    def _same(self, other: "SphereFunction") -> None:
        if other.basis is not self.basis:
            raise ValueError("sphere functions live on different bases")

    def __add__(self, other: "SphereFunction") -> "SphereFunction":
        self._same(other)
        return SphereFunction(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "SphereFunction") -> "SphereFunction":
        self._same(other)
        return SphereFunction(self.basis, self.coeffs - other.coeffs)

    def __neg__(self) -> "SphereFunction":
        return SphereFunction(self.basis, -self.coeffs)

    def __mul__(self, scalar: float) -> "SphereFunction":
        return SphereFunction(self.basis, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "SphereFunction":
        return SphereFunction(self.basis, self.coeffs / float(scalar))


def project_K(f: SphereFunction) -> SphereFunction:
    return f.degree_part(1)


def project_perp(f: SphereFunction) -> SphereFunction:
    return SphereFunction(f.basis, np.where(f.basis.degrees == 1, 0.0, f.coeffs))


def extract_K_vector(f: SphereFunction) -> np.ndarray:
    """Y with project_K(f) = Y . omega."""
    return f.coeffs[f.basis.degree_one] @ f.basis.k_matrix


# -------------------------------------------------
# DIAGONAL OPERATORS
# -------------------------------------------------
def dtn_multiplier(n: int, l: int) -> float:
    """[(n/2 - 1)^2 + l(l + n - 2)]^{1/2} - n/2 + 1, which is l."""
    if l < 0:
        raise ValueError(f"degree must be >= 0, got {l}")
    return math.sqrt((n / 2 - 1) ** 2 + l * (l + n - 2)) - n / 2 + 1


@dataclass(frozen=True, eq=False)
class ModeFamily:
    """Regular solutions g_l(r) = r^l h_l(r) / h_l(1) of the T_p mode equations."""

    n: int
    L: int
    delta: float
    h1: np.ndarray
    dh1: np.ndarray
    h2: np.ndarray
    dense: object = field(repr=False)

    def ratio(self) -> np.ndarray:
        """g_l'(1)/g_l(1) for l = 0..L."""
        return np.arange(self.L + 1) + self.dh1 / self.h1

    def g(self, r) -> np.ndarray:
        """g_l(r) for every degree, shape (L+1,) + r.shape."""
        r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0 + self.delta)
        flat = r.ravel()
        L = self.L
        h = np.empty((L + 1, flat.size))
        low = flat < R0
        if low.any():
            h[:, low] = 1.0 + self.h2[:, None] * flat[low] ** 2
        if (~low).any():
            h[:, ~low] = self.dense(flat[~low])[2 : 3 + L]
        powers = flat[None, :] ** np.arange(L + 1)[:, None]
        return (powers * h / self.h1[:, None]).reshape((L + 1,) + r.shape)

    def lift(self, psi: SphereFunction, z) -> np.ndarray:
        """T_p-harmonic extension of psi evaluated at points z (n, ...)."""
        z = np.asarray(z, dtype=float)
        shape = z.shape[1:]
        z = z.reshape(self.n, -1)
        r = np.linalg.norm(z, axis=0)
        omega = np.where(r > 0, z / np.where(r > 0, r, 1.0), np.eye(self.n)[:, :1])
        g = self.g(r)[psi.basis.degrees]
        return np.einsum("pc,cp,c->p", psi.basis.basis_at(omega), g, psi.coeffs).reshape(shape)


def mode_family(rp: RescaledProblem, prof: RadialProfile, L: int) -> ModeFamily:
    """Integrate every degree at once: h'' + (2l+n-1)/r h' + lam_bar F_u h = 0, h(0) = 1."""
    stage = "modal.build_hp"
    n = rp.n
    lam = rp.lam_bar
    k = 2.0 * np.arange(L + 1) + n - 1
    a, c = prof.phi0, prof.ddphi0

    def rhs(r, y):
        phi, dphi = y[0], y[1]
        h, dh = y[2 : 3 + L], y[3 + L :]
        q = lam * float(rp.dF_du_center(phi))
        return np.concatenate([[dphi, -(n - 1) / r * dphi - lam * float(rp.F_center(phi))], dh, -k / r * dh - q * h])

    try:
        h2 = -lam * float(rp.dF_du_center(a)) / (2 * (k + 1))
    except ExpressionDomainError as exc:
        raise ModeSolveFailure(f"F_u undefined at the profile centre: {exc.detail}", stage=stage) from exc
    y0 = np.concatenate([[a + 0.5 * c * R0**2, c * R0], 1.0 + h2 * R0**2, 2 * h2 * R0])
    sol = integrate(rhs, y0, 1.0 + prof.delta, stage)
    at1 = sol.sol(1.0)
    h1, dh1 = at1[2 : 3 + L], at1[3 + L :]
    bad = np.flatnonzero(np.abs(h1) < 1e-10)
    if bad.size:
        raise ModeSolveFailure(
            f"mode equation singular at degrees {bad.tolist()} (lambda_bar={lam} outside the valid regime)",
            stage=stage,
        )
    return ModeFamily(n=n, L=L, delta=prof.delta, h1=h1, dh1=dh1, h2=h2, dense=sol.sol)


@dataclass(frozen=True, eq=False)
class ModalOperator:
    multipliers: np.ndarray
    n: int
    L: int
    kind: str
    p: tuple | None = None
    lam_bar: float | None = None
    modes: ModeFamily | None = field(default=None, repr=False)

    def multiplier(self, l: int) -> float:
        return float(self.multipliers[l])

    def apply(self, f: SphereFunction) -> SphereFunction:
        return SphereFunction(f.basis, f.coeffs * self.multipliers[f.basis.degrees])


def dtn_operator(n: int, L: int) -> ModalOperator:
    return ModalOperator(np.array([dtn_multiplier(n, l) for l in range(L + 1)]), n, L, kind="Lambda_0")


def build_hp(rp: RescaledProblem, prof: RadialProfile, L: int) -> ModalOperator:
    """multiplier(l) = -phi'(1) g_l'(1) + phi''(1)."""
    modes = mode_family(rp, prof, L)
    mult = -prof.dphi1 * modes.ratio() + prof.ddphi1
    kernel_tol = 1e-8 * math.sqrt(abs(prof.dphi1 * prof.ddphi1)) + 1e-12
    if L >= 1 and abs(mult[1]) > kernel_tol:
        logger.warning("H_p degree-1 multiplier %.3e exceeds kernel tolerance %.1e", mult[1], kernel_tol)
    logger.info("H_p: p=%s multipliers[0:4]=%s", rp.p.tolist(), np.array2string(mult[:4], precision=8))
    return ModalOperator(mult, rp.n, L, kind="H_p", p=tuple(rp.p.tolist()), lam_bar=rp.lam_bar, modes=modes)


def apply_inverse_hp(op: ModalOperator, f: SphereFunction) -> SphereFunction:
    """Solve H_p psi = f degree-wise on the complement of the degree-1 kernel."""
    mult = op.multipliers.copy()
    scale = np.abs(mult).max()
    active = np.arange(len(mult)) != 1
    small = np.flatnonzero(active & (np.abs(mult) < NEAR_ZERO * max(scale, 1e-300)))
    if small.size:
        raise ModeNearZero(
            f"multipliers at degrees {small.tolist()} are below {NEAR_ZERO:g} x max; H_p is not invertible",
            stage="modal.apply_inverse_hp",
        )
    mult[1] = 1.0
    coeffs = np.where(f.basis.degrees == 1, 0.0, f.coeffs / mult[f.basis.degrees])
    return SphereFunction(f.basis, coeffs)

"""
Problem data, the rescaling x = p + eps*z, and the affine reduction of a
constant SPD matrix A to the identity.

Arrays of points always carry the coordinate on the leading axis:
``x.shape == (n, ...)``.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import sympy as sp

from .errors import ConfigError, InadmissibleData, NotSPD
from .expr import Expression, STATE, parse, spatial_variables, state_variables, symbol

logger = logging.getLogger(__name__)


def _as_matrix(A, n: int) -> np.ndarray:
    if A is None:
        return np.eye(n)
    try:
        M = np.array(A, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(
            "A must be a constant numeric matrix; position-dependent A(x) is not supported "
            "(only constant SPD coefficients reduce to the Laplacian by an affine map)",
            stage="problem_core.ProblemSpec",
        )
    if M.shape != (n, n):
        raise ConfigError(f"A must be {n}x{n}, got shape {M.shape}", stage="problem_core.ProblemSpec")
    return M


def _check_spd(A: np.ndarray) -> None:
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise NotSPD(f"A is not symmetric: {A.tolist()}", stage="problem_core.ProblemSpec")
    lo = np.linalg.eigvalsh(A).min()
    if lo <= 0.0:
        raise NotSPD(f"A has min eigenvalue {lo:.3g} <= 0", stage="problem_core.ProblemSpec")


@dataclass(frozen=True)
class AffineChart:
    """x = anchor + S y with S = A^{1/2}."""

    anchor: np.ndarray
    S: np.ndarray
    S_inv: np.ndarray
    A: np.ndarray

    def to_original(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.anchor.reshape((-1,) + (1,) * (y.ndim - 1)) + np.tensordot(self.S, y, axes=1)

    def to_reduced(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.tensordot(self.S_inv, x - self.anchor.reshape((-1,) + (1,) * (x.ndim - 1)), axes=1)

    def conormal_scale(self, nu) -> np.ndarray:
        """|A^{1/2} nu| for normals nu of shape (n, ...)."""
        return np.linalg.norm(np.tensordot(self.S, np.asarray(nu, dtype=float), axes=1), axis=0)

    def as_dict(self) -> dict:
        return {"anchor": self.anchor.tolist(), "A": self.A.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "AffineChart":
        A = np.asarray(data["A"], dtype=float)
        S = matrix_sqrt(A)
        return cls(anchor=np.asarray(data["anchor"], dtype=float), S=S, S_inv=np.linalg.inv(S), A=A)

    @classmethod
    def identity(cls, n: int) -> "AffineChart":
        I = np.eye(n)
        return cls(anchor=np.zeros(n), S=I, S_inv=I, A=I)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    n: int
    F: Expression
    f0: Expression
    f1: Expression
    b: tuple[Expression, ...]
    A: np.ndarray
    chart: AffineChart | None = None

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ConfigError(f"dimension n must be 2 or 3, got {self.n}", stage="problem_core.ProblemSpec")
        if len(self.b) != self.n:
            raise ConfigError(f"b needs {self.n} components, got {len(self.b)}", stage="problem_core.ProblemSpec")
        A = _as_matrix(self.A, self.n)
        _check_spd(A)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @classmethod
    def from_strings(
        cls,
        n: int,
        F: str,
        f0: str,
        f1: str,
        b: Sequence[str] | None = None,
        A=None,
    ) -> "ProblemSpec":
        xs = spatial_variables(n)
        b = list(b) if b is not None else ["0"] * n
        return cls(
            n=n,
            F=parse(F, state_variables(n)),
            f0=parse(f0, xs),
            f1=parse(f1, xs),
            b=tuple(parse(bi, xs) for bi in b),
            A=_as_matrix(A, n),
        )

    # ---------- flags ----------
    @property
    def is_linear(self) -> bool:
        return not self.F.depends_on(STATE)

    @property
    def is_torsion(self) -> bool:
        return self.F.is_constant

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.A, np.eye(self.n)))

    @property
    def xs(self) -> tuple[str, ...]:
        return spatial_variables(self.n)

    # ---------- derived expressions ----------
    @cached_property
    def dF_du(self) -> Expression:
        return self.F.differentiate(STATE)

    @cached_property
    def grad_F(self) -> tuple[Expression, ...]:
        return self.F.gradient(self.xs)

    @cached_property
    def grad_f0(self) -> tuple[Expression, ...]:
        return self.f0.gradient(self.xs)

    @cached_property
    def grad_f1(self) -> tuple[Expression, ...]:
        return self.f1.gradient(self.xs)

    @cached_property
    def hess_f0(self) -> tuple[tuple[Expression, ...], ...]:
        return self.f0.hessian(self.xs)

    # ---------- point evaluation ----------
    def at(self, e: Expression, p) -> float:
        return float(e(*np.asarray(p, dtype=float)))

    def vector_at(self, es: Sequence[Expression], p) -> np.ndarray:
        return np.array([self.at(e, p) for e in es])

    def matrix_at(self, rows, p) -> np.ndarray:
        return np.array([[self.at(e, p) for e in row] for row in rows])

    # ---------- nondegeneracy fields ----------
    def hessian_f0(self, p) -> np.ndarray:
        return self.matrix_at(self.hess_f0, p)

    def torsion_potential(self, kappa: float) -> Expression:
        """G = f0 + kappa*log f1."""
        return Expression.from_tree(self.f0.tree + kappa * sp.log(self.f1.tree), self.xs)

    def linear_field(self) -> tuple[Expression, ...]:
        """n*grad f - f*b for x-only F."""
        f = Expression.from_tree(self.F.tree, self.xs)
        return tuple(
            Expression.from_tree(self.n * g.tree - f.tree * bi.tree, self.xs)
            for g, bi in zip(f.gradient(self.xs), self.b)
        )

    # ---------- provenance ----------
    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "F": self.F.text,
            "f0": self.f0.text,
            "f1": self.f1.text,
            "b": [bi.text for bi in self.b],
            "A": self.A.tolist(),
        }

    def spec_hash(self) -> str:
        payload = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def check_admissible(spec: ProblemSpec, p) -> None:
    """F(p, f0(p)) > 0 and f1(p) > 0."""
    p = np.asarray(p, dtype=float)
    u0 = spec.at(spec.f0, p)
    F0 = float(spec.F(*p, u0))
    f1 = spec.at(spec.f1, p)
    if F0 <= 0.0 or f1 <= 0.0:
        raise InadmissibleData(
            f"need F(p, f0(p)) > 0 and f1(p) > 0 at p={p.tolist()}, got {F0:.6g} and {f1:.6g}",
            stage="problem_core.check_admissible",
        )


# -------------------------------------------------
# RESCALING
# -------------------------------------------------
@dataclass(frozen=True, eq=False)
class RescaledProblem:
    """Data seen from z = (x - p)/eps with lambda = lam_bar/eps^2."""

    base: ProblemSpec
    p: np.ndarray
    eps: float
    lam_bar: float

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def lam(self) -> float:
        return self.lam_bar / self.eps**2

    def c_from(self, c_bar: float) -> float:
        return c_bar / self.eps

    def physical(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.p.reshape((-1,) + (1,) * (z.ndim - 1)) + self.eps * z

    def F_t(self, z, u) -> np.ndarray:
        return self.base.F(*self.physical(z), u)

    def dF_du_t(self, z, u) -> np.ndarray:
        return self.base.dF_du(*self.physical(z), u)

    def f0_t(self, z) -> np.ndarray:
        return self.base.f0(*self.physical(z))

    def f1_t(self, z) -> np.ndarray:
        return self.base.f1(*self.physical(z))

    def b_t(self, z) -> np.ndarray:
        x = self.physical(z)
        return np.stack([bi(*x) for bi in self.base.b])

    def f0_hat(self, B_values, omega) -> np.ndarray:
        """Boundary data at (1 + eps*B(omega)) omega."""
        return self.f0_t((1.0 + self.eps * np.asarray(B_values)) * np.asarray(omega))

    # ---------- centre values used by the radial problems ----------
    @cached_property
    def u_center(self) -> float:
        return self.base.at(self.base.f0, self.p)

    def F_center(self, phi) -> np.ndarray:
        return self.base.F(*self.p, self.u_center + np.asarray(phi))

    def dF_du_center(self, phi) -> np.ndarray:
        return self.base.dF_du(*self.p, self.u_center + np.asarray(phi))

    def dF_dx_center(self, phi) -> np.ndarray:
        u = self.u_center + np.asarray(phi)
        return np.stack([np.broadcast_to(g(*self.p, u), u.shape) for g in self.base.grad_F])

    @cached_property
    def b_center(self) -> np.ndarray:
        return self.base.vector_at(self.base.b, self.p)

    @cached_property
    def f1_center(self) -> float:
        return self.base.at(self.base.f1, self.p)


def rescale(spec: ProblemSpec, p, eps: float, lam_bar: float) -> RescaledProblem:
    if eps == 0:
        raise ConfigError("eps must be nonzero", stage="problem_core.rescale")
    if lam_bar < 0:
        raise ConfigError(f"lambda_bar must be positive, got {lam_bar}", stage="problem_core.rescale")
    p = np.array(p, dtype=float).reshape(spec.n)
    p.setflags(write=False)
    return RescaledProblem(base=spec, p=p, eps=float(eps), lam_bar=float(lam_bar))


# -------------------------------------------------
# AFFINE REDUCTION
# -------------------------------------------------
def matrix_sqrt(A: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(A)
    return (V * np.sqrt(w)) @ V.T


def affine_reduce(spec: ProblemSpec, anchor=None) -> ProblemSpec:
    """Compose the data with x = anchor + A^{1/2} y; the result has A = I.

    With a_ij d_ij in x becoming the Laplacian in y, the drift transforms as
    b_y(y) = A^{-1/2} b(x(y)).
    """
    n = spec.n
    anchor = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float).reshape(n)
    if spec.is_identity and not anchor.any():
        return spec
    S = matrix_sqrt(spec.A)
    S_inv = np.linalg.inv(S)
    ys = [symbol(v) for v in spec.xs]
    mapping = {
        f"x{i + 1}": float(anchor[i]) + sum(float(S[i, j]) * ys[j] for j in range(n)) for i in range(n)
    }
    F = spec.F.substitute(mapping)
    f0 = spec.f0.substitute(mapping)
    f1 = spec.f1.substitute(mapping)
    bx = [bi.substitute(mapping).tree for bi in spec.b]
    b = tuple(
        Expression.from_tree(sum(float(S_inv[i, j]) * bx[j] for j in range(n)), spec.xs) for i in range(n)
    )
    chart = AffineChart(anchor=anchor, S=S, S_inv=S_inv, A=spec.A.copy())
    logger.info("affine reduction: A=%s -> identity, anchor=%s", spec.A.tolist(), anchor.tolist())
    return ProblemSpec(n=n, F=F, f0=f0, f1=f1, b=b, A=np.eye(n), chart=chart)

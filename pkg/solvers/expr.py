"""
Analytic expressions for the problem data F(x, u), f0(x), f1(x) and b(x).

Grammar: infix arithmetic with ``+ - * /``, ``^`` (or ``**``) for powers,
parentheses, decimal numbers, the constants ``pi`` and ``E``, the
single-argument functions ``sin cos exp log sqrt tanh``, and the variables
``x1..xn`` and (for F only) ``u``.

Source text is checked token by token before sympy ever sees it, so an
unknown name can never reach the sympy namespace.
"""
import ast
import io
import logging
import tokenize
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from .errors import ExpressionDomainError, ExpressionSyntaxError, UnknownIdentifier

logger = logging.getLogger(__name__)

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "tanh": sp.tanh,
}
CONSTANTS = {"pi": sp.pi, "E": sp.E}
STATE = "u"
ALLOWED_OPS = {"+", "-", "*", "/", "^", "**", "(", ")"}
SKIPPED_TOKENS = {tokenize.NEWLINE, tokenize.NL, tokenize.ENDMARKER, tokenize.INDENT, tokenize.DEDENT}


def spatial_variables(n: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(n))


def state_variables(n: int) -> tuple[str, ...]:
    return spatial_variables(n) + (STATE,)


def symbol(name: str) -> sp.Symbol:
    return sp.Symbol(name, real=True)


@dataclass(frozen=True)
class Expression:
    """Immutable expression tree over a fixed, ordered variable list.

    ``variables`` is the declared signature, not just the free symbols:
    ``Expression`` for f0 in 2D always takes ``(x1, x2)`` even if it only
    uses ``x1``.
    """

    tree: sp.Expr
    variables: tuple[str, ...]
    _func: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        args = [symbol(v) for v in self.variables]
        object.__setattr__(self, "_func", sp.lambdify(args, self.tree, modules="numpy"))

    # ---------- construction ----------
    @classmethod
    def from_tree(cls, tree, variables: Sequence[str]) -> "Expression":
        return cls(sp.sympify(tree), tuple(variables))

    # ---------- printing ----------
    @property
    def text(self) -> str:
        return sp.sstr(self.tree).replace("**", "^")

    def __str__(self) -> str:
        return self.text

    # ---------- structure ----------
    def depends_on(self, name: str) -> bool:
        return symbol(name) in self.tree.free_symbols

    @property
    def is_constant(self) -> bool:
        return not self.tree.free_symbols

    # ---------- evaluation ----------
    def __call__(self, *args) -> np.ndarray:
        if len(args) != len(self.variables):
            raise TypeError(f"{self.text} takes {len(self.variables)} arguments {self.variables}, got {len(args)}")
        arrays = [np.asarray(a, dtype=float) for a in args]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise"):
                out = np.asarray(self._func(*arrays), dtype=float)
        except (FloatingPointError, ZeroDivisionError, OverflowError, ValueError) as exc:
            raise ExpressionDomainError(
                f"{self.text} undefined {self._locate(arrays, shape)}", stage="expr.evaluate"
            ) from exc
        if not np.all(np.isfinite(out)):
            raise ExpressionDomainError(
                f"{self.text} not finite {self._locate(arrays, shape)}", stage="expr.evaluate"
            )
        return np.broadcast_to(out, shape).copy()

    def _locate(self, arrays: list[np.ndarray], shape: tuple) -> str:
        # find the first offending point for the message
        with np.errstate(all="ignore"):
            try:
                raw = np.broadcast_to(np.asarray(self._func(*arrays), dtype=complex), shape)
            except Exception:
                raw = None
        index = ()
        if raw is not None and raw.ndim:
            bad = ~np.isfinite(raw) | (np.abs(raw.imag) > 0)
            if bad.any():
                index = np.unravel_index(int(np.argmax(bad)), shape)
        coords = ", ".join(
            f"{name}={float(np.broadcast_to(a, shape)[index]):.6g}" for name, a in zip(self.variables, arrays)
        )
        return f"at ({coords})"

    # ---------- calculus ----------
    def differentiate(self, var: str) -> "Expression":
        if var not in self.variables:
            raise ValueError(f"'{var}' is not a variable of {self.text} {self.variables}")
        return Expression(sp.diff(self.tree, symbol(var)), self.variables)

    def gradient(self, names: Sequence[str]) -> tuple["Expression", ...]:
        return tuple(self.differentiate(v) for v in names)

    def hessian(self, names: Sequence[str]) -> tuple[tuple["Expression", ...], ...]:
        return tuple(tuple(d.differentiate(w) for w in names) for d in self.gradient(names))

    def substitute(self, mapping: Mapping[str, object], variables: Sequence[str] | None = None) -> "Expression":
        subs = {}
        for name, value in mapping.items():
            subs[symbol(name)] = value.tree if isinstance(value, Expression) else sp.sympify(value)
        return Expression(self.tree.xreplace(subs), tuple(variables or self.variables))


# -------------------------------------------------
# PARSER
# -------------------------------------------------
def _tokens(source: str) -> list[tokenize.TokenInfo]:
    try:
        return [t for t in tokenize.generate_tokens(io.StringIO(source).readline) if t.type not in SKIPPED_TOKENS]
    except tokenize.TokenError:
        # the only multi-line construct the grammar allows is an open parenthesis
        raise ExpressionSyntaxError("unbalanced parentheses", len(source) + 1)
    except SyntaxError as exc:
        raise ExpressionSyntaxError(exc.msg or "invalid character", exc.offset or 1)


def _check_tokens(tokens: list[tokenize.TokenInfo], variables: Sequence[str]) -> None:
    for i, tok in enumerate(tokens):
        col = tok.start[1] + 1
        nxt = tokens[i + 1].string if i + 1 < len(tokens) else ""
        if tok.type == tokenize.NAME:
            if tok.string in FUNCTIONS:
                if nxt != "(":
                    raise ExpressionSyntaxError(f"function '{tok.string}' needs an argument list", col)
            elif tok.string in variables or tok.string in CONSTANTS:
                if nxt == "(":
                    raise ExpressionSyntaxError(f"'{tok.string}' is not a function", col)
            else:
                raise UnknownIdentifier(tok.string, col)
        elif tok.type == tokenize.NUMBER:
            if tok.string[-1] in "jJ":
                raise ExpressionSyntaxError("complex literals are not supported", col)
        elif tok.type == tokenize.OP:
            if tok.string not in ALLOWED_OPS:
                raise ExpressionSyntaxError(f"unexpected '{tok.string}'", col)
        else:
            raise ExpressionSyntaxError(f"unexpected '{tok.string}'", col)


def _check_syntax(source: str) -> str:
    """Return python-compatible text; raise with a position into ``source``."""
    code = source.replace("^", "**")
    # column in code -> column in source
    back = []
    for col, ch in enumerate(source, start=1):
        back.extend([col, col] if ch == "^" else [col])
    back.append(len(source) + 1)
    try:
        tree = ast.parse(code, mode="eval")
    except SyntaxError as exc:
        offset = min(max(exc.offset or 1, 1), len(back))
        raise ExpressionSyntaxError("invalid syntax", back[offset - 1])
    for node in ast.walk(tree):
        if isinstance(node, ast.Call) and (len(node.args) != 1 or node.keywords):
            raise ExpressionSyntaxError("functions take exactly one argument", back[node.col_offset])
    return code


def parse(source: str, variables: Sequence[str]) -> Expression:
    """Parse ``source`` into an :class:`Expression` over ``variables``."""
    stripped = source.strip()
    lead = len(source) - len(source.lstrip())
    if not stripped:
        raise ExpressionSyntaxError("empty expression", 1)
    try:
        _check_tokens(_tokens(stripped), variables)
        code = _check_syntax(stripped)
    except ExpressionSyntaxError as exc:
        raise ExpressionSyntaxError(exc.detail.rsplit(" at position", 1)[0], exc.position + lead) from None
    except UnknownIdentifier as exc:
        raise UnknownIdentifier(exc.name, exc.position + lead) from None
    namespace = {name: symbol(name) for name in variables}
    namespace.update(FUNCTIONS)
    namespace.update(CONSTANTS)
    tree = parse_expr(code, local_dict=namespace, transformations=standard_transformations)
    logger.debug("parsed %r -> %s", source, tree)
    return Expression(sp.sympify(tree), tuple(variables))


def differentiate(e: Expression, var: str) -> Expression:
    return e.differentiate(var)

"""Built-in symbol and equation registry plus a restricted expression
grammar, so every experiment is reproducible from plain text.

Expressions may use t, w (Brownian value), x or x1..x3, xi or xi1..xi3,
numbers, + - * / ** parentheses, and the functions sin, cos, exp, abs,
sqrt.  Anything else is rejected before sympy ever sees the string.
"""

from __future__ import annotations

import re

import sympy as sp

from .cauchy import EquationSpec
from .symbols import Symbol, symbol_from_expr, _T, _W, _X, _XI

__all__ = [
    "RegistryError",
    "SYMBOLS",
    "EQUATIONS",
    "make_symbol",
    "make_equation",
    "parse_symbol_expr",
]


class RegistryError(KeyError):
    """Unknown registry name or malformed expression."""


_TOKEN_RE = re.compile(
    r"\s*(?:\d+\.?\d*(?:[eE][+-]?\d+)?|sin|cos|exp|abs|sqrt|pi"
    r"|xi[123]?|x[123]?|t|w|\*\*|[-+*/()])\s*")


def _validate(text: str) -> None:
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise RegistryError(
                f"expression rejected at position {pos}: {text[pos:pos+12]!r}"
                " (allowed: numbers, t, w, x1..x3, xi1..xi3, + - * / **, "
                "sin, cos, exp, abs, sqrt, pi)")
        pos = m.end()


def parse_symbol_expr(text: str, dim: int, order: float | None = None,
                      name: str = "") -> Symbol:
    """Symbol from a restricted expression string."""
    _validate(text)
    loc = {"t": _T, "w": _W, "pi": sp.pi,
           "sin": sp.sin, "cos": sp.cos, "exp": sp.exp,
           "abs": sp.Abs, "sqrt": sp.sqrt,
           "x": _X[0], "xi": _XI[0]}
    for k in range(3):
        loc[f"x{k+1}"] = _X[k]
        loc[f"xi{k+1}"] = _XI[k]
    try:
        expr = sp.sympify(text, locals=loc)
    except (sp.SympifyError, SyntaxError, TypeError) as e:
        raise RegistryError(f"expression does not parse: {text!r} ({e})")
    used = expr.free_symbols - {_T, _W} - set(_X[:dim]) - set(_XI[:dim])
    if used:
        raise RegistryError(
            f"expression uses symbols {sorted(map(str, used))} outside "
            f"dimension {dim}")
    if order is None:
        order = _default_order(expr, dim)
    return symbol_from_expr(expr, dim, order=order, name=name)


def _default_order(expr, dim: int) -> float:
    deg = 0
    p = sp.Poly(expr, *_XI[:dim]) if expr.is_polynomial(*_XI[:dim]) else None
    if p is not None:
        deg = p.total_degree()
    return float(deg)


def _abs_xi2(dim: int):
    return sum(_XI[k] ** 2 for k in range(dim))


# name -> (order, description, expr builder over dim)
_SYMBOL_TABLE = {
    "identity": (0.0, "multiplication by 1",
                 lambda dim: sp.Integer(1)),
    "xi": (1.0, "first frequency coordinate (D along axis 1)",
           lambda dim: _XI[0]),
    "laplacian": (2.0, "principal symbol |xi|^2 of -Laplacian",
                  _abs_xi2),
    "bessel1": (1.0, "first-order Bessel multiplier sqrt(1+|xi|^2)",
                lambda dim: sp.sqrt(1 + _abs_xi2(dim))),
    "elliptic-1": (2.0, "elliptic symbol 1 + |xi|^2",
                   lambda dim: 1 + _abs_xi2(dim)),
    "sgn-smoothed": (0.0, "smoothed sign multiplier xi1/sqrt(1+|xi|^2)",
                     lambda dim: _XI[0] / sp.sqrt(1 + _abs_xi2(dim))),
    "mod-x": (0.0, "multiplication by 1 + sin(x1)/2",
              lambda dim: 1 + sp.sin(_X[0]) / 2),
    "mixed-0": (0.0, "x-dependent order-0 symbol cos(x1) |xi|^2/(1+|xi|^2)",
                lambda dim: sp.cos(_X[0]) * _abs_xi2(dim) / (1 + _abs_xi2(dim))),
    "drift-wave": (1.0, "transport symbol sin(x1) xi1",
                   lambda dim: sp.sin(_X[0]) * _XI[0]),
    "garding-stochastic": (
        2.0, "(2 + sin x1 + 0.1 sin W(t)) |xi|^2",
        lambda dim: (2 + sp.sin(_X[0]) + sp.sin(_W) / 10) * _abs_xi2(dim)),
    "parametrix-demo": (2.0, "(1 + sin^2 x1)(1 + |xi|^2)",
                        lambda dim: (1 + sp.sin(_X[0]) ** 2)
                        * (1 + _abs_xi2(dim))),
}

SYMBOLS = {k: v[1] for k, v in _SYMBOL_TABLE.items()}


def make_symbol(name: str, dim: int = 1, order: float | None = None) -> Symbol:
    """Instantiate a registry symbol, or parse an expression string."""
    if name in _SYMBOL_TABLE:
        o, _, build = _SYMBOL_TABLE[name]
        return symbol_from_expr(build(dim), dim,
                                order=o if order is None else order, name=name)
    try:
        return parse_symbol_expr(name, dim, order=order, name=name)
    except RegistryError:
        raise RegistryError(
            f"unknown symbol {name!r}; known: {sorted(_SYMBOL_TABLE)} or an "
            "expression over (t, w, x, xi)")


def _wave(dim: int) -> EquationSpec:
    # roots +-|xi|: lambda^2 = |xi|^2
    principal = {}
    for a in range(dim):
        alpha = [0] * dim
        alpha[a] = 2
        principal[(0, tuple(alpha))] = 1.0
    return EquationSpec(m=2, dim=dim, principal=principal, name="wave")


def _schrodinger(dim: int) -> EquationSpec:
    # roots +-i|xi|: lambda^2 = -|xi|^2
    principal = {}
    for a in range(dim):
        alpha = [0] * dim
        alpha[a] = 2
        principal[(0, tuple(alpha))] = -1.0
    return EquationSpec(m=2, dim=dim, principal=principal, name="schrodinger")


def _transport(dim: int) -> EquationSpec:
    alpha = (1,) + (0,) * (dim - 1)
    return EquationSpec(m=1, dim=dim, principal={(0, alpha): 1.0},
                        name="transport")


EQUATIONS = {
    "wave": "order-2 spec with real simple roots +-|xi|",
    "schrodinger": "order-2 spec with imaginary roots +-i|xi|",
    "transport": "order-1 spec with root xi1",
}

_EQUATION_TABLE = {"wave": _wave, "schrodinger": _schrodinger,
                   "transport": _transport}


def make_equation(name: str, dim: int = 1) -> EquationSpec:
    if name not in _EQUATION_TABLE:
        raise RegistryError(
            f"unknown equation {name!r}; known: {sorted(_EQUATION_TABLE)}")
    return _EQUATION_TABLE[name](dim)

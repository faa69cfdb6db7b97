"""Symbolic calculus: truncated asymptotic expansions for composition,
transpose, adjoint and amplitude reduction, asymptotic summation with dyadic
cutoffs, and the elliptic parametrix.

All expansions share the template sum over multi-indices alpha of
(1 / (alpha! i^{|alpha|})) times paired derivatives.  When both inputs carry
sympy expressions every term is exact; otherwise nested central differences
are used, which bounds the practical truncation depth at 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .symbols import (Amplitude, Symbol, _XI, _X, _multiindices, qstar,
                      symbol_from_expr)

__all__ = [
    "AsymptoticSeries",
    "EllipticityError",
    "compose_symbols",
    "transpose_symbol",
    "adjoint_symbol",
    "reduce_amplitude",
    "asymptotic_sum",
    "parametrix",
    "psi5_expr",
    "series_apply",
]


class EllipticityError(ValueError):
    """Parametrix requested for a symbol that fails the ellipticity check."""


@dataclass
class AsymptoticSeries:
    """Ordered finite list of (order, Symbol) with strictly decreasing orders."""

    terms: list  # [(order_j, Symbol)]

    def __post_init__(self):
        orders = [o for o, _ in self.terms]
        if any(b >= a for a, b in zip(orders, orders[1:])):
            raise ValueError(f"series orders must strictly decrease, got {orders}")

    @property
    def leading_order(self) -> float:
        return self.terms[0][0] if self.terms else -math.inf

    def truncate(self, n_terms: int) -> "AsymptoticSeries":
        return AsymptoticSeries(self.terms[:n_terms])

    def symbol_sum(self) -> Symbol:
        """Plain finite sum of the terms (no cutoffs); exact for truncated
        expansions of differential operators."""
        if not self.terms:
            return symbol_from_expr(0, 1, order=0)
        total = self.terms[0][1]
        for _, s in self.terms[1:]:
            total = total + s
        total.order = self.leading_order
        return total

    def pretty(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for o, s in self.terms:
            if s.expr is not None and not s.expr.has(sp.Piecewise):
                body = str(sp.expand(s.expr))
            else:
                body = f"<order {o:g} term>"
            parts.append(f"[{o:g}] {body}")
        return "  +  ".join(parts)


def _factorial_weight(alpha) -> complex:
    fact = 1
    for k in alpha:
        fact *= math.factorial(k)
    return 1.0 / (fact * (1j ** sum(alpha)))


def _collect(term_symbols, orders, lead_order, integrability):
    """Assemble a series from per-|alpha| term symbols, dropping zeros."""
    out = []
    for o, s in zip(orders, term_symbols):
        if s is None:
            continue
        if s.expr is not None and not s.expr.has(sp.Piecewise) \
                and sp.expand(s.expr) == 0:
            continue
        s.order = o
        s.integrability = integrability
        out.append((o, s))
    return AsymptoticSeries(out)


def compose_symbols(b: Symbol, a: Symbol, n_terms: int) -> AsymptoticSeries:
    """Expansion of the composition B then A applied first:

        sigma_{B.A} ~ sum_alpha (1/alpha! i^{|alpha|})
                      d^alpha_xi sigma_B  d^alpha_x sigma_A .

    Exact (all higher terms vanish) when b is polynomial in xi of degree
    <= n_terms.
    """
    if b.dim != a.dim:
        raise ValueError("dimension mismatch")
    dim = b.dim
    lead = b.order + a.order
    integ = qstar(b.integrability, a.integrability)
    terms, orders = [], []
    for j in range(n_terms + 1):
        acc = None
        for alpha in _multiindices(j, dim):
            if sum(alpha) != j:
                continue
            if a.x_independent and j > 0:
                continue
            db = b.derivative(alpha, (0,) * dim)
            da = a.derivative((0,) * dim, alpha)
            piece = _factorial_weight(alpha) * (db * da)
            acc = piece if acc is None else acc + piece
        terms.append(acc)
        orders.append(lead - j)
    return _collect(terms, orders, lead, integ)


def _reflect_xi(a: Symbol) -> Symbol:
    if a.expr is not None:
        e = a.expr.subs({_XI[k]: -_XI[k] for k in range(a.dim)},
                        simultaneous=True)
        out = symbol_from_expr(e, a.dim, order=a.order,
                               integrability=a.integrability)
    else:
        fn = a.fn
        out = Symbol(a.order, lambda t, w, x, xi: fn(t, w, x, -np.asarray(xi)),
                     dim=a.dim, integrability=a.integrability)
    out.x_independent = a.x_independent
    out.xi_polynomial_degree = a.xi_polynomial_degree
    return out


def _mixed_expansion(a: Symbol, n_terms: int) -> AsymptoticSeries:
    """sum_alpha (1/alpha! i^{|alpha|}) d^alpha_xi d^alpha_x a."""
    dim = a.dim
    terms, orders = [], []
    for j in range(n_terms + 1):
        acc = None
        for alpha in _multiindices(j, dim):
            if sum(alpha) != j:
                continue
            if a.x_independent and j > 0:
                continue
            piece = _factorial_weight(alpha) * a.derivative(alpha, alpha)
            acc = piece if acc is None else acc + piece
        terms.append(acc)
        orders.append(a.order - j)
    return _collect(terms, orders, a.order, a.integrability)


def transpose_symbol(a: Symbol, n_terms: int) -> AsymptoticSeries:
    """sigma_{tA} ~ sum (1/alpha! i^{|alpha|}) d^alpha_xi d^alpha_x a(x, -xi)."""
    return _mixed_expansion(_reflect_xi(a), n_terms)


def adjoint_symbol(a: Symbol, n_terms: int) -> AsymptoticSeries:
    """sigma_{A*} ~ sum (1/alpha! i^{|alpha|}) d^alpha_xi d^alpha_x conj(a)."""
    return _mixed_expansion(a.conjugate(), n_terms)


def reduce_amplitude(a: Amplitude, n_terms: int) -> AsymptoticSeries:
    """Left symbol of an amplitude:

        sigma_A ~ sum (1/alpha! i^{|alpha|}) d^alpha_xi d^alpha_y a |_{y=x}.
    """
    dim = a.dim
    terms, orders = [], []
    for j in range(n_terms + 1):
        acc = None
        for alpha in _multiindices(j, dim):
            if sum(alpha) != j:
                continue
            if a.y_independent and j > 0:
                continue
            piece = _factorial_weight(alpha) * a.derivative(alpha, alpha).diagonal_symbol()
            acc = piece if acc is None else acc + piece
        terms.append(acc)
        orders.append(a.order - j)
    return _collect(terms, orders, a.order, a.integrability)


# ---------------------------------------------------------------------------
# asymptotic summation


def psi5_expr(dim: int, scale: float = 1.0):
    """Smooth radial step in xi: 0 for |xi| <= scale/2, 1 for |xi| >= scale."""
    r = sp.sqrt(sum(_XI[k] ** 2 for k in range(dim))) / scale
    u = 2 * r - 1
    f = sp.exp(-1 / u)
    g = sp.exp(-1 / (1 - u))
    return sp.Piecewise((0, r <= sp.Rational(1, 2)), (1, r >= 1),
                        (f / (f + g), True))


def asymptotic_sum(series: AsymptoticSeries) -> Symbol:
    """Single symbol a = sum_j psi5(eps_j xi) a_j with eps_j = 2^{-j}.

    The cutoffs leave each term untouched for |xi| >= 2^j and remove it near
    the origin, so a - (leading terms) stays in the lower-order class.
    """
    if not series.terms:
        return symbol_from_expr(0, 1, order=0)
    dim = series.terms[0][1].dim
    integ = min(s.integrability for _, s in series.terms)
    if all(s.expr is not None for _, s in series.terms):
        e = sp.S.Zero
        for j, (_, s) in enumerate(series.terms):
            e = e + psi5_expr(dim, scale=float(2**j)) * s.expr
        return symbol_from_expr(e, dim, order=series.leading_order,
                                integrability=integ)
    from .quantize import smooth_chi

    pieces = [(2.0 ** (-j), s) for j, (_, s) in enumerate(series.terms)]

    def fn(t, w, x, xi):
        xi = np.asarray(xi, dtype=float)
        r = np.sqrt(np.sum(xi**2, axis=-1))
        out = None
        for eps, s in pieces:
            cut = 1.0 - smooth_chi(2.0 * eps * r)  # 0 for |xi|<=1/(2 eps), 1 above
            v = cut * s(t, w, x, xi)
            out = v if out is None else out + v
        return out

    return Symbol(series.leading_order, fn, dim=dim, integrability=integ)


# ---------------------------------------------------------------------------
# parametrix


def parametrix(a: Symbol, n_terms: int, grid=None, ensemble=None,
               side: str = "left", ellipticity=None) -> AsymptoticSeries:
    """Truncated parametrix series for an elliptic symbol.

    q0 = highpass / a above the low-frequency cutoff at radius max(R_K, 1);
    each q_{j+1} cancels the next order of the composition expansion, so the
    residual of the n-term construction has order -(n+1) on the high band.
    """
    from .symbols import ellipticity_check

    if ellipticity is None:
        if grid is None:
            raise ValueError("parametrix needs a grid (or a precomputed "
                             "ellipticity result)")
        ellipticity = ellipticity_check(a, grid, ensemble)
    if not ellipticity.elliptic:
        raise EllipticityError("symbol failed the ellipticity check")
    R0 = max(ellipticity.R_K, 1.0)
    dim = a.dim
    if a.expr is None:
        raise ValueError("parametrix construction needs a closed-form symbol")
    # recursion on the raw 1/a terms; the low-frequency cutoff is attached
    # once at the end (its support lies below the elliptic band, so the
    # cancellation above |xi| = 2 R0 is untouched)
    raw = [sp.cancel(1 / a.expr) if not a.expr.has(sp.sin, sp.cos, sp.exp)
           else 1 / a.expr]
    for step in range(1, n_terms + 1):
        acc = sp.S.Zero
        for i, qi in enumerate(raw):
            j = step - i  # |alpha| so that i + |alpha| == step
            for alpha in _multiindices(j, dim):
                if sum(alpha) != j:
                    continue
                wgt = _factorial_weight(alpha)
                if side == "left":
                    dq, da = qi, a.expr
                    for ax, k in enumerate(alpha):
                        dq = sp.diff(dq, _XI[ax], k)
                        da = sp.diff(da, _X[ax], k)
                else:
                    dq, da = qi, a.expr
                    for ax, k in enumerate(alpha):
                        dq = sp.diff(dq, _X[ax], k)
                        da = sp.diff(da, _XI[ax], k)
                acc = acc + wgt * dq * da
        nxt = sp.together(-(1 / a.expr) * acc)
        raw.append(nxt)
    highpass = psi5_expr(dim, scale=2.0 * R0)  # 1 for |xi| >= 2 R0, 0 below R0
    terms = []
    for j, q in enumerate(raw):
        if q == 0:
            continue
        terms.append((-a.order - j,
                      symbol_from_expr(highpass * q, dim, order=-a.order - j,
                                       integrability=math.inf)))
    return AsymptoticSeries(terms)


def series_apply(series: AsymptoticSeries, u, t: float = 0.0, w=0.0):
    """Apply the quantization of the finite series to one field."""
    from .quantize import apply_symbol_op

    out = None
    for _, s in series.terms:
        v = apply_symbol_op(s, u, t, w)
        out = v if out is None else type(v)(v.grid, out.values + v.values,
                                            v.representation)
    if out is None:
        from .grid import SpectralField
        out = SpectralField(u.grid, np.zeros(u.grid.shape), u.representation)
    return out

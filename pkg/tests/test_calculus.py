"""Symbol calculus: composition, transpose/adjoint expansions, asymptotic
summation, parametrix."""

import math

import numpy as np
import pytest
import sympy as sp

from spdo.calculus import (
    EllipticityError,
    adjoint_symbol,
    asymptotic_sum,
    compose_symbols,
    parametrix,
    reduce_amplitude,
    series_apply,
    transpose_symbol,
)
from spdo.grid import Grid, l2_norm, random_band_limited
from spdo.quantize import apply_symbol_op, apply_transpose, apply_adjoint
from spdo.symbols import (
    amplitude_from_expr,
    check_symbol_estimate,
    symbol_from_expr,
    _X,
    _XI,
    _Y,
)

G = Grid(1, 64)


def _eval(s, x, xi, t=0.0, w=0.0):
    return complex(np.asarray(s(t, w, np.array([[x]]), np.array([[xi]]))).ravel()[0])


# -- composition -------------------------------------------------------------

def test_compose_xi_with_x():
    # D (x u) = x D u + u / i: left symbol x xi - i
    b = symbol_from_expr(_XI[0], 1, order=1)
    a = symbol_from_expr(_X[0], 1, order=0)
    ser = compose_symbols(b, a, 2)
    s = ser.symbol_sum()
    for x, xi in [(0.3, 2.0), (1.5, -4.0), (2.0, 7.0)]:
        assert abs(_eval(s, x, xi) - (x * xi - 1j)) < 1e-12


def test_compose_multipliers_multiply():
    b = symbol_from_expr(_XI[0] ** 2, 1, order=2)
    a = symbol_from_expr(_XI[0] ** 2, 1, order=2)
    ser = compose_symbols(b, a, 3)
    # all alpha >= 1 terms vanish for x-independent a
    orders = [o for o, s in ser.terms]
    assert orders[0] == 4
    s = ser.symbol_sum()
    assert abs(_eval(s, 0.0, 3.0) - 81.0) < 1e-12
    for o, term in ser.terms[1:]:
        assert abs(_eval(term, 0.5, 3.0)) < 1e-12


def test_compose_against_operator_composition():
    b = symbol_from_expr(_XI[0], 1, order=1)
    a = symbol_from_expr(sp.sin(_X[0]) * _XI[0], 1, order=1)
    ser = compose_symbols(b, a, 2)
    s = ser.symbol_sum()
    # closed form: sin(x) xi^2 - i cos(x) xi
    for x, xi in [(0.2, 3.0), (1.0, -5.0)]:
        expect = math.sin(x) * xi**2 - 1j * math.cos(x) * xi
        assert abs(_eval(s, x, xi) - expect) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = random_band_limited(G, rng)
        direct = apply_symbol_op(b, apply_symbol_op(a, u))
        viaser = apply_symbol_op(s, u)
        assert (np.abs(direct.values - viaser.values).max()
                <= 1e-9 * max(1.0, np.abs(direct.values).max()))


def test_compose_order_bookkeeping():
    b = symbol_from_expr(sp.sin(_X[0]) * _XI[0] ** 2, 1, order=2)
    a = symbol_from_expr(sp.cos(_X[0]) * _XI[0], 1, order=1)
    ser = compose_symbols(b, a, 3)
    orders = [o for o, _ in ser.terms]
    assert orders == sorted(orders, reverse=True)
    assert orders[0] == 3
    assert ser.leading_order == 3


# -- transpose / adjoint -----------------------------------------------------

def test_transpose_oracles():
    a = symbol_from_expr(_XI[0], 1, order=1)
    s = transpose_symbol(a, 2).symbol_sum()
    assert abs(_eval(s, 0.7, 3.0) + 3.0) < 1e-12

    c = symbol_from_expr(2 + sp.sin(_X[0]), 1, order=0)
    s = transpose_symbol(c, 2).symbol_sum()
    assert abs(_eval(s, 0.7, 3.0) - (2 + math.sin(0.7))) < 1e-12


def test_transpose_sin_x_xi_matches_quantized_transpose():
    a = symbol_from_expr(sp.sin(_X[0]) * _XI[0], 1, order=1)
    s = transpose_symbol(a, 2).symbol_sum()
    rng = np.random.default_rng(1)
    for _ in range(5):
        u = random_band_limited(G, rng)
        got = apply_symbol_op(s, u)
        ref = apply_transpose(a, u)
        assert (np.abs(got.values - ref.values).max()
                <= 1e-9 * max(1.0, np.abs(ref.values).max()))


def test_adjoint_oracles():
    a = symbol_from_expr(2 * _XI[0] ** 2, 1, order=2)  # real, x-independent
    s = adjoint_symbol(a, 2).symbol_sum()
    assert abs(_eval(s, 0.4, 3.0) - 18.0) < 1e-12

    c = symbol_from_expr(sp.I * sp.cos(_X[0]), 1, order=0)
    s = adjoint_symbol(c, 2).symbol_sum()
    assert abs(_eval(s, 0.4, 3.0) + 1j * math.cos(0.4)) < 1e-12


def test_adjoint_sin_x_xi_matches_quantized_adjoint():
    a = symbol_from_expr(sp.sin(_X[0]) * _XI[0], 1, order=1)
    s = adjoint_symbol(a, 2).symbol_sum()
    rng = np.random.default_rng(2)
    for _ in range(5):
        u = random_band_limited(G, rng)
        got = apply_symbol_op(s, u)
        ref = apply_adjoint(a, u)
        assert (np.abs(got.values - ref.values).max()
                <= 1e-9 * max(1.0, np.abs(ref.values).max()))


# -- amplitude reduction -----------------------------------------------------

def test_reduce_amplitude_y_independent():
    amp = amplitude_from_expr(sp.sin(_X[0]) * _XI[0], 1, order=1)
    s = reduce_amplitude(amp, 2).symbol_sum()
    assert abs(_eval(s, 0.9, 4.0) - math.sin(0.9) * 4.0) < 1e-10


def test_reduce_amplitude_y_xi():
    amp = amplitude_from_expr(_Y[0] * _XI[0], 1, order=1)
    s = reduce_amplitude(amp, 2).symbol_sum()
    # left symbol of D (x .) is x xi - i
    assert abs(_eval(s, 0.9, 4.0) - (0.9 * 4.0 - 1j)) < 1e-10


# -- asymptotic summation ----------------------------------------------------

def test_asymptotic_sum_two_terms():
    ser = compose_symbols(symbol_from_expr(_XI[0] + 1, 1, order=1),
                          symbol_from_expr(sp.Integer(1), 1, order=0), 1)
    s = asymptotic_sum(ser)
    # beyond every cutoff the sum equals xi + 1
    assert abs(_eval(s, 0.0, 5.0) - 6.0) < 1e-10
    rep = check_symbol_estimate(s, 1, 0, G)
    assert rep.passed


def test_asymptotic_sum_residual_order():
    lead = symbol_from_expr(_XI[0], 1, order=1)
    tail = symbol_from_expr(sp.Integer(1), 1, order=0)
    from spdo.calculus import AsymptoticSeries
    ser = AsymptoticSeries([(1.0, lead), (0.0, tail)])
    s = asymptotic_sum(ser)
    resid = s - lead
    resid = type(resid)(0.0, resid.fn, expr=resid.expr, dim=1)
    rep = check_symbol_estimate(resid, 1, 0, G)
    assert rep.passed  # the residual is genuinely order 0


def test_asymptotic_sum_empty():
    from spdo.calculus import AsymptoticSeries
    s = asymptotic_sum(AsymptoticSeries([]))
    assert abs(_eval(s, 0.1, 3.0)) == 0.0


# -- parametrix --------------------------------------------------------------

def test_parametrix_exact_multiplier():
    a = symbol_from_expr(1 + _XI[0] ** 2, 1, order=2)
    ser = parametrix(a, 1, grid=G)
    rng = np.random.default_rng(3)
    # above the cutoff band Q A u = u: test on high modes
    from spdo.grid import plane_wave
    for k in (8, 12, 16):
        u = plane_wave(G, k)
        Au = apply_symbol_op(a, u)
        QAu = series_apply(ser, Au)
        assert np.abs(QAu.values - u.values).max() < 1e-9


def test_parametrix_residual_decays_in_frequency():
    a = symbol_from_expr((1 + sp.sin(_X[0]) ** 2) * (1 + _XI[0] ** 2), 1, order=2)
    g = Grid(1, 128)
    ser = parametrix(a, 2, grid=g)
    from spdo.grid import plane_wave
    errs = []
    ks = [8, 16, 32]
    for k in ks:
        u = plane_wave(g, k)
        Au = apply_symbol_op(a, u)
        QAu = series_apply(ser, Au)
        errs.append(np.abs(QAu.values - u.values).max())
    slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
    assert slope < -2.0  # 2-term parametrix: residual order -(2+1)


def test_parametrix_rejects_non_elliptic():
    a = symbol_from_expr(_XI[0], 2, order=1)
    with pytest.raises(EllipticityError):
        parametrix(a, 1, grid=Grid(2, 32))


def test_series_pretty_prints():
    b = symbol_from_expr(_XI[0], 1, order=1)
    a = symbol_from_expr(_X[0], 1, order=0)
    txt = compose_symbols(b, a, 1).pretty()
    assert isinstance(txt, str) and len(txt) > 0

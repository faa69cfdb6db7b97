"""Companion reduction, root hypotheses, diagonalization, integration, and
the Carleman machinery."""

import math

import numpy as np
import pytest
import sympy as sp

from spdo.cauchy import (
    CompanionSymbol,
    DiagonalizationError,
    EquationSpec,
    StabilityError,
    WindowError,
    build_companion_symbol,
    carleman_report,
    carleman_report_jordan,
    characteristic_roots,
    check_hypotheses,
    diagonalize_symbol,
    holmgren_transform,
    integrate_spde_system,
    pinned_semimartingale,
    smooth_time_cutoff,
    sphere_directions,
    uniqueness_experiment,
)
from spdo.grid import Grid, TimeGrid
from spdo.quantize import SampledField
from spdo.registry import make_equation
from spdo.stochastic import sample_brownian
from spdo.symbols import symbol_from_expr, _XI

G = Grid(1, 32)


# -- companion symbol --------------------------------------------------------

def test_companion_m1_degenerate():
    spec = EquationSpec(m=1, dim=1, principal={(0, (1,)): 1.0})
    cs = build_companion_symbol(spec)
    sig = cs(0.0, 0.0, np.zeros((1, 1)), np.array([[3.0]]))[0]
    assert sig.shape == (1, 1)
    assert abs(sig[0, 0] - 3.0) < 1e-12


def test_companion_wave_matrix():
    spec = make_equation("wave", 1)
    cs = build_companion_symbol(spec)
    xi = np.array([[2.0]])
    sig = cs(0.0, 0.0, np.zeros((1, 1)), xi)[0]
    expect = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert np.abs(sig - expect).max() < 1e-12


def test_companion_structure_m3_random_points():
    rng = np.random.default_rng(0)
    spec = EquationSpec(m=3, dim=1, principal={
        (2, (1,)): 1.3, (1, (2,)): -0.7, (0, (3,)): 0.4})
    cs = build_companion_symbol(spec)
    for _ in range(100):
        xi = rng.uniform(0.5, 8.0) * rng.choice([-1.0, 1.0])
        sig = cs(0.0, 0.0, np.zeros((1, 1)), np.array([[xi]]))[0]
        mag = abs(xi)
        # superdiagonal |xi|, bottom row a_k |xi|^{k+1-m}
        assert abs(sig[0, 1] - mag) < 1e-12 and abs(sig[1, 2] - mag) < 1e-12
        assert abs(sig[1, 0]) < 1e-12 and abs(sig[0, 2]) < 1e-12
        assert abs(sig[2, 0] - 0.4 * xi**3 / mag**2) < 1e-10
        assert abs(sig[2, 1] - (-0.7) * xi**2 / mag) < 1e-10
        assert abs(sig[2, 2] - 1.3 * xi) < 1e-10


def test_companion_origin_patched():
    cs = build_companion_symbol(make_equation("wave", 1))
    sig = cs(0.0, 0.0, np.zeros((1, 1)), np.zeros((1, 1)))[0]
    assert np.abs(sig).max() == 0.0


def test_invalid_principal_index():
    with pytest.raises(ValueError):
        EquationSpec(m=2, dim=1, principal={(0, (1,)): 1.0})  # |alpha| != m-k


# -- characteristic roots ----------------------------------------------------

def test_wave_roots():
    rf = characteristic_roots(make_equation("wave", 1), G)
    for s, lams in enumerate(rf.roots):
        got = np.sort(lams.real)
        assert np.abs(np.sort(lams.imag)).max() < 1e-10
        assert np.abs(got - np.array([-1.0, 1.0])).max() < 1e-10


def test_schrodinger_roots():
    rf = characteristic_roots(make_equation("schrodinger", 1), G)
    for lams in rf.roots:
        assert np.abs(np.sort(lams.imag) - np.array([-1.0, 1.0])).max() < 1e-10
        assert np.abs(lams.real).max() < 1e-10


def test_roots_residual_invariant():
    spec = EquationSpec(m=3, dim=1, principal={
        (2, (1,)): 0.9, (1, (2,)): 1.1, (0, (3,)): -0.5})
    rf = characteristic_roots(spec, G)
    assert rf.residuals.max() <= 1e-9 * (1.0 + rf.coeff_scale)


def test_random_cubic_against_independent_solver():
    # cross-check np.roots-based continuation against numpy's polynomial
    # companion implementation on the raw coefficient set
    spec = EquationSpec(m=3, dim=1, principal={
        (2, (1,)): 1.7, (1, (2,)): -0.3, (0, (3,)): 0.8})
    rf = characteristic_roots(spec, G)
    for s, lams in enumerate(rf.roots):
        t, w, x, d = rf.samples[s]
        xi = d[0]
        # monic polynomial lambda^3 - a2 lambda^2 - a1 lambda - a0
        coeffs = [-0.8 * xi**3, -(-0.3) * xi**2, -1.7 * xi, 1.0]
        ref = np.polynomial.polynomial.polyroots(coeffs)
        # distance matching: lexicographic complex sort is unstable for
        # conjugate pairs with equal real parts
        for rr in ref:
            assert np.abs(lams - rr).min() < 1e-9
        for ll in lams:
            assert np.abs(ref - ll).min() < 1e-9


def test_companion_consistency_eigenvalues_equal_roots():
    spec = EquationSpec(m=3, dim=1, principal={
        (2, (1,)): 0.4, (1, (2,)): 1.2, (0, (3,)): -0.6})
    cs = build_companion_symbol(spec)
    rf = characteristic_roots(spec, G)
    for s, lams in enumerate(rf.roots):
        t, w, x, d = rf.samples[s]
        sig = cs(t, w, np.asarray(x, float)[None, :],
                 np.asarray(d, float)[None, :])[0]
        eig = np.sort_complex(np.linalg.eigvals(sig))
        assert np.abs(eig - np.sort_complex(lams)).max() < 1e-9


# -- hypotheses --------------------------------------------------------------

def test_hypotheses_wave():
    rep = check_hypotheses(characteristic_roots(make_equation("wave", 1), G))
    assert rep.h1 and rep.h1p and rep.h3
    assert rep.h2 and math.isinf(rep.h2_eps)  # vacuous: no complex roots


def test_hypotheses_schrodinger():
    rep = check_hypotheses(characteristic_roots(
        make_equation("schrodinger", 1), G))
    assert rep.h1p and rep.h2
    assert abs(rep.h2_eps - 1.0) < 1e-9


def test_hypotheses_double_complex_roots():
    # (lambda^2 + |xi|^2)^2: complex roots of multiplicity two
    spec = EquationSpec(m=4, dim=1, principal={
        (2, (2,)): -2.0, (0, (4,)): -1.0})
    rep = check_hypotheses(characteristic_roots(spec, G))
    assert rep.h1  # complex multiplicity 2 is allowed
    assert not rep.h1p
    assert rep.h4


def test_hypothesis_report_serializes():
    rep = check_hypotheses(characteristic_roots(make_equation("wave", 1), G))
    d = rep.to_dict()
    assert d["H1"] is True and "H2_eps" in d


# -- diagonalization ---------------------------------------------------------

def test_diagonalize_wave():
    cs = build_companion_symbol(make_equation("wave", 1))
    diag = diagonalize_symbol(cs)
    assert diag.max_residual <= 1e-10
    for s in range(len(diag.directions)):
        lams = np.sort(np.diag(diag.j[s]).real)
        assert np.abs(lams - np.array([-1.0, 1.0])).max() < 1e-10


def test_diagonalize_m1_identity():
    cs = build_companion_symbol(
        EquationSpec(m=1, dim=1, principal={(0, (1,)): 1.0}))
    diag = diagonalize_symbol(cs)
    for s in range(len(diag.directions)):
        assert np.abs(diag.r[s] - np.eye(1)).max() < 1e-12


def test_diagonalize_degree_zero_extension():
    cs = build_companion_symbol(make_equation("wave", 1))
    diag = diagonalize_symbol(cs)
    d = diag.directions[0]
    r1 = diag.r_at(d)
    r2 = diag.r_at(7.5 * d)  # r* extends degree-0 homogeneously
    assert np.abs(r1 - r2).max() < 1e-12
    j1 = diag.j_at(d)
    j2 = diag.j_at(4.0 * d)
    assert np.abs(j2 - 4.0 * j1).max() < 1e-10  # j* is order 1


def test_jordan_block_detection():
    # p(lambda) = (lambda - i xi)^2: double complex root, one eigenvector
    spec = EquationSpec(m=2, dim=1, principal={
        (1, (1,)): 2.0j, (0, (2,)): 1.0})
    cs = build_companion_symbol(spec)
    with pytest.raises(DiagonalizationError):
        diagonalize_symbol(cs)
    diag = diagonalize_symbol(cs, jordan_allowed=True)
    assert diag.jordan_blocks
    for s in range(len(diag.directions)):
        J = diag.j[s]
        assert abs(abs(J[0, 1]) - 1.0) < 1e-9  # |xi| = 1 on the sphere
        # defective pairs split by O(sqrt(eps)) numerically
        assert abs(J[0, 0] - J[1, 1]) < 1e-6


def test_sphere_directions():
    d1 = sphere_directions(1)
    assert set(map(tuple, d1)) == {(1.0,), (-1.0,)}
    d2 = sphere_directions(2, 12)
    assert np.abs(np.linalg.norm(d2, axis=1) - 1.0).max() < 1e-12


# -- Holmgren transform ------------------------------------------------------

def _smooth_field(grid, tg, M=2):
    x = grid.points()[..., 0]
    nodes = tg.nodes()
    vals = np.empty((M, tg.K + 1) + grid.shape, np.complex128)
    for j, t in enumerate(nodes):
        vals[:, j] = np.sin(2 * x) * math.sin(math.pi * t / tg.T) ** 2
    return SampledField(grid, tg, vals, adapted=True)


def test_holmgren_identity():
    tg = TimeGrid(0.5, 32)
    u = _smooth_field(G, tg)
    v = holmgren_transform(u, 0.0)
    assert np.array_equal(u.values, v.values)


def test_holmgren_impulse_relocation():
    tg = TimeGrid(0.5, 64)
    vals = np.zeros((1, tg.K + 1) + G.shape, np.complex128)
    j0 = 8
    vals[0, j0] = 1.0
    u = SampledField(G, tg, vals, adapted=True)
    dp = 1e-3
    v = holmgren_transform(u, dp)
    x0 = 5  # some site index
    xsq = float(G.points()[x0, 0] ** 2)
    t_new = tg.nodes()[j0] + dp * xsq
    peak = int(np.argmax(np.abs(v.values[0, :, x0])))
    assert abs(tg.nodes()[peak] - t_new) <= tg.dt + 1e-12


def test_holmgren_round_trip_second_order():
    errs = []
    dp = 5e-4
    for K in (64, 128):
        tg = TimeGrid(0.5, K)
        u = _smooth_field(G, tg, M=1)
        v = holmgren_transform(holmgren_transform(u, dp), -dp)
        # compare on nodes whose forward and backward images both stay
        # inside [0, T] (the zero-fill bands at the ends are exact cuts)
        shift_max = dp * float((G.points() ** 2).sum(-1).max())
        nodes = tg.nodes()
        inner = (nodes >= shift_max) & (nodes <= tg.T - shift_max)
        errs.append(np.abs(v.values[:, inner] - u.values[:, inner]).max())
    assert errs[1] < errs[0] / 2.0  # at least O(dt^2) refinement


def test_holmgren_window_error():
    tg = TimeGrid(0.1, 16)
    u = _smooth_field(G, tg)
    with pytest.raises(WindowError):
        holmgren_transform(u, 10.0)


# -- integrator --------------------------------------------------------------

def test_integrator_zero_sources_zero_solution():
    tg = TimeGrid(0.5, 32)
    ens = sample_brownian(4, tg, seed=0)
    cs = build_companion_symbol(make_equation("wave", 1))
    Y = integrate_spde_system(cs, None, None, G, tg, ens)
    assert np.abs(Y.values).max() < 1e-14


def test_integrator_unitary_scalar():
    tg = TimeGrid(0.5, 1000)
    ens = sample_brownian(1, tg, seed=0)
    spec = EquationSpec(m=1, dim=1, principal={(0, (1,)): 1.0})
    cs = build_companion_symbol(spec)
    init = np.ones((1, 1) + G.shape, np.complex128)
    Y = integrate_spde_system(cs, None, None, G, tg, ens, initial=init)
    norms = np.abs(Y.values[0, :, 0, G.N // 2])
    assert np.abs(norms - 1.0).max() <= 1e-6


def test_integrator_ito_isometry():
    tg = TimeGrid(0.5, 200)
    g = Grid(1, 8)
    ens = sample_brownian(10_000, tg, seed=1)
    sigma = 2.0
    F = np.zeros((tg.K + 1, 1) + g.shape, np.complex128)
    F[:, 0] = sigma
    Y = integrate_spde_system(None, None, F, g, tg, ens, m=1)
    # E|Y(T)|^2 = sigma^2 T per site
    site = np.abs(Y.values[:, -1, 0, 0]) ** 2
    got = float(site.mean())
    assert abs(got - sigma**2 * tg.T) <= 0.05 * sigma**2 * tg.T


def test_integrator_stability_error():
    tg = TimeGrid(0.5, 4)  # dt max|sigma| far beyond 0.5
    ens = sample_brownian(2, tg, seed=0)
    cs = build_companion_symbol(make_equation("wave", 1))
    with pytest.raises(StabilityError):
        integrate_spde_system(cs, None, None, Grid(1, 64), tg, ens)


def test_integrator_weak_order_in_dt():
    # deterministic time-varying drift: the left-endpoint source quadrature
    # carries the O(dt) error that the A = 0, F = const case cannot expose
    g = Grid(1, 8)
    errs, Ks = [], [25, 50, 100, 200]
    for K in Ks:
        tg = TimeGrid(0.5, K)
        ens = sample_brownian(1, tg, seed=0)
        f = np.zeros((tg.K + 1, 1) + g.shape, np.complex128)
        f[:, 0] = np.cos(3.0 * tg.nodes()).reshape(-1, 1)
        Y = integrate_spde_system(None, f, None, g, tg, ens, m=1)
        exact = 1j * math.sin(3.0 * tg.T) / 3.0
        errs.append(abs(Y.values[0, -1, 0, 0] - exact))
    slope = np.polyfit(np.log(Ks), np.log(errs), 1)[0]
    assert abs(slope + 1.0) <= 0.30


# -- Carleman ----------------------------------------------------------------

TG_C = TimeGrid(0.5, 64)
ENS_C = sample_brownian(8, TG_C, seed=11)
B1 = symbol_from_expr(sp.sqrt(1 + _XI[0] ** 2), 1, order=1)


def _zero_field():
    vals = np.zeros((ENS_C.M, TG_C.K + 1) + G.shape, np.complex128)
    return SampledField(G, TG_C, vals, adapted=True)


def test_carleman_zero_field_trivial_pass():
    rep = carleman_report(_zero_field(), None, B1, 100.0, 0.5, ENS_C)
    assert rep.passed
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_carleman_deterministic_bump():
    nodes = TG_C.nodes()
    x = G.points()[..., 0]
    vals = np.empty((ENS_C.M, TG_C.K + 1) + G.shape, np.complex128)
    prof = np.exp(1j * x) + 0.3 * np.exp(-2j * x)
    for j, t in enumerate(nodes):
        vals[:, j] = math.sin(math.pi * t / 0.5) ** 2 * prof
    z = SampledField(G, TG_C, vals, adapted=True)
    rep = carleman_report(z, None, B1, 100.0, 0.5, ENS_C)
    assert rep.passed
    assert rep.margin >= 0.0


def test_carleman_endpoint_violation():
    vals = np.ones((ENS_C.M, TG_C.K + 1) + G.shape, np.complex128)
    z = SampledField(G, TG_C, vals, adapted=True)
    from spdo.bounds import HypothesisError
    with pytest.raises(HypothesisError):
        carleman_report(z, None, B1, 100.0, 0.5, ENS_C)


def test_carleman_random_semimartingales():
    rng = np.random.default_rng(5)
    for _ in range(10):
        z = pinned_semimartingale(G, ENS_C, rng)
        for mu in (50.0, 100.0, 200.0):
            rep = carleman_report(z, None, B1, mu, 0.5, ENS_C)
            assert rep.passed


def test_carleman_robust_at_doubled_mu():
    rng = np.random.default_rng(6)
    for _ in range(20):
        z = pinned_semimartingale(G, ENS_C, rng)
        r1 = carleman_report(z, None, B1, 100.0, 0.5, ENS_C)
        r2 = carleman_report(z, None, B1, 200.0, 0.5, ENS_C)
        assert r1.passed and r2.passed


def test_carleman_report_terms_itemized():
    rng = np.random.default_rng(7)
    z = pinned_semimartingale(G, ENS_C, rng)
    rep = carleman_report(z, None, B1, 100.0, 0.5, ENS_C)
    assert len(rep.lhs_terms) == 2 and len(rep.rhs_terms) == 4
    assert abs(rep.lhs - sum(rep.lhs_terms)) < 1e-9 * abs(rep.lhs)
    assert abs(rep.rhs - sum(rep.rhs_terms)) < 1e-9 * abs(rep.rhs)
    d = rep.to_dict()
    assert "discretization_gap" in d
    assert rep.to_json().startswith("{")


def test_carleman_jordan_zero_pair():
    rep = carleman_report_jordan(_zero_field(), _zero_field(), None, B1,
                                 100.0, 0.5, ENS_C)
    assert rep.passed


def test_carleman_jordan_reduces_when_z2_zero():
    rng = np.random.default_rng(8)
    z1 = pinned_semimartingale(G, ENS_C, rng)
    rj = carleman_report_jordan(z1, _zero_field(), None, B1, 100.0, 0.5, ENS_C)
    rs = carleman_report(z1, None, B1, 100.0, 0.5, ENS_C)
    assert abs(rj.lhs - rs.lhs) <= 1e-10 * max(1.0, abs(rs.lhs))
    assert abs(rj.rhs - rs.rhs) <= 1e-10 * max(1.0, abs(rs.rhs))


def test_carleman_jordan_coupled_pairs():
    rng = np.random.default_rng(9)
    for _ in range(10):
        z1 = pinned_semimartingale(G, ENS_C, rng)
        z2 = pinned_semimartingale(G, ENS_C, rng)
        rep = carleman_report_jordan(z1, z2, None, B1, 100.0, 0.5, ENS_C)
        assert rep.passed


# -- cutoff and uniqueness ---------------------------------------------------

def test_smooth_time_cutoff_profile():
    tg = TimeGrid(0.6, 60)
    z = smooth_time_cutoff(tg)
    nodes = tg.nodes()
    assert np.all(z[nodes <= 0.4 + 1e-12] == 1.0)
    assert z[-1] == 0.0
    assert np.all((z >= 0.0) & (z <= 1.0))


def test_pinned_semimartingale_contract():
    rng = np.random.default_rng(10)
    z = pinned_semimartingale(G, ENS_C, rng)
    assert np.abs(z.values[:, 0]).max() < 1e-12
    assert np.abs(z.values[:, -1]).max() < 1e-12
    assert z.adapted


def test_uniqueness_zero_forcing():
    tg = TimeGrid(0.5, 64)
    ens = sample_brownian(4, tg, seed=1)
    rep = uniqueness_experiment(make_equation("schrodinger", 1),
                                [50.0, 100.0], 0.5, 1.5, G, ens,
                                forcing_amplitude=0.0)
    assert rep.direct_energy == 0.0


def test_uniqueness_schrodinger_decay():
    tg = TimeGrid(0.5, 128)
    ens = sample_brownian(16, tg, seed=2)
    rep = uniqueness_experiment(make_equation("schrodinger", 1),
                                [50.0, 100.0, 200.0, 400.0], 0.5, 1.5, G, ens)
    assert rep.passed
    assert all(b2 < b1 for b1, b2 in zip(rep.log_bound, rep.log_bound[1:]))
    target = -(0.5**2 / 4.0 - 0.5**2 / 9.0)
    assert abs(rep.slope - target) <= 0.25 * abs(target)
    assert rep.quotient_slope <= 1e-9


def test_uniqueness_wave_branch():
    tg = TimeGrid(0.5, 128)
    ens = sample_brownian(16, tg, seed=3)
    rep = uniqueness_experiment(make_equation("wave", 1),
                                [50.0, 100.0, 200.0, 400.0], 0.5, 1.5, G, ens)
    assert rep.passed


def test_uniqueness_report_serialization(tmp_path):
    tg = TimeGrid(0.5, 64)
    ens = sample_brownian(4, tg, seed=4)
    rep = uniqueness_experiment(make_equation("wave", 1), [50.0, 100.0],
                                0.5, 1.5, G, ens)
    d = rep.to_dict()
    assert "slope" in d and "log_bound" in d
    p = tmp_path / "decay.csv"
    rep.to_csv(str(p))
    assert p.read_text().splitlines()[0].startswith("mu")

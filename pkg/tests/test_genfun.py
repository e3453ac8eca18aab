import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfspec.genfun import (FunctionGfqi, LegendrianFront, QuadraticForm, fiber_critical_points, gfqi_from_base_function,
                           hausdorff_distance, legendrian_defect, negate, ominus, oplus, pure_quadratic, qi_residual,
                           spectrum, stabilize, wavefront, zero_section)
from gfspec.grid import CircleGrid
from gfspec.homology import SpectralConfig, spectral_pair

from conftest import dense_extrema, trig_poly

FAST = SpectralConfig(n=128, resolution=32)
TWO_PI = 2 * np.pi


def cos_gf(amp=1.0):
    return gfqi_from_base_function(lambda q: amp * np.cos(TWO_PI * q), lambda q: -amp * TWO_PI * np.sin(TWO_PI * q),
                                   label="cos")


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def cubic_gf():
    """e^3/3 - a(q) e blended into e^2 on 1.5 <= |e| <= 2."""
    a = lambda q: 0.5 + 0.25 * np.cos(TWO_PI * q)

    def S(q, e):
        x = e[:, 0]
        chi = smoothstep((np.abs(x) - 1.5) / 0.5)
        return (1 - chi) * (x ** 3 / 3 - a(q) * x) + chi * x * x

    return FunctionGfqi(S, QuadraticForm((1.0,)), support_radius=2.0, label="cubic"), a


# --------------------------------------------------------------------------- forms and calculus

def test_degenerate_form_rejected():
    with pytest.raises(ValueError):
        QuadraticForm((1.0, 0.0))
    with pytest.raises(ValueError):
        stabilize(cos_gf(), QuadraticForm(()))


def test_index_tracks_signs():
    Q = QuadraticForm((1.0, -2.0, -0.5))
    assert Q.index == 2 and Q.negated().index == 1


def test_sum_metadata():
    S = cos_gf()
    T = stabilize(S, QuadraticForm((-1.0,)))
    U = ominus(S, T)
    assert U.dim == 3
    assert U.Q.coeffs == (1.0, -1.0, 1.0)
    assert U.support_radius == max(S.support_radius, T.support_radius)
    assert [p.kind for p in U.parents] == ["primitive", "stabilize"]
    assert negate(T).index == T.dim - T.index


def test_pure_quadratic_is_quadratic_everywhere():
    Q = QuadraticForm((1.0, -3.0))
    S = pure_quadratic(Q)
    rng = np.random.default_rng(0)
    e = rng.normal(size=(50, 2)) * 4
    assert np.allclose(S(rng.random(50), e), Q(e), atol=0)


@given(st.integers(0, 10_000))
def test_primitives_quadratic_at_infinity(seed):
    f, df, _ = trig_poly(np.random.default_rng(seed))
    S = gfqi_from_base_function(f, df)
    assert qi_residual(S, samples=100, seed=seed) <= 1e-12
    cub, _ = cubic_gf()
    assert qi_residual(cub, samples=100, seed=seed) <= 1e-12


@given(st.integers(0, 10_000))
def test_composites_quadratic_at_infinity(seed):
    rng = np.random.default_rng(seed)
    f, df, _ = trig_poly(rng)
    g, dg, _ = trig_poly(rng)
    S, T = gfqi_from_base_function(f, df), gfqi_from_base_function(g, dg)
    cub, _ = cubic_gf()
    parts = qi_residual(S, seed=seed) + qi_residual(T, seed=seed) + qi_residual(cub, seed=seed)
    for U in (oplus(S, T), ominus(S, cub), negate(oplus(cub, T)), stabilize(S, QuadraticForm((1.0, -1.0)))):
        assert qi_residual(U, samples=100, seed=seed) <= parts + 1e-12


# --------------------------------------------------------------------------- fiber critical points

def test_critical_point_of_stabilized_jet():
    S = cos_gf()
    for q in (0.0, 0.3, 0.71):
        E = fiber_critical_points(S, q, box_radius=2.0, resolution=32)
        assert E.shape == (1, 1) and abs(E[0, 0]) < 1e-9


def test_cubic_critical_points():
    S, a = cubic_gf()
    for q in (0.0, 0.25, 0.6):
        E = fiber_critical_points(S, q, box_radius=3.0, resolution=96)[:, 0]
        r = np.sqrt(a(q))
        assert np.min(np.abs(E - r)) < 1e-6 and np.min(np.abs(E + r)) < 1e-6
        # any further point is forced by the quadratic end and sits in the blending zone
        extra = E[(np.abs(E - r) > 1e-6) & (np.abs(E + r) > 1e-6)]
        assert np.all((np.abs(extra) >= 1.5) & (np.abs(extra) <= 2.0))
        assert len(E) % 2 == 1


def test_critical_point_of_pure_quadratic():
    E = fiber_critical_points(pure_quadratic(QuadraticForm((1.0, -1.0))), 0.4, box_radius=2.0, resolution=16)
    assert E.shape == (1, 2) and np.max(np.abs(E)) < 1e-9


def test_box_must_clear_support():
    S, _ = cubic_gf()
    with pytest.raises(ValueError):
        fiber_critical_points(S, 0.0, box_radius=2.5)


# --------------------------------------------------------------------------- fronts

def test_zero_section_front():
    wf = wavefront(stabilize(zero_section(), QuadraticForm((1.0,))), CircleGrid(64), resolution=16)
    assert np.max(np.abs(wf.points[:, 1:])) < 1e-9
    assert np.allclose(np.sort(wf.q), CircleGrid(64).points)


def test_cos_front_is_analytic():
    g = CircleGrid(256)
    wf = wavefront(cos_gf(), g, resolution=32)
    q = wf.q
    exact = np.stack([q, TWO_PI * np.sin(TWO_PI * q), np.cos(TWO_PI * q)], axis=1)
    assert np.max(np.abs(wf.points - exact)) <= 2 * g.spacing


def test_difference_front_contains_zero_section():
    g = CircleGrid(64)
    S = cos_gf()
    wf = wavefront(ominus(S, S), g, resolution=24)
    for q in g.points:
        at = wf.points[np.abs(wf.q - q) < 1e-12]
        assert np.min(np.linalg.norm(at[:, 1:], axis=1)) < 1e-6


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_negation_reflects_front(seed):
    f, df, _ = trig_poly(np.random.default_rng(seed), degree=2, amplitude=0.5)
    S = stabilize(gfqi_from_base_function(f, df), QuadraticForm((-1.0,)))
    g = CircleGrid(64)
    a = wavefront(S, g, resolution=24)
    b = wavefront(negate(S), g, resolution=24)
    flipped = LegendrianFront(a.points * [1, -1, -1], a.branch, a.closed)
    assert hausdorff_distance(flipped, b, 0.01) < 1e-6


def test_front_csv(tmp_path):
    wf = wavefront(cos_gf(), CircleGrid(16), resolution=16)
    wf.to_csv(tmp_path / "front.csv")
    lines = (tmp_path / "front.csv").read_text().splitlines()
    assert lines[0] == "q,p,z,branch" and len(lines) == 17


def test_defect_of_exact_jet_is_second_order():
    out = []
    for n in (64, 128):
        q = np.arange(n) / n
        pts = np.stack([q, TWO_PI * np.sin(TWO_PI * q), np.cos(TWO_PI * q)], axis=1)
        out.append(legendrian_defect(LegendrianFront(pts, np.zeros(n), {0: True})))
    assert 3.5 < out[0] / out[1] < 4.5


def test_defect_of_zero_section_and_noisy_front():
    n = 128
    q = np.arange(n) / n
    pts = np.stack([q, 0 * q, 0 * q], axis=1)
    assert legendrian_defect(LegendrianFront(pts, np.zeros(n), {0: True})) == 0.0
    noisy = pts + np.random.default_rng(1).normal(scale=1e-2, size=pts.shape) * [0, 1, 1]
    assert legendrian_defect(LegendrianFront(noisy, np.zeros(n), {0: True})) > 1e-3


# --------------------------------------------------------------------------- spectra

def test_spectrum_of_cos():
    vals = spectrum(cos_gf(), CircleGrid(128), resolution=32).values
    assert np.allclose(vals, [-1.0, 1.0], atol=1e-9)


def test_spectrum_of_quadratic_and_constant():
    assert np.allclose(spectrum(pure_quadratic(QuadraticForm((1.0,))), CircleGrid(64), resolution=16).values, [0.0])
    c = 0.37
    S = gfqi_from_base_function(lambda q: c + 0 * q, lambda q: 0 * q)
    assert np.allclose(spectrum(S, CircleGrid(64), resolution=16).values, [c], atol=1e-12)


def test_spectrum_json():
    import json
    assert json.loads(spectrum(cos_gf(), CircleGrid(64), resolution=16).to_json()) == pytest.approx([-1, 1])


# --------------------------------------------------------------------------- downstream spectral numbers

def test_zero_function_gives_zero_pair():
    S = gfqi_from_base_function(lambda q: 0 * q, lambda q: 0 * q)
    assert tuple(spectral_pair(S, FAST)) == (0.0, 0.0)


def test_difference_of_equal_jets_is_zero():
    sp = spectral_pair(ominus(cos_gf(), cos_gf()), FAST)
    assert abs(sp.ell_minus) <= sp.tol_spec and abs(sp.ell_plus) <= sp.tol_spec


def test_sum_of_jets_matches_grid_extrema():
    f = lambda q: np.cos(TWO_PI * q)
    g = lambda q: 0.5 * np.sin(2 * TWO_PI * q)
    S = oplus(gfqi_from_base_function(f), gfqi_from_base_function(g))
    lo, hi = dense_extrema(lambda q: f(q) + g(q))
    sp = spectral_pair(S, FAST)
    assert abs(sp.ell_plus - hi) <= sp.tol_spec and abs(sp.ell_minus - lo) <= sp.tol_spec


def test_pure_quadratic_summand_changes_nothing():
    S = cos_gf()
    base = spectral_pair(S, FAST)
    both = spectral_pair(oplus(S, pure_quadratic(QuadraticForm((-1.0,)))), FAST)
    assert both.ell_minus == pytest.approx(base.ell_minus, abs=1e-9)
    assert both.ell_plus == pytest.approx(base.ell_plus, abs=1e-9)


def test_negation_examples():
    z = spectral_pair(negate(zero_section()), FAST)
    assert tuple(z) == (0.0, 0.0)
    S = cos_gf()
    neg = spectral_pair(negate(S), FAST)
    assert neg.ell_plus == pytest.approx(1.0, abs=1e-9)
    assert neg.ell_plus == pytest.approx(-spectral_pair(S, FAST).ell_minus, abs=1e-9)
    twice = spectral_pair(negate(negate(S)), FAST)
    assert tuple(twice) == pytest.approx(tuple(spectral_pair(S, FAST)), abs=1e-9)


@pytest.mark.parametrize("coeffs", [(1.0,), (-1.0,), (1.0, -1.0)])
def test_stabilization_keeps_spectral_pair(coeffs):
    S = cos_gf(0.8)
    base = spectral_pair(S, FAST)
    st_ = spectral_pair(stabilize(S, QuadraticForm(coeffs)), SpectralConfig(n=64, resolution=16))
    assert st_.ell_minus == pytest.approx(base.ell_minus, abs=1e-9)
    assert st_.ell_plus == pytest.approx(base.ell_plus, abs=1e-9)


def test_negative_stabilization_shifts_degrees():
    S = cos_gf()
    base = spectral_pair(S, FAST).essential
    shifted = spectral_pair(stabilize(S, QuadraticForm((-1.0,))), FAST).essential
    assert sorted(k for _, k in shifted) == [k + 1 for k in sorted(k for _, k in base)]


@settings(max_examples=6)
@given(st.integers(0, 10_000), st.sampled_from([1.0, -1.0]))
def test_stabilization_invariance_property(seed, sign):
    f, df, _ = trig_poly(np.random.default_rng(seed), degree=3, amplitude=1.0)
    S = gfqi_from_base_function(f, df)
    a = spectral_pair(S, FAST)
    b = spectral_pair(stabilize(S, QuadraticForm((sign,))), SpectralConfig(n=128, resolution=24))
    tol = a.tol_spec + b.tol_spec
    assert abs(a.ell_minus - b.ell_minus) <= tol and abs(a.ell_plus - b.ell_plus) <= tol


@settings(max_examples=5)
@given(st.integers(0, 10_000))
def test_difference_with_itself_property(seed):
    f, df, _ = trig_poly(np.random.default_rng(seed), degree=2, amplitude=1.0)
    S = gfqi_from_base_function(f, df)
    D = ominus(S, S)
    assert np.min(np.abs(spectrum(D, CircleGrid(64), resolution=16).values)) < 1e-9
    sp = spectral_pair(D, SpectralConfig(n=64, resolution=24))
    assert abs(sp.ell_minus) <= sp.tol_spec and abs(sp.ell_plus) <= sp.tol_spec

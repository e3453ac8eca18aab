import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfspec.dynamics import (ContactHamiltonian, DefectError, bump, constant_hamiltonian, contact_vector_field,
                             flow, integrate, lift_hamiltonian, parse_hamiltonian, symplectic_flow,
                             vector_field_residuals, zero_section_front)
from gfspec.genfun import LegendrianFront, legendrian_defect
from gfspec.handles import flow_handle, reeb_handle, translation_handle

TWO_PI = 2 * np.pi


def random_points(rng, m=100, p_range=2.0, z_range=3.0):
    return np.stack([rng.random(m), rng.uniform(-p_range, p_range, m), rng.uniform(-z_range, z_range, m)], axis=1)


def random_hamiltonian(rng):
    """Smooth H mixing all variables with random coefficients."""
    a = rng.normal(size=6)
    expr = (f"{a[0]}*sin(2*pi*q)*p**2 + {a[1]}*cos(2*pi*z)*p + {a[2]}*exp(-p**2)*cos(2*pi*(q + t))"
            f" + {a[3]}*z*sin(2*pi*q) + {a[4]}*p**3 + {a[5]}")
    return parse_hamiltonian(expr)


# --------------------------------------------------------------------------- vector field

def test_constant_is_reeb_direction():
    H = constant_hamiltonian(0.7)
    qd, pd, zd = contact_vector_field(H, 0.0, np.array([0.3]), np.array([1.2]), np.array([-0.5]))
    assert (qd[0], pd[0], zd[0]) == (0.0, 0.0, 0.7)


def test_base_function_field():
    H = parse_hamiltonian("cos(2*pi*q)")
    q = np.linspace(0, 1, 7)
    qd, pd, zd = contact_vector_field(H, 0.0, q, 0.5 + 0 * q, 0 * q)
    assert np.allclose(qd, 0.0, atol=1e-14)
    assert np.allclose(pd, TWO_PI * np.sin(TWO_PI * q), atol=1e-12)
    assert np.allclose(zd, np.cos(TWO_PI * q), atol=1e-12)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 31 - 1))
def test_defining_relations_residuals(seed):
    rng = np.random.default_rng(seed)
    H = random_hamiltonian(rng)
    r1, r2 = vector_field_residuals(H, random_points(rng), t=float(rng.random()))
    assert np.max(r1) <= 1e-6 and np.max(r2) <= 1e-6


def test_residuals_with_finite_difference_partials():
    # no analytic gradient: partials come from central differences
    H = ContactHamiltonian(lambda t, q, p, z: np.sin(TWO_PI * q) * p + 0.3 * np.cos(TWO_PI * z) * p ** 2)
    r1, r2 = vector_field_residuals(H, random_points(np.random.default_rng(1)))
    assert np.max(r1) <= 1e-6 and np.max(r2) <= 1e-6


def test_residual_oracle_detects_wrong_field():
    H = parse_hamiltonian("p**2*sin(2*pi*q) + z")
    wrong = ContactHamiltonian(H.func, lambda t, q, p, z: tuple(-g for g in H.grad(t, q, p, z)), verify=False)
    _, r2 = vector_field_residuals(wrong, random_points(np.random.default_rng(2)))
    assert np.max(r2) > 1e-3


# --------------------------------------------------------------------------- flows

@settings(max_examples=10)
@given(st.floats(-3, 3, allow_nan=False), st.floats(0.1, 2.0))
def test_constant_flow_is_exact_reeb_shift(c, t):
    pts = random_points(np.random.default_rng(0), 20)
    out = integrate(constant_hamiltonian(c), pts, 0.0, t, steps=7)
    assert np.array_equal(out[:, :2], pts[:, :2])
    assert np.allclose(out[:, 2], pts[:, 2] + c * t, atol=1e-12, rtol=0)


def test_constant_flow_of_zero_section():
    out = flow(constant_hamiltonian(0.4), zero_section_front(64), 0.0, 1.0)
    assert np.allclose(out.p, 0.0) and np.allclose(out.z, 0.4, atol=1e-12)


def test_base_function_flow_is_its_jet():
    H = parse_hamiltonian("0.5*cos(2*pi*q) + 0.2*sin(4*pi*q)")
    front = flow(H, zero_section_front(128), 0.0, 1.0)
    q = front.q
    f = 0.5 * np.cos(TWO_PI * q) + 0.2 * np.sin(2 * TWO_PI * q)
    df = -0.5 * TWO_PI * np.sin(TWO_PI * q) + 0.2 * 2 * TWO_PI * np.cos(2 * TWO_PI * q)
    assert np.allclose(q, np.arange(128) / 128, atol=1e-12)
    assert np.allclose(front.p, -df, atol=1e-9) and np.allclose(front.z, f, atol=1e-9)


def test_momentum_lift_moves_zero_section_to_constant_jet():
    g0 = 0.3
    H = parse_hamiltonian("0.3*cos(p) + 0.5*sin(p)")
    front = flow(H, zero_section_front(64), 0.0, 1.0)
    # q advances by g'(0) = 0.5, p stays 0, z advances by g(0)
    assert np.allclose(np.sort(front.q), np.sort(np.mod(np.arange(64) / 64 + 0.5, 1.0)), atol=1e-12)
    assert np.allclose(front.p, 0.0, atol=1e-14)
    assert np.allclose(front.z, g0, atol=1e-12)


def test_step_guard():
    H = parse_hamiltonian("3*sin(2*pi*q)*p**2")
    with pytest.raises(ValueError, match="stability guard"):
        flow(H, zero_section_front(32), 0.0, 1.0, steps=2)


def test_defect_rejection():
    # a coarse front cannot resolve the steep jet it is carried to
    with pytest.raises(DefectError, match="increase steps"):
        flow(parse_hamiltonian("2*cos(4*pi*q)"), zero_section_front(12), 0.0, 1.0)


def test_zero_hamiltonian_lift_is_identity():
    H = lift_hamiltonian(lambda t, q, p: 0 * q, 1.0)
    pts = random_points(np.random.default_rng(4), 30)
    assert np.array_equal(integrate(H, pts, 0.0, 1.0, steps=10), pts)


def test_lift_flags():
    H = lift_hamiltonian(lambda t, q, p: np.sin(TWO_PI * q) * bump(p, 0, 2), 2.0)
    assert H.z_independent and H.z_periodic and H.p_support_radius == 2.0


def test_bump_lift_fixes_zero_section_and_advances_z():
    H = parse_hamiltonian("bump(p, 0, 1)")
    front = flow(H, zero_section_front(32), 0.0, 0.75)
    assert np.allclose(front.q, np.arange(32) / 32, atol=1e-14)
    assert np.allclose(front.p, 0.0) and np.allclose(front.z, 0.75, atol=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_lift_projects_to_symplectic_flow(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=3)
    w = 1.5

    def h(t, q, p):
        return (a * np.sin(TWO_PI * q) + b * np.cos(TWO_PI * (q - t)) * p + c * p ** 2) * bump(p, 0, w)

    expr = f"({a}*sin(2*pi*q) + {b}*cos(2*pi*(q - t))*p + {c}*p**2)*bump(p, 0, {w})"
    H = parse_hamiltonian(expr, p_support_radius=w)
    sym_H = parse_hamiltonian(expr)

    def dh(t, q, p):
        _, hq, hp, _ = sym_H.partials(t, q, p, 0 * q)
        return hq, hp

    pts = random_points(rng, 8, p_range=1.2)
    out = integrate(H, pts, 0.0, 1.0, steps=1200)
    q1, p1 = symplectic_flow(h, dh, pts[:, 0], pts[:, 1], 0.0, 1.0, steps=1200)
    assert np.max(np.abs(out[:, 0] - q1)) <= 1e-6 and np.max(np.abs(out[:, 1] - p1)) <= 1e-6


@settings(max_examples=10)
@given(st.integers(0, 2 ** 31 - 1))
def test_equivariance(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=3)
    H = parse_hamiltonian(f"{a[0]}*sin(2*pi*q)*p + {a[1]}*p**2 + {a[2]}*cos(2*pi*(q - t))")
    assert H.z_independent
    pts = random_points(rng, 30)
    shifted = pts + np.array([0.0, 0.0, 1.0])
    A = integrate(H, pts, 0.0, 0.5, steps=200)
    B = integrate(H, shifted, 0.0, 0.5, steps=200)
    assert np.max(np.abs(B - A - np.array([0.0, 0.0, 1.0]))) <= 1e-9


def test_z_periodic_flag_detection():
    assert parse_hamiltonian("sin(2*pi*z)*p").z_periodic
    assert not parse_hamiltonian("z*p").z_periodic
    assert not parse_hamiltonian("sin(2*pi*z)").z_independent


@settings(max_examples=10)
@given(st.integers(0, 2 ** 31 - 1))
def test_word_times_inverse_returns_inputs(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(-0.5, 0.5, 3)
    w = (flow_handle(f"{a}*sin(2*pi*q)*bump(p, 0, 2)", 1.0, 2.0)
         @ translation_handle(f"{b}*cos(2*pi*q)")
         @ reeb_handle(c)
         @ flow_handle(f"{a}*cos(2*pi*z) + {b}*sin(2*pi*q)", 0.5))
    pts = random_points(rng, 100, p_range=1.0, z_range=1.0)
    back = (w @ w.inverse()).apply(pts)
    assert np.max(np.abs(back - pts)) <= 1e-7
    back = (w.inverse() @ w).apply(pts)
    assert np.max(np.abs(back - pts)) <= 1e-7


# --------------------------------------------------------------------------- expressions and defect

def test_plateau_expression():
    H = parse_hamiltonian("plateau(p, 3)")
    p = np.array([0.0, 1.9, 2.0, -2.0, 2.5, 3.0, -3.5, 10.0])
    v = H(0.0, 0 * p, p, 0 * p)
    assert np.all(v[:4] == 1.0) and 0 < v[4] < 1 and np.all(v[5:] == 0.0)
    assert H.p_support_radius is not None and 3.0 <= H.p_support_radius <= 3.05


def test_unknown_symbol_rejected():
    with pytest.raises(ValueError, match="unknown symbols"):
        parse_hamiltonian("x + q")


def test_defect_second_order_on_exact_jets():
    def front(m):
        q = np.arange(m) / m
        pts = np.stack([q, TWO_PI * np.sin(TWO_PI * q), np.cos(TWO_PI * q)], axis=1)
        return LegendrianFront(pts, np.zeros(m, dtype=int), {0: True})

    d1, d2 = legendrian_defect(front(64)), legendrian_defect(front(128))
    assert 3.5 <= d1 / d2 <= 4.5
    assert legendrian_defect(zero_section_front(16)) == 0.0

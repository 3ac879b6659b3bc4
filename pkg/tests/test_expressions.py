"""Parser and exact-derivative checks for the potential expression language."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamma_ladder.errors import (
    NotPeriodicError,
    PotentialSyntaxError,
    UnknownSymbolError,
)
from gamma_ladder.expressions import (
    catalog_potential,
    load_catalog,
    parse_potential,
)

TWO_PI = 2.0 * math.pi

# expression, closed form, dimension
CLOSED_FORMS = [
    (
        "sin(2*pi*x1)^2 + 0.2*(1 - cos(2*pi*x1))",
        lambda x: np.sin(TWO_PI * x[..., 0]) ** 2
        + 0.2 * (1.0 - np.cos(TWO_PI * x[..., 0])),
        1,
    ),
    ("-cos(2*pi*x1)", lambda x: -np.cos(TWO_PI * x[..., 0]), 1),
    (
        "0.5*(1 - cos(6*pi*x1)) + 0.15*(1 + cos(6*pi*x1))*cos(2*pi*x1)",
        lambda x: 0.5 * (1.0 - np.cos(3 * TWO_PI * x[..., 0]))
        + 0.15 * (1.0 + np.cos(3 * TWO_PI * x[..., 0])) * np.cos(TWO_PI * x[..., 0]),
        1,
    ),
    (
        "sin(2*pi*x1)^2 + sin(2*pi*x2)^2",
        lambda x: np.sin(TWO_PI * x[..., 0]) ** 2 + np.sin(TWO_PI * x[..., 1]) ** 2,
        2,
    ),
]


@pytest.mark.parametrize("source,closed,dim", CLOSED_FORMS)
def test_values_match_closed_forms(source, closed, dim):
    pot = parse_potential(source)
    assert pot.dim == dim
    rng = np.random.default_rng(7)
    pts = rng.random((64, dim))
    np.testing.assert_allclose(pot.value(pts), closed(pts), rtol=0, atol=1e-14)


@pytest.mark.parametrize("source,closed,dim", CLOSED_FORMS)
def test_gradient_matches_finite_differences(source, closed, dim):
    pot = parse_potential(source)
    rng = np.random.default_rng(11)
    pts = rng.random((32, dim))
    grad = pot.gradient(pts)
    h = 1e-6
    for axis in range(dim):
        lo, hi = pts.copy(), pts.copy()
        lo[:, axis] -= h
        hi[:, axis] += h
        fd = (pot.value(hi) - pot.value(lo)) / (2 * h)
        np.testing.assert_allclose(grad[:, axis], fd, rtol=0, atol=5e-8)


@pytest.mark.parametrize("source,closed,dim", CLOSED_FORMS)
def test_hessian_matches_gradient_differences(source, closed, dim):
    pot = parse_potential(source)
    rng = np.random.default_rng(13)
    pts = rng.random((16, dim))
    hess = pot.hessian(pts)
    h = 1e-6
    for axis in range(dim):
        lo, hi = pts.copy(), pts.copy()
        lo[:, axis] -= h
        hi[:, axis] += h
        fd = (pot.gradient(hi) - pot.gradient(lo)) / (2 * h)
        np.testing.assert_allclose(hess[..., axis], fd, rtol=0, atol=5e-6)
    np.testing.assert_allclose(hess, np.swapaxes(hess, -1, -2), rtol=0, atol=0)


def test_derivatives_are_exact_not_numerical():
    # d/dx sin(2*pi*x)^2 = 2*pi*sin(4*pi*x), at machine precision
    pot = parse_potential("sin(2*pi*x1)^2")
    x = np.linspace(0.0, 1.0, 97)[:, None]
    expected = TWO_PI * np.sin(2 * TWO_PI * x[:, 0])
    np.testing.assert_allclose(pot.gradient(x)[:, 0], expected, rtol=0, atol=1e-13)
    expected2 = 2 * TWO_PI**2 * np.cos(2 * TWO_PI * x[:, 0])
    np.testing.assert_allclose(pot.hessian(x)[:, 0, 0], expected2, rtol=0, atol=1e-12)


def test_known_second_derivatives_at_critical_points():
    pot = parse_potential("sin(2*pi*x1)^2 + 0.2*(1 - cos(2*pi*x1))")
    delta = 0.2
    assert pot.hessian([[0.0]])[0, 0, 0] == pytest.approx(
        4 * math.pi**2 * (2 + delta), rel=1e-12
    )
    assert pot.hessian([[0.5]])[0, 0, 0] == pytest.approx(
        4 * math.pi**2 * (2 - delta), rel=1e-12
    )


@given(st.floats(-2.0, 3.0), st.floats(-2.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_evaluation_is_1_periodic(x, y):
    pot = parse_potential("sin(2*pi*x1)^2 + sin(2*pi*x2)^2")
    base = pot.value([[x, y]])[0]
    assert pot.value([[x + 1.0, y]])[0] == pytest.approx(base, abs=1e-9)
    assert pot.value([[x, y - 2.0]])[0] == pytest.approx(base, abs=1e-9)


def test_value_broadcasts_over_leading_shape():
    pot = parse_potential("cos(2*pi*x1)")
    pts = np.zeros((3, 5, 1))
    out = pot.value(pts)
    assert out.shape == (3, 5)
    np.testing.assert_allclose(out, 1.0)
    # constant expressions broadcast too
    const = parse_potential("2 + 3*4")
    assert const.value(np.zeros((4, 1))).shape == (4,)
    np.testing.assert_allclose(const.value(np.zeros((4, 1))), 14.0)


def test_value_rejects_wrong_trailing_dimension():
    pot = parse_potential("sin(2*pi*x1)^2", dim=1)
    with pytest.raises(ValueError):
        pot.value(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        pot.value(0.5)


def test_power_is_right_associative_and_star_star_works():
    pot = parse_potential("2^3^2 + 0*cos(2*pi*x1)")
    assert pot.value([[0.3]])[0] == pytest.approx(512.0)
    alt = parse_potential("2**3**2 + 0*cos(2*pi*x1)")
    assert alt.value([[0.3]])[0] == pytest.approx(512.0)


def test_unary_minus_and_precedence():
    pot = parse_potential("-cos(2*pi*x1)^2 + 2*3")
    # unary minus binds the whole power: -(cos^2) + 6
    assert pot.value([[0.0]])[0] == pytest.approx(5.0)


def test_syntax_error_carries_position():
    with pytest.raises(PotentialSyntaxError) as err:
        parse_potential("sin(2*pi*x1")
    assert err.value.position == len("sin(2*pi*x1")
    with pytest.raises(PotentialSyntaxError) as err:
        parse_potential("cos(2*pi*x1) / 2")
    assert err.value.position == len("cos(2*pi*x1) ")
    assert "/" in str(err.value)


def test_trailing_input_is_rejected():
    with pytest.raises(PotentialSyntaxError):
        parse_potential("cos(2*pi*x1))")


def test_exponent_must_fold_to_a_constant():
    with pytest.raises(PotentialSyntaxError):
        parse_potential("2^x1")
    # constant arithmetic in the exponent is fine
    pot = parse_potential("cos(2*pi*x1)^(2*2)")
    assert pot.value([[0.5]])[0] == pytest.approx(1.0)


def test_unknown_symbols_are_rejected():
    with pytest.raises(UnknownSymbolError):
        parse_potential("cos(2*pi*y)")
    with pytest.raises(UnknownSymbolError):
        parse_potential("tan(2*pi*x1)")
    with pytest.raises(UnknownSymbolError):
        parse_potential("x10 + cos(2*pi*x1)")


def test_dimension_inference_and_mismatch():
    pot = parse_potential("sin(2*pi*x2)^2")
    assert pot.dim == 2
    with pytest.raises(UnknownSymbolError):
        parse_potential("sin(2*pi*x2)^2", dim=1)
    # declaring extra coordinates is allowed; they are flat directions
    wide = parse_potential("sin(2*pi*x1)^2", dim=3)
    assert wide.dim == 3
    assert wide.gradient([[0.3, 0.1, 0.9]]).shape == (1, 3)
    np.testing.assert_allclose(wide.gradient([[0.3, 0.1, 0.9]])[0, 1:], 0.0)


def test_non_periodic_expressions_are_rejected():
    with pytest.raises(NotPeriodicError):
        parse_potential("x1")
    with pytest.raises(NotPeriodicError):
        parse_potential("sin(pi*x1)")
    with pytest.raises(NotPeriodicError):
        parse_potential("sin(2*pi*x1) + 0.001*x2")


def test_catalog_entries_parse_and_carry_dims():
    catalog = load_catalog()
    assert sorted(catalog) == [
        "double-well",
        "double-well-2d",
        "double-well-symmetric",
        "single-well-cosine",
        "three-well",
    ]
    for name, entry in catalog.items():
        pot = catalog_potential(name)
        assert pot.dim == entry["dim"]
        assert pot.source == entry["expression"]


def test_catalog_rejects_unknown_name():
    with pytest.raises(KeyError):
        catalog_potential("quadruple-well")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homog.coeff import (
    Checkerboard,
    Constant,
    EllipticityError,
    GridTable,
    Laminate,
    ScalarCosine,
    from_config,
    sample,
    to_config,
    validate_ellipticity,
)


def test_constant_periodic_sampling():
    field = Constant(((1.0, 0.0), (0.0, 1.0)))
    np.testing.assert_array_equal(sample(field, (7.3, -2.1)), np.eye(2))


def test_laminate_values():
    field = Laminate(axis=0, alpha=1.0, beta=4.0, fraction=0.5)
    np.testing.assert_array_equal(sample(field, (0.25, 0.9)), np.eye(2))
    np.testing.assert_array_equal(sample(field, (0.75, 0.1)), 4.0 * np.eye(2))


def test_scalar_cosine_value():
    field = ScalarCosine(2.0, 1.0, axis=0)
    np.testing.assert_allclose(sample(field, (0.5, 0.0)), np.eye(2), atol=1e-15)


def test_checkerboard_pattern():
    field = Checkerboard(1.0, 4.0)
    assert sample(field, (0.25, 0.25))[0, 0] == 1.0
    assert sample(field, (0.75, 0.25))[0, 0] == 4.0
    assert sample(field, (0.75, 0.75))[0, 0] == 1.0


def test_grid_table_lookup_and_symmetry_flag():
    vals = np.zeros((2, 2, 2, 2))
    for i in range(2):
        for j in range(2):
            vals[i, j] = np.eye(2) * (1 + i + 2 * j)
    vals[0, 0, 0, 1] = 0.3
    vals[0, 0, 1, 0] = 0.1
    field = GridTable(vals)
    assert not field.symmetric
    np.testing.assert_array_equal(sample(field, (0.9, 0.1)), 2.0 * np.eye(2))
    a = sample(field, (0.1, 0.1))
    assert a[0, 1] == 0.3 and a[1, 0] == 0.1


def test_validate_rejects_indefinite_constant():
    with pytest.raises(EllipticityError):
        validate_ellipticity(Constant(((1.0, 2.0), (2.0, 1.0))))


def test_validate_cosine_range():
    c, big = validate_ellipticity(ScalarCosine(2.0, 1.0, axis=0), samples_per_axis=512)
    assert c == pytest.approx(1.0, abs=1e-3)
    assert big == pytest.approx(3.0, abs=1e-3)


def test_validate_laminate_range():
    c, big = validate_ellipticity(Laminate(0, 1.0, 4.0, 0.5))
    assert (c, big) == (1.0, 4.0)


@settings(max_examples=80, deadline=None)
@given(
    num=st.integers(0, 2**12 - 1),
    num2=st.integers(0, 2**12 - 1),
    k0=st.integers(-8, 8),
    k1=st.integers(-8, 8),
    which=st.integers(0, 3),
)
def test_periodicity_exact_on_dyadics(num, num2, k0, k1, which):
    # dyadic coordinates plus small integer offsets stay exact in binary
    fields = [
        Laminate(0, 1.0, 4.0, 0.5),
        Checkerboard(1.0, 4.0),
        ScalarCosine(2.0, 1.0, 0),
        Constant(((2.0, 0.5), (0.5, 1.0))),
    ]
    field = fields[which]
    y = np.array([num / 2**12, num2 / 2**12])
    np.testing.assert_array_equal(sample(field, y), sample(field, y + np.array([k0, k1])))


def test_symmetric_kinds_exactly_symmetric():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(64, 2))
    for field in [Laminate(1, 1.0, 4.0, 0.25), Checkerboard(1.0, 4.0), ScalarCosine(2.0, 1.0, 1)]:
        a = field.sample_batch(pts)
        np.testing.assert_array_equal(a, np.swapaxes(a, 1, 2))


def test_transposed_field():
    vals = np.tile(np.array([[2.0, 0.3], [0.1, 1.5]]), (2, 2, 1, 1))
    field = GridTable(vals)
    t = field.transposed()
    np.testing.assert_array_equal(sample(t, (0.1, 0.2)), sample(field, (0.1, 0.2)).T)
    sym = ScalarCosine(2.0, 1.0, 0)
    assert sym.transposed() is sym


@pytest.mark.parametrize(
    "field",
    [
        Constant(((2.0, 0.5), (0.5, 1.0))),
        Laminate(0, 1.0, 4.0, 0.5),
        Checkerboard(1.0, 4.0),
        ScalarCosine(2.0, 1.0, 0, 1),
    ],
)
def test_config_roundtrip(field):
    rebuilt = from_config(to_config(field))
    pts = np.array([[0.3, 0.6], [0.9, 0.2]])[:, : field.dim]
    np.testing.assert_array_equal(field.sample_batch(pts), rebuilt.sample_batch(pts))

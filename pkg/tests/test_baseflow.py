"""Torus rotation flow, coefficients and return times."""

import numpy as np
import pytest

from fadeflow.baseflow import (
    BasePoint,
    MatrixCoefficient,
    TorusBase,
    TrigCoefficient,
    VectorCoefficient,
    advance,
    advance_many,
    base_distance,
    eval_coeff,
    return_times,
)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture
def base():
    return TorusBase(
        [GOLDEN],
        {"f": TrigCoefficient([((1,), 0.3, 0.0), ((2,), 0.1, 0.7)], offset=0.05)},
    )


class TestFlow:
    def test_identity_at_zero(self, base):
        p = BasePoint([0.3])
        assert advance(base, p, 0.0).theta[0] == pytest.approx(0.3)

    def test_simple_arithmetic(self):
        b = TorusBase([1.0], {})
        assert advance(b, BasePoint([0.25]), 0.5).theta[0] == pytest.approx(0.75)

    def test_group_law_round_trip(self, base):
        p = BasePoint([0.77])
        q = advance(base, advance(base, p, 1.3), -1.3)
        assert abs(q.theta[0] - p.theta[0]) <= 1e-12

    def test_composition_random(self, base):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = BasePoint(rng.uniform(0, 1, 1))
            s, t = rng.uniform(-20, 20, 2)
            lhs = advance(base, advance(base, p, s), t)
            rhs = advance(base, p, s + t)
            d = abs(lhs.theta[0] - rhs.theta[0])
            assert min(d, 1 - d) <= 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            TorusBase([0.0], {})
        with pytest.raises(ValueError):
            BasePoint([1.2])


class TestDistance:
    def test_wraparound(self):
        assert base_distance(BasePoint([0.1]), BasePoint([0.9])) == pytest.approx(0.2)

    def test_zero(self):
        p = BasePoint([0.4, 0.6])
        assert base_distance(p, p) == 0.0

    def test_triangle_inequality(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a, b, c = (BasePoint(rng.uniform(0, 1, 3)) for _ in range(3))
            assert base_distance(a, c) <= base_distance(a, b) + base_distance(b, c) + 1e-15

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            base_distance(BasePoint([0.1]), BasePoint([0.1, 0.2]))


class TestCoefficients:
    def test_zero_spec(self, base):
        b = TorusBase([1.0], {"z": TrigCoefficient([])})
        assert eval_coeff(b, "z", BasePoint([0.3])) == 0.0

    def test_single_term(self):
        b = TorusBase([1.0], {"c": TrigCoefficient([((1,), 1.0, 0.0)])})
        assert eval_coeff(b, "c", BasePoint([0.0])) == pytest.approx(1.0)

    def test_unknown_id(self, base):
        with pytest.raises(KeyError):
            eval_coeff(base, "nope", BasePoint([0.0]))

    def test_quasi_periodic_along_orbit(self, base):
        p = BasePoint([0.21])
        ts = np.linspace(0.0, 30.0, 400)
        vals = base.coefficient("f").values(advance_many(base, p, ts))
        direct = 0.05 + 0.3 * np.cos(2 * np.pi * (0.21 + GOLDEN * ts)) + 0.1 * np.cos(
            4 * np.pi * (0.21 + GOLDEN * ts) + 0.7
        )
        assert np.abs(vals - direct).max() <= 1e-12

    def test_sup_bound(self, base):
        p = BasePoint([0.0])
        ts = np.linspace(0.0, 200.0, 5000)
        vals = base.coefficient("f").values(advance_many(base, p, ts))
        assert np.abs(vals).max() <= base.coefficient("f").sup_bound() + 1e-12

    def test_independence_warning(self):
        with pytest.warns(UserWarning):
            TorusBase([0.5, 0.25], {})


class TestCoefficientTables:
    def test_matrix_scaled_ids(self, base):
        mc = MatrixCoefficient([[("f", -1.0), 0.5], [[0.1, ("f", 2.0)], "f"]])
        p = BasePoint([0.13])
        f = eval_coeff(base, "f", p)
        val = mc.value(base, p.theta)
        assert val[0, 0] == pytest.approx(-f)
        assert val[0, 1] == pytest.approx(0.5)
        assert val[1, 0] == pytest.approx(0.1 + 2 * f)
        assert val[1, 1] == pytest.approx(f)
        assert mc.bound_abs(base)[1, 0] == pytest.approx(0.1 + 2 * base.coefficient("f").sup_bound())

    def test_vector_stack_matches_scalar(self, base):
        vc = VectorCoefficient(["f", 1.5])
        thetas = advance_many(base, BasePoint([0.4]), np.linspace(0, 5, 17))
        stacked = vc.values(base, thetas)
        for i, th in enumerate(thetas):
            assert np.allclose(stacked[i], vc.value(base, th))

    def test_min_values(self, base):
        vc = VectorCoefficient([[0.5, "f"]])
        assert vc.min_values(base)[0] == pytest.approx(0.5 + 0.05 - 0.4)


class TestReturnTimes:
    def test_periodic_multiples(self):
        b = TorusBase([1.0], {})
        out = return_times(b, BasePoint([0.5]), 1e-3, 0.5, 5.5, 0.001)
        assert [round(t) for t in out] == [1, 2, 3, 4, 5]
        assert all(abs(t - round(t)) < 1e-3 for t in out)

    def test_golden_fibonacci(self):
        b = TorusBase([GOLDEN], {})
        out = return_times(b, BasePoint([0.0]), 0.05, 1.0, 100.0, 0.01)
        assert any(abs(t - 34.0) < 0.2 for t in out)

    def test_wide_delta_accepts_everything(self):
        b = TorusBase([GOLDEN], {})
        step = 0.25
        out = return_times(b, BasePoint([0.0]), 0.55, 0.0, 10.0, step, thin=False)
        assert len(out) == 41  # every sampled time: the torus diameter is 1/2

    def test_empty_not_an_error(self):
        b = TorusBase([GOLDEN], {})
        assert return_times(b, BasePoint([0.0]), 1e-6, 0.1, 0.9, 0.1) == []

"""Neutral operators: convolution images, inversion, stability, integration."""

import math

import numpy as np
import pytest

from fadeflow.baseflow import (
    BasePoint,
    MatrixCoefficient,
    TorusBase,
    TrigCoefficient,
    VectorCoefficient,
)
from fadeflow.fde import FdeModel, integrate
from fadeflow.history import (
    HistoryFunction,
    OrderParams,
    compact_metric,
    constant_history,
    exp_order_le,
    history_from_callable,
    random_cone_element,
    random_history,
)
from fadeflow.neutral import (
    NeutralOperator,
    NfdeModel,
    apply_along_flow,
    apply_operator,
    check_neutral_quasimonotone,
    check_nfde_monotonicity,
    integrate_nfde,
    invert_along_flow,
    kernel_variation,
    neutral_order_le,
    nfde_omega_probe,
    operator_norm_bounds,
    solve_operator_equation,
    stability_constants,
    transform_to_fde,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture
def base():
    return TorusBase(
        [GOLDEN],
        {
            "c": TrigCoefficient([((1,), 0.1, 0.3)], offset=0.3),  # in [0.2, 0.4]
            "inflow": TrigCoefficient([((1,), 0.02, 0.0)], offset=0.05),
        },
    )


@pytest.fixture
def theta0():
    return BasePoint([0.2])


def atom_op(base, c=0.5, r=1.0):
    return NeutralOperator(base=base, dim=1, atoms=((r, MatrixCoefficient([[c]])),))


class TestOperator:
    def test_mass_bound_and_rejection(self, base):
        assert atom_op(base, 0.5).mass_bound() == pytest.approx(0.5)
        with pytest.raises(ValueError):
            atom_op(base, 1.01)
        with pytest.raises(ValueError):
            NeutralOperator(base=base, dim=1, atoms=((0.0, MatrixCoefficient([[0.5]])),))

    def test_apply_examples(self, base, theta0):
        op = atom_op(base)
        x1 = constant_history(1.0, 0.01, 2.0)
        assert apply_operator(op, theta0, x1)[0] == pytest.approx(0.5)
        xs = history_from_callable(lambda s: s, 1, 0.01, 2.0)
        assert apply_operator(op, theta0, xs)[0] == pytest.approx(0.5)

    def test_apply_density_tail(self, base, theta0):
        # unit density mass would break the q < 1 invariant; probe the
        # truncated closed form just inside it
        L, gd = 19.0, 0.999
        op = NeutralOperator(
            base=base, dim=1, density=(1.0, MatrixCoefficient([[gd]]), 0.0)
        )
        x1 = constant_history(1.0, 0.01, L)
        expected = 1.0 - gd * (1.0 - math.exp(-L))
        assert apply_operator(op, theta0, x1)[0] == pytest.approx(expected, abs=1e-5)

    def test_varying_mass_is_sup(self, base):
        op = NeutralOperator(base=base, dim=1, atoms=((1.0, MatrixCoefficient([["c"]])),))
        assert op.mass_bound() == pytest.approx(0.4)


class TestKernelVariation:
    def test_empty_interval(self, base, theta0):
        op = atom_op(base)
        assert kernel_variation(op, theta0, -0.9, -0.1) == 0.0

    def test_atomic_near_zero(self, base, theta0):
        op = atom_op(base)
        assert kernel_variation(op, theta0, -0.5, 0.0) == 0.0

    def test_whole_line_equals_mass(self, base, theta0):
        op = atom_op(base, 0.5)
        assert kernel_variation(op, theta0, -50.0, 0.0) == pytest.approx(0.5, abs=1e-9)
        opd = NeutralOperator(
            base=base,
            dim=1,
            atoms=((1.0, MatrixCoefficient([[0.3]])),),
            density=(2.0, MatrixCoefficient([[0.2]]), 0.0),
        )
        assert kernel_variation(opd, theta0, -60.0, 0.0) == pytest.approx(
            opd.mass_bound(), abs=1e-9
        )


class TestAlongFlow:
    def test_zero(self, base, theta0):
        op = atom_op(base)
        out = apply_along_flow(op, theta0, constant_history(0.0, 0.05, 4.0))
        assert np.abs(out.samples).max() == 0.0

    def test_autonomous_constant(self, base, theta0):
        op = atom_op(base)
        out = apply_along_flow(op, theta0, constant_history(1.0, 0.05, 4.0))
        assert np.abs(out.samples - 0.5).max() <= 1e-12

    def test_norm_bound(self, base, theta0):
        op = NeutralOperator(base=base, dim=1, atoms=((1.0, MatrixCoefficient([["c"]])),))
        rng = np.random.default_rng(0)
        kd = 1.0 + op.mass_bound()
        for _ in range(50):
            x = random_history(rng, 1, 0.05, 4.0, amplitude=rng.uniform(0.1, 3.0))
            assert apply_along_flow(op, theta0, x).sup_norm() <= kd * x.sup_norm() + 1e-12


class TestInversion:
    def test_zero(self, base, theta0):
        op = atom_op(base)
        res = invert_along_flow(op, theta0, constant_history(0.0, 0.05, 4.0))
        assert res.history.sup_norm() == 0.0

    def test_constant_fixed_point(self, base, theta0):
        op = atom_op(base, 0.5)
        res = invert_along_flow(op, theta0, constant_history(1.0, 0.05, 6.0))
        assert np.abs(res.history.samples - 2.0).max() <= 1e-9
        assert res.converged

    def test_round_trip_and_ratio(self, base, theta0):
        rng = np.random.default_rng(5)
        for cq in (0.3, 0.9):
            op = NeutralOperator(
                base=base, dim=1, atoms=((1.0, MatrixCoefficient([[cq]])),)
            )
            bound = 1.0 / (1.0 - cq)
            for _ in range(20):
                h = random_history(rng, 1, 0.05, 6.0)
                res = invert_along_flow(op, theta0, h)
                assert res.residual <= 1e-8
                assert res.history.sup_norm() <= bound * h.sup_norm() + 1e-6

    def test_round_trip_varying_coefficient(self, base, theta0):
        op = NeutralOperator(base=base, dim=1, atoms=((1.0, MatrixCoefficient([["c"]])),))
        rng = np.random.default_rng(6)
        for _ in range(25):
            h = random_history(rng, 1, 0.05, 6.0)
            res = invert_along_flow(op, theta0, h)
            assert res.residual <= 1e-8
            back = apply_along_flow(op, theta0, res.history)
            assert np.abs(back.samples - h.samples).max() <= 1e-8

    def test_injectivity_recovery(self, base, theta0):
        op = NeutralOperator(base=base, dim=1, atoms=((1.0, MatrixCoefficient([["c"]])),))
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = random_history(rng, 1, 0.05, 6.0)
            h = apply_along_flow(op, theta0, x)
            res = invert_along_flow(op, theta0, h)
            assert np.abs(res.history.samples - x.samples).max() <= 1e-8

    def test_linearity(self, base, theta0):
        op = atom_op(base, 0.5)
        rng = np.random.default_rng(8)
        xa = random_history(rng, 1, 0.05, 4.0)
        xb = random_history(rng, 1, 0.05, 4.0)
        a, b = 0.6, -1.7
        combo = HistoryFunction(0.05, a * xa.samples + b * xb.samples)
        img = apply_along_flow(op, theta0, combo)
        img_ab = a * apply_along_flow(op, theta0, xa).samples + b * apply_along_flow(
            op, theta0, xb
        ).samples
        assert np.abs(img.samples - img_ab).max() <= 1e-10
        inv = invert_along_flow(op, theta0, combo, tol_fix=1e-13).history
        inv_ab = a * invert_along_flow(op, theta0, xa, tol_fix=1e-13).history.samples + (
            b * invert_along_flow(op, theta0, xb, tol_fix=1e-13).history.samples
        )
        assert np.abs(inv.samples - inv_ab).max() <= 1e-10

    def test_deep_tail_influence(self, base, theta0):
        # perturbations below -n move both images on [-n/2, 0] by at most the
        # chained kernel mass
        op = NeutralOperator(
            base=base,
            dim=1,
            atoms=((1.0, MatrixCoefficient([[0.4]])),),
            density=(1.0, MatrixCoefficient([[0.1]]), 0.0),
        )
        q = op.mass_bound()
        n_depth = 8.0
        step, depth = 0.05, 20.0
        x = random_history(np.random.default_rng(9), 1, step, depth)
        times = x.times
        bump = 0.7 * np.clip(-(times + n_depth), 0.0, 1.0)
        xp = HistoryFunction(step, x.samples + bump[:, None])
        scale = 0.7 * (1.0 + q) / (1.0 - q)
        bound = q ** (n_depth / 2.0) * scale  # r_max = 1
        keep = times >= -n_depth / 2.0
        d_img = np.abs(
            apply_along_flow(op, theta0, xp).samples - apply_along_flow(op, theta0, x).samples
        )[keep].max()
        d_inv = np.abs(
            invert_along_flow(op, theta0, xp).history.samples
            - invert_along_flow(op, theta0, x).history.samples
        )[keep].max()
        assert d_img <= bound
        assert d_inv <= bound

    def test_max_iter_reports_residual(self, base, theta0):
        op = atom_op(base, 0.9)
        res = invert_along_flow(op, theta0, constant_history(1.0, 0.05, 4.0), max_iter=10)
        assert not res.converged
        assert res.residual > 1e-10  # honest report, no exception


class TestOperatorEquation:
    def test_constant_solution(self, base, theta0):
        op = atom_op(base, 0.5)
        phi = constant_history(2.0, 0.01, 2.0)
        times, heads = solve_operator_equation(op, theta0, phi, lambda t: 1.0, 5.0)
        assert np.abs(heads - 2.0).max() <= 1e-12

    def test_zero(self, base, theta0):
        op = atom_op(base, 0.5)
        phi = constant_history(0.0, 0.01, 2.0)
        _, heads = solve_operator_equation(op, theta0, phi, lambda t: 0.0, 3.0)
        assert np.abs(heads).max() == 0.0

    def test_incompatible_data(self, base, theta0):
        op = atom_op(base, 0.5)
        with pytest.raises(ValueError):
            solve_operator_equation(op, theta0, constant_history(2.0, 0.01, 2.0), lambda t: 0.0, 1.0)

    def test_homogeneous_geometric_decay(self, base, theta0):
        q, r = 0.5, 1.0
        op = atom_op(base, q, r)
        rng = np.random.default_rng(11)
        for _ in range(10):
            phi = random_history(rng, 1, 0.01, 3.0)
            samples = phi.samples.copy()
            samples[-1] = q * phi.eval(-r)  # compatibility D(theta, phi) = 0
            phi = HistoryFunction(0.01, samples)
            _, heads = solve_operator_equation(op, theta0, phi, lambda t: 0.0, 10.0)
            sup_phi = phi.sup_norm()
            for n in range(1, 11):
                k = round(n * r / 0.01)
                assert abs(heads[k][0]) <= q ** n * (1.0 + 1e-6) * sup_phi


class TestStabilityConstants:
    def test_half_mass(self, base):
        op = atom_op(base, 0.5)
        sc = stability_constants(op, 0.02, 4.0, n_samples=10, seed=1)
        assert sc.k_bound == pytest.approx(2.0)
        assert sc.k_emp <= 2.0 + 1e-9
        assert sc.decays
        # envelope at multiples of the delay obeys the geometric bound
        for n in (1, 3, 5):
            k = round(n * 1.0 / 0.02)
            assert sc.c_profile[k] <= 0.5 ** n * (1.0 + 1e-6)

    def test_evaluation_operator(self, base):
        op = NeutralOperator(base=base, dim=1)  # no delayed part at all
        sc = stability_constants(op, 0.05, 2.0, n_samples=5, seed=2)
        assert sc.k_bound == pytest.approx(1.0)
        assert sc.k_emp <= 1.0 + 1e-12
        assert max(sc.c_profile[1:]) == 0.0  # homogeneous solution dies instantly
        assert sc.decays


class TestNormBounds:
    def test_degenerate(self, base):
        op = NeutralOperator(base=base, dim=1)
        nb = operator_norm_bounds(op, 0.05, 2.0, n_samples=50)
        assert nb.k_d == pytest.approx(1.0)
        assert nb.k_d_prime == pytest.approx(1.0)

    def test_half_mass_alignment(self, base):
        op = atom_op(base, 0.5)
        nb = operator_norm_bounds(op, 0.05, 4.0, n_samples=1000, seed=3)
        assert nb.k_d == pytest.approx(1.5)
        assert nb.k_d_prime == pytest.approx(2.0)
        assert nb.emp_k_d <= nb.k_d + 1e-9
        assert nb.emp_k_d_prime <= nb.k_d_prime + 1e-6


class TestTransformedOrder:
    def test_reflexive(self, base, theta0):
        op = atom_op(base, 0.5)
        x = random_history(np.random.default_rng(0), 1, 0.05, 4.0)
        order = OrderParams([-1.0])
        assert neutral_order_le(op, theta0, x, x, order)

    def test_degenerate_operator_matches_plain_order(self, base, theta0):
        op = NeutralOperator(base=base, dim=1)
        order = OrderParams([-1.0])
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = random_history(rng, 1, 0.05, 4.0)
            y = random_history(rng, 1, 0.05, 4.0)
            assert neutral_order_le(op, theta0, x, y, order) == exp_order_le(x, y, order)

    def test_cone_pushforward(self, base, theta0):
        op = atom_op(base, 0.5)
        order = OrderParams([-1.0])
        rng = np.random.default_rng(2)
        x = random_history(rng, 1, 0.05, 6.0)
        e = random_cone_element(rng, order, 0.05, 6.0, scale=0.5)
        y = invert_along_flow(
            op, theta0, apply_along_flow(op, theta0, x) + e, tol_fix=1e-13
        ).history
        assert neutral_order_le(op, theta0, x, y, order)


def admissible_scalar_nfde(base, step=0.01, depth=16.0):
    """Atom mass 0.3 at delay 1, loss 0.01, order rate 0.02: the quasimonotone
    inequality holds with margin (rate bound a >= g / (1 - c exp(a)))."""
    op = NeutralOperator(base=base, dim=1, atoms=((1.0, MatrixCoefficient([[0.3]])),))
    g = FdeModel(
        base=base,
        dim=1,
        step=step,
        depth=depth,
        order=OrderParams([-0.02]),
        linear_inst=MatrixCoefficient([[-0.01]]),
        forcing=VectorCoefficient(["inflow"]),
    )
    return NfdeModel(operator=op, g=g)


def violating_scalar_nfde(base, step=0.01, depth=8.0):
    op = NeutralOperator(base=base, dim=1, atoms=((1.0, MatrixCoefficient([[0.5]])),))
    g = FdeModel(
        base=base,
        dim=1,
        step=step,
        depth=depth,
        order=OrderParams([-0.5]),
        linear_inst=MatrixCoefficient([[-0.5]]),
    )
    return NfdeModel(operator=op, g=g)


class TestNeutralQuasimonotone:
    def test_identical_pair_zero_margin(self, base, theta0):
        model = admissible_scalar_nfde(base, step=0.05)
        rep = check_neutral_quasimonotone(model, seed=0, n_pairs=20)
        assert rep.passed
        assert rep.min_margin >= -model.order.tol

    def test_counterexample(self, base):
        model = violating_scalar_nfde(base, step=0.05)
        rep = check_neutral_quasimonotone(model, seed=0, n_pairs=20)
        assert not rep.passed
        assert rep.min_margin < -1e-3


class TestTransform:
    def test_identity_operator_is_g(self, base, theta0):
        op = NeutralOperator(base=base, dim=1)
        g = FdeModel(
            base=base,
            dim=1,
            step=0.05,
            depth=4.0,
            order=OrderParams([-1.0]),
            linear_inst=MatrixCoefficient([[-0.4]]),
            delay_terms=((1.0, MatrixCoefficient([[0.2]])),),
            forcing=VectorCoefficient(["inflow"]),
        )
        model = NfdeModel(operator=op, g=g)
        tf = transform_to_fde(model)
        rng = np.random.default_rng(3)
        from fadeflow.fde import eval_rhs

        for _ in range(10):
            y = random_history(rng, 1, 0.05, 4.0)
            assert np.allclose(tf.rhs(theta0, y), eval_rhs(g, theta0, y), atol=1e-12)

    def test_constant_inversion_closed_form(self, base, theta0):
        model = admissible_scalar_nfde(base, step=0.05, depth=16.0)
        tf = transform_to_fde(model)
        k = 0.8
        y = constant_history(k, 0.05, 16.0)
        from fadeflow.neutral import eval_g

        expected = eval_g(model, theta0, constant_history(k / (1.0 - 0.3), 0.05, 16.0))
        assert np.allclose(tf.rhs(theta0, y), expected, atol=1e-9)


class TestIntegrateNfde:
    def test_conservation(self, base, theta0):
        op = NeutralOperator(base=base, dim=1, atoms=((1.0, MatrixCoefficient([["c"]])),))
        g = FdeModel(base=base, dim=1, step=0.01, depth=16.0, order=OrderParams([-1.0]))
        model = NfdeModel(operator=op, g=g)
        x0 = history_from_callable(lambda s: 1.0 + 0.3 * math.cos(s), 1, 0.01, 16.0)
        tr = integrate_nfde(model, theta0, x0, 50.0)
        assert np.abs(tr.operator_heads - tr.operator_heads[0]).max() <= 1e-10
        assert tr.cross_check_error <= 1e-10

    def test_scalar_equilibrium(self, base, theta0):
        # G = -D + 0.5: the operator trace solves w' = -w + 0.5, the state
        # recovers the constant 1
        op = atom_op(base, 0.5)
        g = FdeModel(
            base=base,
            dim=1,
            step=0.01,
            depth=28.0,
            order=OrderParams([-0.5]),
            linear_inst=MatrixCoefficient([[-1.0]]),
            delay_terms=((1.0, MatrixCoefficient([[0.5]])),),
            forcing=VectorCoefficient([0.5]),
        )
        model = NfdeModel(operator=op, g=g)
        tr = integrate_nfde(model, theta0, constant_history(0.2, 0.01, 28.0), 40.0)
        assert abs(tr.operator_heads[-1][0] - 0.5) <= 1e-6
        assert abs(tr.head_at(40.0)[0] - 1.0) <= 1e-6
        # w solves the plain decay equation towards 0.5
        w_exact = 0.5 + (tr.operator_heads[0][0] - 0.5) * math.exp(-10.0)
        assert abs(tr.operator_heads[1000][0] - w_exact) <= 1e-8

    def test_pipeline_equivalence_scalar(self, base, theta0):
        model = admissible_scalar_nfde(base)
        x0 = history_from_callable(lambda s: 0.6 + 0.2 * math.cos(0.7 * s), 1, 0.01, 16.0)
        direct = integrate_nfde(model, theta0, x0, 5.0)
        tf = transform_to_fde(model)
        hat0 = apply_along_flow(model.operator, theta0, x0)
        hat_run = tf.integrate(theta0, hat0, 5.0)
        assert np.abs(hat_run.heads - direct.operator_heads).max() <= 1e-6
        # recovered heads match; window bottoms only agree up to the
        # q-weighted tail-seeding error of the inversion
        z_rec = tf.recover(
            BasePoint(np.mod(theta0.theta + base.freq * 5.0, 1.0)), hat_run.snapshot(5.0)
        )
        assert abs(z_rec.samples[-1][0] - direct.head_at(5.0)[0]) <= 1e-6
        keep = z_rec.times >= -8.0  # tail influence 0.3^8 of the state scale
        assert np.abs(z_rec.samples - direct.snapshot(5.0).samples)[keep].max() <= 1e-4

    def test_density_pipeline(self, base, theta0):
        # operator with an exponential density: dual-history against the
        # transformed pipeline at quadrature tolerance
        op = NeutralOperator(
            base=base,
            dim=1,
            atoms=((1.0, MatrixCoefficient([[0.25]])),),
            density=(1.0, MatrixCoefficient([[0.15]]), 0.0),
        )
        g = FdeModel(
            base=base,
            dim=1,
            step=0.02,
            depth=20.0,
            order=OrderParams([-0.5]),
            linear_inst=MatrixCoefficient([[-0.3]]),
            forcing=VectorCoefficient([0.1]),
        )
        model = NfdeModel(operator=op, g=g)
        x0 = constant_history(0.4, 0.02, 20.0)
        direct = integrate_nfde(model, theta0, x0, 3.0)
        assert direct.cross_check_error <= 1e-10
        tf = transform_to_fde(model)
        hat0 = apply_along_flow(op, theta0, x0)
        hat_run = tf.integrate(theta0, hat0, 3.0)
        assert np.abs(hat_run.heads - direct.operator_heads).max() <= 1e-5

    def test_fading_memory_right_side(self, base, theta0):
        # neutral model whose right side carries a distributed term: the
        # equilibrium solves the closed-form balance and the two pipelines
        # agree at quadrature tolerance
        op = atom_op(base, 0.3)
        g = FdeModel(
            base=base,
            dim=1,
            step=0.01,
            depth=19.0,
            order=OrderParams([-0.5]),
            linear_inst=MatrixCoefficient([[-1.0]]),
            dist_terms=((1.0, MatrixCoefficient([[0.5]])),),
            forcing=VectorCoefficient([0.45]),
        )
        model = NfdeModel(operator=op, g=g)
        x0 = constant_history(0.2, 0.01, 19.0)
        tr = integrate_nfde(model, theta0, x0, 60.0)
        assert abs(tr.head_at(60.0)[0] - 0.9) <= 1e-5  # 0.45 / (1 - 0.5)
        assert abs(tr.operator_heads[-1][0] - 0.63) <= 1e-5  # (1 - 0.3) * 0.9
        tf = transform_to_fde(model)
        hat_run = tf.integrate(theta0, apply_along_flow(op, theta0, x0), 3.0)
        assert np.abs(hat_run.heads - tr.operator_heads[:301]).max() <= 1e-4

    def test_csv_has_operator_columns(self, base, theta0):
        import io

        model = admissible_scalar_nfde(base, step=0.05)
        tr = integrate_nfde(model, theta0, constant_history(0.3, 0.05, 16.0), 1.0)
        buf = io.StringIO()
        tr.write_csv(buf)
        header = buf.getvalue().splitlines()[0]
        assert header == "t,theta_1,z_1,w_1"


class TestNfdeMonotonicity:
    def test_identical(self, base, theta0):
        model = admissible_scalar_nfde(base, step=0.05)
        x0 = constant_history(0.5, 0.05, 16.0)
        rep = check_nfde_monotonicity(model, theta0, x0, x0, 5.0)
        assert rep.passed

    def test_admissible_pair(self, base, theta0):
        model = admissible_scalar_nfde(base, step=0.02)
        rng = np.random.default_rng(4)
        x0 = random_history(rng, 1, model.step, model.depth, amplitude=0.5)
        e = random_cone_element(rng, model.order, model.step, model.depth, scale=0.5)
        y0 = invert_along_flow(
            model.operator, theta0, apply_along_flow(model.operator, theta0, x0) + e, tol_fix=1e-13
        ).history
        rep = check_nfde_monotonicity(model, theta0, x0, y0, 30.0)
        assert rep.passed

    def test_violation(self, base, theta0):
        model = violating_scalar_nfde(base, step=0.02)
        rng = np.random.default_rng(5)
        x0 = constant_history(0.0, model.step, model.depth)
        e = random_cone_element(rng, model.order, model.step, model.depth, scale=1.0)
        e = e.shift_values([0.2])
        y0 = invert_along_flow(
            model.operator, theta0, apply_along_flow(model.operator, theta0, x0) + e, tol_fix=1e-13
        ).history
        rep = check_nfde_monotonicity(model, theta0, x0, y0, 10.0)
        assert not rep.passed
        assert rep.first_violation is not None and rep.first_violation > 0.0


class TestNfdeOmegaProbe:
    def test_stable_autonomous(self, base, theta0):
        op = atom_op(base, 0.3)
        g = FdeModel(
            base=base,
            dim=1,
            step=0.01,
            depth=16.0,
            order=OrderParams([-0.1]),
            linear_inst=MatrixCoefficient([[-0.3]]),
            forcing=VectorCoefficient([0.15]),
        )
        model = NfdeModel(operator=op, g=g)
        x0 = constant_history(1.2, 0.01, 16.0)
        rep = nfde_omega_probe(
            model, theta0, x0, transients=[10.0, 30.0], t_max=80.0, delta_base=0.05
        )
        assert rep.original.monotone and rep.hat.monotone
        assert rep.original.pair_entries[-1].max_distance < 1e-3
        assert rep.passed
        assert rep.regularity_hat is not None and rep.regularity_hat.sup_var < math.inf

    def test_degenerate_operator_reports_match(self, base, theta0):
        op = NeutralOperator(base=base, dim=1)
        g = FdeModel(
            base=base,
            dim=1,
            step=0.01,
            depth=4.0,
            order=OrderParams([-0.3]),
            linear_inst=MatrixCoefficient([[-0.3]]),
            forcing=VectorCoefficient([0.1]),
        )
        model = NfdeModel(operator=op, g=g)
        x0 = constant_history(0.8, 0.01, 4.0)
        rep = nfde_omega_probe(
            model, theta0, x0, transients=[10.0, 30.0], t_max=90.0, delta_base=0.05
        )
        for eo, eh in zip(rep.original.pair_entries, rep.hat.pair_entries):
            assert eo.max_distance == pytest.approx(eh.max_distance, abs=1e-15)

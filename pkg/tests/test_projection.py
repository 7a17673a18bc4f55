"""Projection onto the box/hyperplane intersection and its HS-Jacobian."""

import numpy as np
import pytest

from ssnal import (
    BoxLineSet,
    InfeasibleProblemError,
    InputError,
    breakpoints,
    grad_phi,
    hs_jacobian_apply,
    project_box_line,
)

from conftest import dense_hs_jacobian_p0, project_bisection_oracle, random_box_line


def unit_square_line():
    return BoxLineSet(a=np.ones(2), d=1.0, l=np.zeros(2), u=np.ones(2))


class TestBoxLineSet:
    def test_rejects_inverted_box(self):
        with pytest.raises(InputError):
            BoxLineSet(a=np.ones(2), d=0.0, l=np.ones(2), u=np.zeros(2))

    def test_rejects_unattainable_rhs(self):
        with pytest.raises(InfeasibleProblemError):
            BoxLineSet(a=np.ones(2), d=5.0, l=np.zeros(2), u=np.ones(2))

    def test_boundary_rhs_is_feasible(self):
        BoxLineSet(a=np.ones(2), d=2.0, l=np.zeros(2), u=np.ones(2))


class TestGradPhi:
    def test_hand_values(self):
        s = unit_square_line()
        v = np.array([0.9, 0.8])
        assert grad_phi(0.0, v, s) == pytest.approx(-0.7)
        assert grad_phi(0.35, v, s) == pytest.approx(0.0, abs=1e-15)
        # saturation at the lower bounds for large lambda
        assert grad_phi(1e9, v, s) == pytest.approx(1.0)

    def test_monotone_in_lambda(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            s = random_box_line(rng, 12)
            v = rng.standard_normal(12) * 2
            lams = np.sort(rng.standard_normal(10) * 5)
            vals = [grad_phi(t, v, s) for t in lams]
            assert all(vals[i] <= vals[i + 1] + 1e-12 for i in range(len(vals) - 1))

    def test_range_interval(self):
        # values stay inside [d - sum_{a>0} u|a| + sum_{a<0} l|a|, ...] from
        # the saturation profiles at +-infinity.
        rng = np.random.default_rng(4)
        for _ in range(30):
            s = random_box_line(rng, 10)
            pos, neg = s.a > 0, s.a < 0
            lo = s.d - float(np.sum(s.u[pos] * s.a[pos]) + np.sum(s.l[neg] * s.a[neg]))
            hi = s.d - float(np.sum(s.l[pos] * s.a[pos]) + np.sum(s.u[neg] * s.a[neg]))
            for lam in rng.standard_normal(8) * 100:
                val = grad_phi(lam, rng.standard_normal(10), s)
                assert lo - 1e-10 <= val <= hi + 1e-10


class TestBreakpoints:
    def test_single_coordinate(self):
        s = BoxLineSet(a=np.ones(1), d=0.5, l=np.zeros(1), u=np.ones(1))
        np.testing.assert_allclose(breakpoints(np.array([2.0]), s), [1.0, 2.0])

    def test_zero_a_contributes_none(self):
        s = BoxLineSet(a=np.zeros(3), d=0.0, l=np.zeros(3), u=np.ones(3))
        assert breakpoints(np.array([0.3, 0.7, 2.0]), s).size == 0

    def test_two_coordinates(self):
        s = unit_square_line()
        np.testing.assert_allclose(
            breakpoints(np.array([2.0, 0.0]), s), [-1.0, 0.0, 1.0, 2.0]
        )


class TestProjectBoxLine:
    def test_already_feasible(self):
        r = project_box_line(np.array([0.5, 0.5]), unit_square_line())
        np.testing.assert_allclose(r.x, [0.5, 0.5])
        assert r.lambda_hat == pytest.approx(0.0, abs=1e-14)

    def test_corner_solution(self):
        # 1-D reduction: minimize (x1-2)^2 + (1-x1)^2 over x1 in [0,1] -> x1=1
        r = project_box_line(np.array([2.0, 0.0]), unit_square_line())
        np.testing.assert_allclose(r.x, [1.0, 0.0], atol=1e-14)

    def test_interior_multiplier(self):
        r = project_box_line(np.array([0.9, 0.8]), unit_square_line())
        np.testing.assert_allclose(r.x, [0.55, 0.45], atol=1e-14)
        assert r.lambda_hat == pytest.approx(0.35)
        assert r.active_mask.p == 2

    def test_all_zero_a(self):
        s = BoxLineSet(a=np.zeros(3), d=0.0, l=np.zeros(3), u=np.ones(3))
        r = project_box_line(np.array([-1.0, 0.5, 9.0]), s)
        np.testing.assert_allclose(r.x, [0.0, 0.5, 1.0])

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(7)
        for k in range(300):
            n = int(rng.integers(1, 40))
            s = random_box_line(rng, n)
            v = rng.standard_normal(n) * rng.choice([0.5, 2.0, 10.0])
            r = project_box_line(v, s)
            x_ref, _ = project_bisection_oracle(v, s)
            assert np.linalg.norm(r.x - x_ref) <= 1e-9
            # feasibility at the stated tolerances
            assert np.all(r.x >= s.l - 1e-12) and np.all(r.x <= s.u + 1e-12)
            assert abs(s.a.dot(r.x) - s.d) <= 1e-10 * (1.0 + abs(s.d))

    def test_multiplier_reproduces_x(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(2, 30))
            s = random_box_line(rng, n)
            v = rng.standard_normal(n) * 3
            r = project_box_line(v, s)
            np.testing.assert_allclose(
                r.x, np.clip(v - r.lambda_hat * s.a, s.l, s.u), rtol=0, atol=0
            )

    def test_nonexpansive(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            n = int(rng.integers(2, 25))
            s = random_box_line(rng, n)
            v1 = rng.standard_normal(n) * 2
            v2 = rng.standard_normal(n) * 2
            d_in = np.linalg.norm(v1 - v2)
            d_out = np.linalg.norm(
                project_box_line(v1, s).x - project_box_line(v2, s).x
            )
            assert d_out <= d_in + 1e-10

    def test_idempotent(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(2, 25))
            s = random_box_line(rng, n)
            x1 = project_box_line(rng.standard_normal(n) * 2, s).x
            x2 = project_box_line(x1, s).x
            assert np.linalg.norm(x1 - x2) <= 1e-10

    def test_flat_multiplier_interval_gives_same_point(self):
        # v = (2, -1): both coordinates saturate for every lam in [-1, 1], so
        # grad_phi vanishes on that whole interval; the projection must be the
        # same no matter which multiplier in the flat bracket is reported.
        s = unit_square_line()
        v = np.array([2.0, -1.0])
        r = project_box_line(v, s)
        np.testing.assert_allclose(r.x, [1.0, 0.0], atol=1e-14)
        assert -1.0 - 1e-12 <= r.lambda_hat <= 1.0 + 1e-12
        for lam in np.linspace(-1.0, 1.0, 9):
            assert grad_phi(lam, v, s) == 0.0
            np.testing.assert_allclose(np.clip(v - lam * s.a, s.l, s.u), r.x)

    def test_duplicate_breakpoints(self):
        # identical coordinates create duplicated breakpoints
        s = BoxLineSet(a=np.ones(4), d=1.0, l=np.zeros(4), u=np.ones(4))
        v = np.array([0.6, 0.6, 0.6, 0.6])
        r = project_box_line(v, s)
        np.testing.assert_allclose(r.x, np.full(4, 0.25), atol=1e-14)

    def test_wrong_length_input(self):
        with pytest.raises(InputError):
            project_box_line(np.zeros(3), unit_square_line())


class TestHsJacobian:
    def test_all_active_gives_zero(self):
        s = unit_square_line()
        r = project_box_line(np.array([5.0, -5.0]), s)
        assert r.active_mask.p == 0
        np.testing.assert_allclose(
            hs_jacobian_apply(r.active_mask, s.a, np.array([1.0, 2.0])), [0.0, 0.0]
        )

    def test_free_pair(self):
        r = project_box_line(np.array([0.9, 0.8]), unit_square_line())
        out = hs_jacobian_apply(r.active_mask, np.ones(2), np.array([1.0, 0.0]))
        np.testing.assert_allclose(out, [0.5, -0.5])

    def test_annihilates_a(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            n = int(rng.integers(2, 30))
            s = random_box_line(rng, n, zero_a_prob=0.0)
            r = project_box_line(rng.standard_normal(n) * 2, s)
            mask = r.active_mask
            if mask.p == 0:
                continue
            out = hs_jacobian_apply(mask, s.a, s.a)
            assert np.linalg.norm(out) <= 1e-14 * (1 + np.linalg.norm(s.a))

    def test_symmetric_idempotent_projector(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            n = int(rng.integers(2, 200))
            s = random_box_line(rng, n)
            r = project_box_line(rng.standard_normal(n) * 2, s)
            mask = r.active_mask
            y1 = rng.standard_normal(n)
            y2 = rng.standard_normal(n)
            py1 = hs_jacobian_apply(mask, s.a, y1)
            py2 = hs_jacobian_apply(mask, s.a, y2)
            # symmetry via inner products
            assert abs(y2.dot(py1) - y1.dot(py2)) <= 1e-12 * (
                1 + np.linalg.norm(y1) * np.linalg.norm(y2)
            )
            # idempotency
            ppy1 = hs_jacobian_apply(mask, s.a, py1)
            assert np.linalg.norm(ppy1 - py1) <= 1e-12 * max(np.linalg.norm(y1), 1.0)

    def test_fixes_feasible_directions(self):
        # P h = h for h supported on the free set with a'h = 0
        rng = np.random.default_rng(31)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            s = random_box_line(rng, n, zero_a_prob=0.0)
            r = project_box_line(rng.standard_normal(n), s)
            mask = r.active_mask
            if mask.p < 2:
                continue
            h = np.zeros(n)
            h[mask.free] = rng.standard_normal(mask.p)
            af = s.a[mask.free]
            h[mask.free] -= af * (af.dot(h[mask.free]) / af.dot(af))
            out = hs_jacobian_apply(mask, s.a, h)
            assert np.linalg.norm(out - h) <= 1e-12 * (1 + np.linalg.norm(h))

    def test_matches_dense_pseudo_inverse(self):
        rng = np.random.default_rng(37)
        for _ in range(60):
            n = int(rng.integers(2, 13))
            s = random_box_line(rng, n, zero_a_prob=0.0)
            r = project_box_line(rng.standard_normal(n) * 2, s)
            mask = r.active_mask
            p0 = dense_hs_jacobian_p0(mask, s.a)
            for _ in range(3):
                y = rng.standard_normal(n)
                np.testing.assert_allclose(
                    hs_jacobian_apply(mask, s.a, y), p0 @ y, atol=1e-10
                )

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tightpath.errors import CertificationError, DomainError, ExpressionError
from tightpath.geometry import (
    ConstraintField,
    PerturbationProfile,
    boundary_points,
    build_boundary_modulus,
    certify_regular_perturbation,
    check_tightening,
    compile_expression,
    dist_to_boundary,
    dist_to_set,
    field_from_config,
    unit_ball_complement,
    violation_sup,
)
from tightpath.signals import TimeGrid, Trajectory


def circle_projection_oracle(x, radius, n_angles=200_000):
    # Dense parametrization of the circle, brute-force nearest point.
    angles = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    boundary = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    return float(np.linalg.norm(boundary - x, axis=1).min())


class TestUnitBallComplement:
    def test_membership_and_margin(self):
        field = unit_ball_complement(dim=1)
        # Inside the tightened set: |x| >= 1 + eps.
        assert field.contains(0.0, np.array([1.3]), eps=0.1)
        assert not field.contains(0.0, np.array([1.05]), eps=0.1)
        assert field.margin(0.0, np.array([1.3]), eps=0.1) == pytest.approx(0.2)
        assert field.margin(0.0, np.array([-1.3]), eps=0.1) == pytest.approx(0.2)

    def test_set_and_boundary_distances(self):
        field = unit_ball_complement(dim=1)
        # Feasible point: set distance 0, boundary distance |x| - (1+eps).
        assert dist_to_set(field, 0.0, 0.0, np.array([2.0])) == 0.0
        assert dist_to_boundary(field, 0.1, 0.0, np.array([2.0])) == pytest.approx(0.9)
        # Center of the excluded ball: both distances reach the sphere.
        assert dist_to_set(field, 0.1, 0.0, np.array([0.0])) == pytest.approx(1.1)
        assert dist_to_boundary(field, 0.0, 0.0, np.array([1.0])) == 0.0
        # Infeasible shell point.
        assert dist_to_set(field, 0.1, 0.0, np.array([0.9])) == pytest.approx(0.2)

    def test_2d_distance_against_projection_oracle(self):
        field = unit_ball_complement(dim=2)
        x = np.array([1.7, 0.4])
        want = circle_projection_oracle(x, 1.1)
        assert dist_to_boundary(field, 0.1, 0.0, x) == pytest.approx(want, abs=1e-4)

    @given(r=st.floats(0.2, 1.9), eps=st.floats(0.0, 0.5))
    @settings(max_examples=50, deadline=None)
    def test_margin_is_boundary_distance_inside(self, r, eps):
        field = unit_ball_complement(dim=1)
        x = np.array([r])
        margin = field.margin(0.0, x, eps)
        if margin >= 0:
            assert dist_to_boundary(field, eps, 0.0, x) == pytest.approx(margin, abs=1e-12)
            assert dist_to_set(field, eps, 0.0, x) == 0.0

    @given(r=st.floats(0.0, 1.9), pair=st.tuples(st.floats(0.01, 0.5), st.floats(0.01, 0.5)))
    @settings(max_examples=50, deadline=None)
    def test_set_distance_monotone_in_eps(self, r, pair):
        lo, hi = sorted(pair)
        field = unit_ball_complement(dim=1)
        x = np.array([r])
        assert dist_to_set(field, lo, 0.0, x) <= dist_to_set(field, hi, 0.0, x) + 1e-12


class TestExpressions:
    def test_matches_builtin(self):
        h = compile_expression("1 - abs(x1)", dim=1)
        field = unit_ball_complement(dim=1)
        for r in (-1.7, -0.2, 0.0, 0.4, 1.05, 1.9):
            assert h(0.3, np.array([r])) == pytest.approx(field.value(0.3, np.array([r])))

    def test_vectorized_and_time_dependent(self):
        h = compile_expression("1 + 0.1 * t - sqrt(x1 * x1 + x2 * x2)", dim=2)
        pts = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        got = h(2.0, pts)
        want = 1.2 - np.array([1.0, 2.0, np.sqrt(2.0)])
        assert got == pytest.approx(want)

    def test_whitelisted_functions(self):
        h = compile_expression("sin(t) + cos(x1) + arctan(x1) + pow(x1, 2) / 2", dim=1)
        x = np.array([0.5])
        want = np.sin(1.0) + np.cos(0.5) + np.arctan(0.5) + 0.125
        assert h(1.0, x) == pytest.approx(want)

    @pytest.mark.parametrize(
        "bad",
        [
            "__import__('os').system('true')",
            "x1.real",
            "exp(x1)",
            "x3",
            "[v for v in (1,)][0]",
            "lambda: 1",
            "x1 if t > 0 else 0",
        ],
    )
    def test_rejects_unsafe_or_unknown(self, bad):
        with pytest.raises(ExpressionError):
            compile_expression(bad, dim=2)


class TestNumericDistance:
    def test_1d_matches_analytic(self):
        # Same set, no analytic hook: the lattice fallback must agree.
        numeric = ConstraintField(
            components=(compile_expression("1 - abs(x1)", dim=1),),
            sampling_box=np.array([[-2.0, 2.0]]),
        )
        analytic = unit_ball_complement(dim=1)
        res = numeric.resolution
        for r in (1.8, 1.2, 1.11, 0.3, -1.5):
            x = np.array([r])
            assert abs(
                dist_to_boundary(numeric, 0.1, 0.0, x) - dist_to_boundary(analytic, 0.1, 0.0, x)
            ) <= 2 * res
            assert abs(
                dist_to_set(numeric, 0.1, 0.0, x) - dist_to_set(analytic, 0.1, 0.0, x)
            ) <= 2 * res

    def test_2d_against_projection_oracle(self):
        numeric = ConstraintField(
            components=(compile_expression("1 - sqrt(x1 * x1 + x2 * x2)", dim=2),),
            sampling_box=np.array([[-2.0, 2.0], [-2.0, 2.0]]),
        )
        rng = np.random.default_rng(42)
        res = numeric.resolution
        probes = rng.uniform(-1.9, 1.9, size=(50, 2))
        for x in probes:
            got = dist_to_boundary(numeric, 0.05, 0.0, x)
            want = circle_projection_oracle(x, 1.05, n_angles=40_000)
            assert abs(got - want) <= 2 * res

    def test_halfplane_frozen_value(self):
        # h = x1 + x2 - 0.5 <= -eps keeps x1 + x2 <= 0.3; from (1, 1) the
        # distance to that halfplane is (2 - 0.3) / sqrt(2).
        halfplane = ConstraintField(
            components=(compile_expression("x1 + x2 - 0.5", dim=2),),
            sampling_box=np.array([[-2.0, 2.0], [-2.0, 2.0]]),
        )
        got = dist_to_set(halfplane, 0.2, 0.0, np.array([1.0, 1.0]))
        assert got == pytest.approx(1.7 / np.sqrt(2.0), abs=2 * halfplane.resolution)

    def test_two_component_slab(self):
        # max(x - 1, -x - 1) + eps <= 0 keeps |x| <= 1 - eps.
        slab = ConstraintField(
            components=(
                compile_expression("x1 - 1", dim=1),
                compile_expression("0 - x1 - 1", dim=1),
            ),
            sampling_box=np.array([[-2.0, 2.0]]),
        )
        assert slab.contains(0.0, np.array([0.85]), eps=0.1)
        assert not slab.contains(0.0, np.array([0.95]), eps=0.1)
        got = dist_to_boundary(slab, 0.1, 0.0, np.array([0.0]))
        assert abs(got - 0.9) <= 2 * slab.resolution

    def test_boundary_points_on_sphere(self):
        numeric = ConstraintField(
            components=(compile_expression("1 - sqrt(x1 * x1 + x2 * x2)", dim=2),),
            sampling_box=np.array([[-2.0, 2.0], [-2.0, 2.0]]),
        )
        pts = boundary_points(numeric, 0.0, eps=0.2)
        radii = np.linalg.norm(pts, axis=1)
        assert np.all(np.abs(radii - 1.2) <= 2 * numeric.resolution)

    def test_all_feasible_box_has_far_boundary(self):
        # Feasible everywhere in the box: set distance 0, boundary out of
        # reach.
        always = ConstraintField(
            components=(compile_expression("0 - 10 - x1 * 0", dim=1),),
            sampling_box=np.array([[-2.0, 2.0]]),
        )
        assert dist_to_set(always, 0.1, 0.0, np.array([0.5])) == 0.0
        assert dist_to_boundary(always, 0.1, 0.0, np.array([0.5])) == np.inf

    def test_empty_boundary_raises(self):
        field = unit_ball_complement(dim=1)
        with pytest.raises(DomainError):
            boundary_points(field, 0.0, eps=5.0)


class TestViolationSup:
    def test_feasible_trajectory_scores_zero(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 2.0, 40)
        traj = Trajectory(grid, np.full((41, 1), 1.5))
        assert violation_sup(field, 0.1, traj) == 0.0

    def test_constant_graze_scores_eps(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 2.0, 40)
        traj = Trajectory(grid, np.ones((41, 1)))
        assert violation_sup(field, 0.05, traj) == pytest.approx(0.05)

    def test_window_restriction_and_refinement(self):
        field = unit_ball_complement(dim=1)
        coarse = TimeGrid.uniform(0.0, 2.0, 100)
        fine = TimeGrid.uniform(0.0, 2.0, 1000)
        path = lambda t: 1.2 - 0.3 * np.sin(np.pi * t)  # noqa: E731
        t_c = Trajectory(coarse, path(coarse.nodes)[:, None])
        t_f = Trajectory(fine, path(fine.nodes)[:, None])
        got = violation_sup(field, 0.05, t_c, window=(0.0, 1.0))
        want = violation_sup(field, 0.05, t_f, window=(0.0, 1.0))
        # Coarse and fine sups differ by at most one grid cell's variation.
        cell_var = 0.3 * np.pi * coarse.step
        assert abs(got - want) <= cell_var
        assert violation_sup(field, 0.05, t_c, window=(1.0, 2.0)) == 0.0

    def test_window_outside_domain(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 1.0, 4)
        traj = Trajectory(grid, np.ones((5, 1)))
        with pytest.raises(DomainError):
            violation_sup(field, 0.0, traj, window=(0.5, 2.0))


class TestTightening:
    def test_check_report_deviation_equals_eps(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 2.0, 4)
        report = check_tightening(
            field, grid.nodes, eps=0.1, deviation_cap=0.1, n_samples=4000, seed=0
        )
        assert report.ok
        assert report.worst_deviation <= 0.1
        # Shell samples approach displacement eps from below.
        assert report.worst_deviation > 0.08

    def test_bisection_matches_tolerance(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 2.0, 4)
        eps = certify_regular_perturbation(
            field, grid.nodes, deviation_cap=0.1, eps_cap=0.5, seed=0
        )
        assert 0.095 <= eps <= 0.11

    def test_cap_returned_when_certified(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 1.0, 2)
        eps = certify_regular_perturbation(
            field, grid.nodes, deviation_cap=0.4, eps_cap=0.05, seed=0
        )
        assert eps == pytest.approx(0.05)

    def test_monotone_in_deviation_cap(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 1.0, 2)
        found = [
            certify_regular_perturbation(
                field, grid.nodes, deviation_cap=cap, eps_cap=0.5, seed=1
            )
            for cap in (0.4, 0.2, 0.1, 0.05)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(found, found[1:]))

    def test_box_radius_excludes_witnesses(self):
        # Tightening the slab |x| <= 1 only moves states near its edges;
        # restricting samples to |x| <= 0.5 hides them, so the cap certifies.
        slab = ConstraintField(
            components=(
                compile_expression("x1 - 1", dim=1),
                compile_expression("0 - x1 - 1", dim=1),
            ),
            sampling_box=np.array([[-2.0, 2.0]]),
        )
        nodes = np.array([0.0, 1.0])
        restricted = certify_regular_perturbation(
            slab, nodes, deviation_cap=0.01, eps_cap=0.3, seed=0, box_radius=0.5
        )
        assert restricted == pytest.approx(0.3)
        unrestricted = certify_regular_perturbation(
            slab, nodes, deviation_cap=0.01, eps_cap=0.3, seed=0
        )
        assert 0.009 <= unrestricted <= 0.02

    def test_failure_carries_witness(self):
        # h = (|x| + x)(x - 2) vanishes identically on x <= 0, so those
        # feasible states sit at distance >= 1 from every tightened set:
        # no positive tightening is a regular perturbation here.
        flat = ConstraintField(
            components=(compile_expression("(abs(x1) + x1) * (x1 - 2)", dim=1),),
            sampling_box=np.array([[-2.0, 2.5]]),
        )
        with pytest.raises(CertificationError) as err:
            certify_regular_perturbation(
                flat, np.array([0.0, 1.0]), deviation_cap=0.5, eps_cap=0.4, seed=0
            )
        _, witness_x = err.value.witness
        assert witness_x[0] < 0.0


class TestBoundaryModulus:
    def test_static_field_is_zero(self):
        field = unit_ball_complement(dim=1)
        grid = TimeGrid.uniform(0.0, 2.0, 40)
        table = build_boundary_modulus(field, grid, eps_list=[0.1])
        assert table.value_at(1.3) == 0.0

    def test_drifting_ball_linear_modulus(self):
        # Boundary radius grows as 1 + eps + 0.1 t: a fixed probe's
        # boundary distance drifts at rate 0.1, so the modulus is 0.1 * delta.
        field = ConstraintField(
            components=(compile_expression("1 + 0.1 * t - abs(x1)", dim=1),),
            sampling_box=np.array([[-3.0, 3.0]]),
            time_varying=True,
        )
        grid = TimeGrid.uniform(0.0, 1.0, 20)
        table = build_boundary_modulus(field, grid, eps_list=[0.1])
        slack = 4 * field.resolution
        assert table.value_at(0.2) == pytest.approx(0.02, abs=slack)
        assert table.value_at(0.5) == pytest.approx(0.05, abs=slack)


class TestPerturbationProfile:
    def test_eps_lookup(self):
        profile = PerturbationProfile(
            eps0=0.5,
            delta0=0.4,
            omega_A=None,
            lambda_to_eps=((0.4, 0.4), (0.2, 0.2), (0.1, 0.1)),
        )
        assert profile.eps_for(0.25) == 0.2
        assert profile.eps_for(0.1) == 0.1
        with pytest.raises(DomainError):
            profile.eps_for(0.05)

    def test_rejects_eps_above_cap(self):
        with pytest.raises(DomainError):
            PerturbationProfile(
                eps0=0.1, delta0=0.4, omega_A=None, lambda_to_eps=((0.4, 0.2),)
            )


class TestFieldConfig:
    def test_builtin_config(self):
        field = field_from_config({"builtin": "unit_ball_complement", "dim": 2})
        assert field.dim == 2
        assert field.analytic_distance is not None

    def test_expression_config(self):
        field = field_from_config(
            {
                "components": ["1 - abs(x1)"],
                "box": [[-2.0, 2.0]],
                "time_varying": False,
            }
        )
        assert field.dim == 1
        assert field.value(0.0, np.array([1.4])) == pytest.approx(-0.4)

    def test_unknown_builtin(self):
        with pytest.raises(DomainError):
            field_from_config({"builtin": "halfspace"})

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tightpath.errors import DomainError, ShapeError
from tightpath.signals import (
    ControlSignal,
    ModulusTable,
    TimeGrid,
    Trajectory,
    build_modulus_table,
    eval_control,
    linf_distance,
    load_control,
    load_trajectory,
    save_csv,
    sup_window_modulus,
    weighted_l2_cost,
)


def brute_force_window_integral(nodes, samples, delta):
    # Independent oracle: scan every window start, trapezoid sum directly.
    best = 0.0
    for i in range(len(nodes)):
        acc = 0.0
        for j in range(i, len(nodes) - 1):
            if nodes[j + 1] > nodes[i] + delta * (1 + 1e-12):
                break
            acc += 0.5 * (samples[j] + samples[j + 1]) * (nodes[j + 1] - nodes[j])
        best = max(best, acc)
    return best


def brute_force_window_variation(nodes, samples, delta):
    best = 0.0
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if nodes[j] > nodes[i] + delta * (1 + 1e-12):
                break
            best = max(best, float(np.linalg.norm(samples[j] - samples[i])))
    return best


class TestTimeGrid:
    def test_uniform_endpoints(self):
        grid = TimeGrid.uniform(0.0, 2.0, 400)
        assert grid.t0 == 0.0
        assert grid.t1 == 2.0
        assert len(grid) == 401
        assert grid.step == pytest.approx(0.005)

    def test_rejects_non_monotone(self):
        with pytest.raises(DomainError):
            TimeGrid(np.array([0.0, 1.0, 1.0, 2.0]))

    def test_rejects_understated_step(self):
        with pytest.raises(DomainError):
            TimeGrid(np.array([0.0, 0.5, 1.0]), step=0.25)

    def test_index_left_interior_and_endpoint(self):
        grid = TimeGrid.uniform(0.0, 1.0, 4)
        assert grid.index_left(0.3) == 1
        assert grid.index_left(0.25) == 1
        assert grid.index_left(1.0) == 4

    def test_index_of_rejects_off_node(self):
        grid = TimeGrid.uniform(0.0, 1.0, 4)
        assert grid.index_of(0.75) == 3
        with pytest.raises(DomainError):
            grid.index_of(0.3)

    def test_domain_check(self):
        grid = TimeGrid.uniform(0.0, 1.0, 4)
        with pytest.raises(DomainError):
            grid.index_left(1.5)


class TestControlSignal:
    def test_left_rule_on_nodes_and_interior(self):
        grid = TimeGrid.uniform(0.0, 1.0, 2)
        sig = ControlSignal(grid, np.array([[1.0], [2.0], [3.0]]))
        assert eval_control(sig, 0.0) == pytest.approx(1.0)
        assert eval_control(sig, 0.49) == pytest.approx(1.0)
        assert eval_control(sig, 0.5) == pytest.approx(2.0)
        # Final node value applies at the right endpoint only.
        assert eval_control(sig, 1.0) == pytest.approx(3.0)

    @given(
        values=st.lists(
            st.floats(-10, 10, allow_nan=False), min_size=3, max_size=12
        ),
        frac=st.floats(0, 1, exclude_max=True),
    )
    @settings(max_examples=60, deadline=None)
    def test_left_rule_property(self, values, frac):
        grid = TimeGrid.uniform(0.0, 1.0, len(values) - 1)
        sig = ControlSignal(grid, np.array(values))
        h = grid.step
        i = len(values) // 2
        t = grid.nodes[i] + frac * h
        expect = values[i] if t < grid.nodes[i + 1] else values[i + 1]
        assert sig.eval(t)[0] == expect

    def test_shape_mismatch(self):
        grid = TimeGrid.uniform(0.0, 1.0, 2)
        with pytest.raises(ShapeError):
            ControlSignal(grid, np.zeros((2, 1)))


class TestTrajectory:
    def test_linear_interpolation(self):
        grid = TimeGrid.uniform(0.0, 1.0, 2)
        traj = Trajectory(grid, np.array([[0.0, 0.0], [1.0, -1.0], [0.0, 0.0]]))
        assert traj.eval(0.25) == pytest.approx([0.5, -0.5])
        assert traj.max_norm() == pytest.approx(np.sqrt(2.0))


class TestWindowModulus:
    def test_decline_drift_window_quarter(self):
        # gamma(s) = 1/(4 sqrt(s-1)) on (1, 2], zero before the kink.
        # Analytic sup over quarter-width windows is the window at the kink:
        # integral over [1, 1.25] = sqrt(0.25)/2 = 0.25.
        grid = TimeGrid.uniform(0.0, 2.0, 20000)
        s = grid.nodes
        gamma = np.where(s > 1.0, 1.0 / (4.0 * np.sqrt(np.maximum(s - 1.0, 1e-300))), 0.0)
        got = sup_window_modulus(grid, gamma, 0.25, mode="integral-sup")
        oracle = brute_force_window_integral(s[9000:13001], gamma[9000:13001], 0.25)
        assert got == pytest.approx(oracle, abs=1e-12)
        # Trapezoid under-resolves the inverse-sqrt singularity from above;
        # the first-cell defect is about 0.375 * sqrt(step).
        assert got == pytest.approx(0.25, abs=5e-3)

    def test_integral_sup_matches_brute_force_random(self):
        rng = np.random.default_rng(7)
        nodes = np.sort(rng.uniform(0, 3, 40))
        nodes[0], nodes[-1] = 0.0, 3.0
        grid = TimeGrid(np.unique(nodes))
        samples = rng.uniform(0, 2, len(grid))
        for delta in (0.1, 0.7, 1.5, 3.0):
            got = sup_window_modulus(grid, samples, delta, mode="integral-sup")
            want = brute_force_window_integral(grid.nodes, samples, delta)
            assert got == pytest.approx(want, abs=1e-12)

    def test_variation_sup_matches_brute_force(self):
        rng = np.random.default_rng(11)
        grid = TimeGrid.uniform(0.0, 1.0, 60)
        samples = rng.normal(size=(len(grid), 2))
        for delta in (0.05, 0.3, 1.0):
            got = sup_window_modulus(grid, samples, delta, mode="variation-sup")
            want = brute_force_window_variation(grid.nodes, samples, delta)
            assert got == pytest.approx(want, abs=1e-12)

    @given(delta_pair=st.tuples(st.floats(0.01, 1.0), st.floats(0.01, 1.0)))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_width(self, delta_pair):
        lo, hi = sorted(delta_pair)
        grid = TimeGrid.uniform(0.0, 1.0, 50)
        samples = np.abs(np.sin(17 * grid.nodes))
        assert sup_window_modulus(grid, samples, lo) <= sup_window_modulus(
            grid, samples, hi
        ) + 1e-15

    def test_rejects_negative_samples(self):
        grid = TimeGrid.uniform(0.0, 1.0, 4)
        with pytest.raises(DomainError):
            sup_window_modulus(grid, np.array([0, 1, -1, 1, 0.0]), 0.5)


class TestModulusTable:
    def test_ceil_lookup(self):
        table = ModulusTable(np.array([0.0, 0.1, 0.2, 0.4]), np.array([0.0, 1.0, 1.5, 2.0]))
        assert table.value_at(0.0) == 0.0
        assert table.value_at(0.05) == 1.0
        assert table.value_at(0.1) == 1.0
        assert table.value_at(0.15) == 1.5
        assert table.value_at(0.4) == 2.0
        # Beyond the tabulated range the last value applies.
        assert table.value_at(0.9) == 2.0

    def test_requires_zero_anchor(self):
        with pytest.raises(DomainError):
            ModulusTable(np.array([0.1, 0.2]), np.array([0.0, 1.0]))

    def test_build_table_dominates_direct_modulus(self):
        grid = TimeGrid.uniform(0.0, 1.0, 100)
        samples = 1.0 + np.cos(5 * grid.nodes) ** 2
        table = build_modulus_table(grid, samples, mode="integral-sup")
        for delta in (0.013, 0.27, 0.5, 1.0):
            direct = sup_window_modulus(grid, samples, delta)
            assert table.value_at(delta) >= direct - 1e-12

    def test_zero_table(self):
        table = ModulusTable.zero(2.0)
        assert table.value_at(1.7) == 0.0


class TestLinfDistance:
    def test_shared_grid(self):
        grid = TimeGrid.uniform(0.0, 1.0, 10)
        a = Trajectory(grid, np.zeros((11, 2)))
        states = np.zeros((11, 2))
        states[4] = [0.3, -0.4]
        b = Trajectory(grid, states)
        assert linf_distance(a, b) == pytest.approx(0.5)

    def test_union_grid_resampling(self):
        # Identical paths sampled on different grids must read as distance 0.
        line = lambda t: np.column_stack([t, 2 * t])  # noqa: E731
        ga = TimeGrid.uniform(0.0, 1.0, 7)
        gb = TimeGrid.uniform(0.0, 1.0, 13)
        a = Trajectory(ga, line(ga.nodes))
        b = Trajectory(gb, line(gb.nodes))
        assert linf_distance(a, b) == pytest.approx(0.0, abs=1e-15)

    @given(seed=st.integers(0, 2**16))
    @settings(max_examples=30, deadline=None)
    def test_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        grid = TimeGrid.uniform(0.0, 1.0, 12)
        trajs = [Trajectory(grid, rng.normal(size=(13, 2))) for _ in range(3)]
        a, b, c = trajs
        assert linf_distance(a, c) <= linf_distance(a, b) + linf_distance(b, c) + 1e-12


class TestWeightedCost:
    def test_identity_weight_unit_control(self):
        grid = TimeGrid.uniform(0.0, 1.0, 10)
        sig = ControlSignal(grid, np.ones((11, 1)))
        assert weighted_l2_cost(sig) == pytest.approx(1.0)

    def test_linear_time_weight_frozen_value(self):
        # W(t) = (1+t) I, u = 1 on [0, 1]: integral of (1+t) is exactly 3/2.
        grid = TimeGrid.uniform(0.0, 1.0, 10)
        sig = ControlSignal(grid, np.ones((11, 1)))
        weight = lambda t: np.array([[1.0 + t]])  # noqa: E731
        assert weighted_l2_cost(sig, weight) == pytest.approx(1.5, abs=1e-14)

    def test_constant_matrix_weight(self):
        grid = TimeGrid.uniform(0.0, 2.0, 4)
        sig = ControlSignal(grid, np.tile([1.0, 2.0], (5, 1)))
        weight = np.array([[2.0, 0.0], [0.0, 1.0]])
        # u' W u = 2 + 4 = 6 on a span of 2.
        assert weighted_l2_cost(sig, weight) == pytest.approx(12.0)

    def test_rejects_indefinite_weight(self):
        grid = TimeGrid.uniform(0.0, 1.0, 2)
        sig = ControlSignal(grid, np.ones((3, 1)))
        with pytest.raises(DomainError):
            weighted_l2_cost(sig, np.array([[-1.0]]))

    @given(scale=st.floats(0.1, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_quadratic_scaling(self, scale):
        grid = TimeGrid.uniform(0.0, 1.0, 6)
        rng = np.random.default_rng(3)
        base = rng.normal(size=(7, 2))
        lo = weighted_l2_cost(ControlSignal(grid, base))
        hi = weighted_l2_cost(ControlSignal(grid, scale * base))
        assert hi == pytest.approx(scale**2 * lo, rel=1e-9)


class TestCsvRoundTrip:
    def test_trajectory_round_trip(self, tmp_path):
        grid = TimeGrid.uniform(0.0, 2.0, 17)
        rng = np.random.default_rng(5)
        traj = Trajectory(grid, rng.normal(size=(18, 3)))
        path = tmp_path / "x_eps.csv"
        save_csv(path, traj)
        header = path.read_text().splitlines()[0]
        assert header == "t,x1,x2,x3"
        loaded = load_trajectory(path)
        assert np.array_equal(loaded.grid.nodes, grid.nodes)
        assert np.array_equal(loaded.states, traj.states)

    def test_control_round_trip(self, tmp_path):
        grid = TimeGrid.uniform(0.0, 1.0, 9)
        sig = ControlSignal(grid, np.linspace(-1, 1, 10)[:, None] / 3.0)
        path = tmp_path / "u_eps.csv"
        save_csv(path, sig)
        assert path.read_text().splitlines()[0] == "t,u1"
        loaded = load_control(path)
        assert np.array_equal(loaded.values, sig.values)

    def test_kind_mixup_rejected(self, tmp_path):
        grid = TimeGrid.uniform(0.0, 1.0, 3)
        save_csv(tmp_path / "u.csv", ControlSignal(grid, np.ones(4)))
        with pytest.raises(DomainError):
            load_trajectory(tmp_path / "u.csv")

    def test_deterministic_bytes(self, tmp_path):
        grid = TimeGrid.uniform(0.0, 1.0, 50)
        rng = np.random.default_rng(9)
        traj = Trajectory(grid, rng.normal(size=(51, 2)))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_csv(p1, traj)
        save_csv(p2, traj)
        assert p1.read_bytes() == p2.read_bytes()

import math

import numpy as np
import pytest

from episde.errors import DimensionMismatch, MilsteinUnavailable
from episde.integrate import (
    PathEnsemble,
    SdeScheme,
    TimeGrid,
    derive_path_stream,
    integrate_parametric,
    integrate_parametric_given_parameters,
    integrate_sde,
    integrate_sde_given_increments,
    iterate_discrete,
)
from episde.systems import (
    SystemKind,
    SystemSpec,
    catalog_lookup,
    custom_basis,
    linear_state_basis,
    make_prior,
    FeedbackPolicy,
)


def kahan_sum(values):
    """Compensated accumulation in input order (independent reference)."""
    total, comp = 0.0, 0.0
    for v in values:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


class TestTimeGrid:
    def test_endpoints(self):
        grid = TimeGrid(t_end=3.0, num_steps=300)
        times = grid.times()
        assert times[0] == 0.0
        assert times[-1] == pytest.approx(3.0, abs=1e-15)
        # grid is i * dt, not a running sum
        assert times[137] == 137 * grid.dt

    def test_validation(self):
        with pytest.raises(DimensionMismatch):
            TimeGrid(t_end=1.0, num_steps=0)
        with pytest.raises(DimensionMismatch):
            TimeGrid(t_end=-1.0, num_steps=10)


class TestDerivePathStream:
    def test_determinism(self):
        a = derive_path_stream(42, 3).standard_normal(100)
        b = derive_path_stream(42, 3).standard_normal(100)
        np.testing.assert_array_equal(a, b)

    def test_independence_smoke(self):
        a = derive_path_stream(42, 0).standard_normal(10**4)
        b = derive_path_stream(42, 1).standard_normal(10**4)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.03

    def test_distinct_seeds_differ(self):
        a = derive_path_stream(1, 0).standard_normal(10)
        b = derive_path_stream(2, 0).standard_normal(10)
        assert not np.array_equal(a, b)


class TestIntegrateParametric:
    def test_constant_drift_exact(self):
        entry = catalog_lookup("scalar-drift")
        grid = TimeGrid(t_end=1.0, num_steps=100)
        ens = integrate_parametric_given_parameters(entry.epistemic, grid, [[0.7]])
        assert ens.states[0, -1, 0] == pytest.approx(0.7, abs=1e-12)

    def test_initial_condition(self):
        entry = catalog_lookup("linear-feedback")
        grid = TimeGrid(t_end=1.0, num_steps=7)
        ens = integrate_parametric(entry.epistemic, grid, 1, 99)
        assert ens.states[0, 0, 0] == 1.0

    def test_feedback_closed_form(self):
        entry = catalog_lookup("linear-feedback", theta_bar=0.0)  # k = -1
        grid = TimeGrid(t_end=1.0, num_steps=1000)
        ens = integrate_parametric_given_parameters(entry.epistemic, grid, [[0.5]])
        assert ens.states[0, -1, 0] == pytest.approx(math.exp(-0.5), abs=1e-9)

    def test_reintegration_reproduces_bitwise(self):
        entry = catalog_lookup("linear-feedback")
        grid = TimeGrid(t_end=2.0, num_steps=50)
        ens = integrate_parametric(entry.epistemic, grid, 20, 7)
        redo = integrate_parametric_given_parameters(
            entry.epistemic, grid, ens.sampled_parameters
        )
        np.testing.assert_array_equal(ens.states, redo.states)

    def test_worker_count_invariance(self):
        entry = catalog_lookup("linear-feedback")
        grid = TimeGrid(t_end=2.0, num_steps=50)
        one = integrate_parametric(entry.epistemic, grid, 100, 11, workers=1)
        many = integrate_parametric(entry.epistemic, grid, 100, 11, workers=8)
        np.testing.assert_array_equal(one.states, many.states)

    def test_divergent_paths_flagged_not_dropped(self):
        # xdot = theta x^3 with theta forced to +10 blows up in finite time
        basis = custom_basis(lambda x, u: np.array([[x[0] ** 3]]), 1, 1)
        prior = make_prior([10.0], [[0.0]], allow_semidefinite=True)
        spec = SystemSpec(
            kind=SystemKind.PARAMETRIC_ODE,
            basis=basis,
            prior=prior,
            policy=FeedbackPolicy.zero(1),
            initial_state=[1.0],
            state_dim=1,
            input_dim=1,
            param_dim=1,
        )
        grid = TimeGrid(t_end=5.0, num_steps=200)
        ens = integrate_parametric(spec, grid, 3, 0)
        assert ens.num_paths == 3
        assert len(ens.divergent_paths) == 3
        assert (ens.first_nonfinite >= 0).all()


class TestIntegrateSde:
    def test_scalar_drift_telescopes_to_increment_sum(self):
        entry = catalog_lookup("scalar-drift")
        grid = TimeGrid(t_end=1.0, num_steps=500)
        seed = 21
        ens = integrate_sde(entry.aleatoric, grid, 4, seed)
        sqrt_dt = math.sqrt(grid.dt)
        for j in range(4):
            inc = derive_path_stream(seed, j).standard_normal((500, 1)) * sqrt_dt
            assert ens.states[j, -1, 0] == kahan_sum(inc[:, 0])

    def test_zero_diffusion_reduces_to_euler(self):
        prior = make_prior([0.0], [[0.0]], allow_semidefinite=True)
        spec = SystemSpec(
            kind=SystemKind.ITO_SDE,
            basis=linear_state_basis(),
            prior=prior,
            policy=FeedbackPolicy.linear([[-1.0]]),
            initial_state=[1.0],
            state_dim=1,
            input_dim=1,
            param_dim=1,
            input_matrix=[[1.0]],
        )
        grid = TimeGrid(t_end=1.0, num_steps=100)
        ens = integrate_sde(spec, grid, 1, 0)
        x = 1.0
        for _ in range(100):
            x += -x * grid.dt
        assert ens.states[0, -1, 0] == pytest.approx(x, abs=1e-12)

    def test_milstein_unavailable_without_gradient(self):
        basis = custom_basis(lambda x, u: np.array([[x[0]]]), 1, 1)
        entry = catalog_lookup("scalar-drift")
        spec = SystemSpec(
            kind=SystemKind.ITO_SDE,
            basis=basis,
            prior=entry.epistemic.prior,
            policy=FeedbackPolicy.zero(1),
            initial_state=[1.0],
            state_dim=1,
            input_dim=1,
            param_dim=1,
        )
        grid = TimeGrid(t_end=1.0, num_steps=10)
        with pytest.raises(MilsteinUnavailable):
            integrate_sde(spec, grid, 1, 0, scheme=SdeScheme.MILSTEIN)

    def test_worker_count_invariance(self):
        entry = catalog_lookup("linear-feedback")
        grid = TimeGrid(t_end=1.0, num_steps=64)
        one = integrate_sde(entry.aleatoric, grid, 100, 5, workers=1)
        many = integrate_sde(entry.aleatoric, grid, 100, 5, workers=8)
        np.testing.assert_array_equal(one.states, many.states)

    def test_given_increments_matches_seeded_run(self):
        entry = catalog_lookup("linear-feedback")
        grid = TimeGrid(t_end=1.0, num_steps=32)
        seed, n = 9, 6
        seeded = integrate_sde(entry.aleatoric, grid, n, seed)
        sqrt_dt = math.sqrt(grid.dt)
        dW = np.stack(
            [derive_path_stream(seed, j).standard_normal((32, 1)) * sqrt_dt for j in range(n)]
        )
        manual = integrate_sde_given_increments(entry.aleatoric, grid, dW)
        np.testing.assert_array_equal(seeded.states, manual.states)


class TestSecondDifferenceRegularity:
    """Parametric paths are discretely C1, SDE paths are not."""

    def second_diff_max(self, ens):
        x = ens.states[:, :, 0]
        return np.abs(np.diff(x, 2, axis=1)).max()

    def test_parametric_second_difference_order_dt_squared(self):
        entry = catalog_lookup("linear-feedback")
        theta = [[0.5]]
        coarse = integrate_parametric_given_parameters(
            entry.epistemic, TimeGrid(t_end=1.0, num_steps=100), theta
        )
        fine = integrate_parametric_given_parameters(
            entry.epistemic, TimeGrid(t_end=1.0, num_steps=200), theta
        )
        ratio = self.second_diff_max(coarse) / self.second_diff_max(fine)
        assert 3.0 < ratio < 5.0  # halving dt divides second differences by ~4

    def test_sde_second_difference_order_sqrt_dt(self):
        entry = catalog_lookup("scalar-drift")
        coarse = integrate_sde(entry.aleatoric, TimeGrid(t_end=1.0, num_steps=256), 200, 3)
        fine = integrate_sde(entry.aleatoric, TimeGrid(t_end=1.0, num_steps=1024), 200, 3)
        mean_sd = lambda e: np.abs(np.diff(e.states[:, :, 0], 2, axis=1)).mean()
        ratio = mean_sd(coarse) / mean_sd(fine)
        assert 1.6 < ratio < 2.4  # quartering dt halves |second difference|


class TestIterateDiscrete:
    def test_multiplicative_powers(self):
        prior = make_prior([2.0], [[0.0]], allow_semidefinite=True)
        entry = catalog_lookup("dt-multiplicative")
        spec = SystemSpec(
            kind=SystemKind.DISCRETE_MULTIPLICATIVE,
            basis=entry.epistemic.basis,
            prior=prior,
            policy=FeedbackPolicy.zero(1),
            initial_state=[1.0],
            state_dim=1,
            input_dim=1,
            param_dim=1,
        )
        ens = iterate_discrete(spec, 3, 1, 0)
        np.testing.assert_array_equal(ens.states[0, :, 0], [1.0, 2.0, 4.0, 8.0])

    def test_additive_random_walk_variance(self):
        entry = catalog_lookup("dt-additive", theta_bar=1.0, x0=0.0)
        ens = iterate_discrete(entry.aleatoric, 5, 10**4, 17)
        var5 = ens.states[:, 5, 0].var(ddof=1)
        assert abs(var5 - 5.0) < 0.22

    def test_worker_count_invariance(self):
        entry = catalog_lookup("dt-additive")
        one = iterate_discrete(entry.aleatoric, 5, 50, 3, workers=1)
        many = iterate_discrete(entry.aleatoric, 5, 50, 3, workers=4)
        np.testing.assert_array_equal(one.states, many.states)


class TestSerialization:
    def test_binary_round_trip(self, tmp_path):
        entry = catalog_lookup("linear-feedback")
        grid = TimeGrid(t_end=1.0, num_steps=16)
        ens = integrate_sde(entry.aleatoric, grid, 10, 4)
        path = tmp_path / "ens.bin"
        ens.to_binary(path)
        back = PathEnsemble.from_binary(path)
        np.testing.assert_array_equal(ens.states, back.states)
        assert back.kind is SystemKind.ITO_SDE
        assert back.master_seed == 4
        assert back.grid.t_end == 1.0

    def test_binary_header(self, tmp_path):
        entry = catalog_lookup("scalar-drift")
        ens = integrate_sde(entry.aleatoric, TimeGrid(t_end=1.0, num_steps=4), 2, 0)
        path = tmp_path / "ens.bin"
        ens.to_binary(path)
        raw = path.read_bytes()
        assert raw[:8] == b"EPISDE\x01\x00"
        assert len(raw) == 16 + 56 + 2 * 5 * 1 * 8  # header + metadata + payload

    def test_csv_schema(self, tmp_path):
        entry = catalog_lookup("scalar-drift")
        ens = integrate_sde(entry.aleatoric, TimeGrid(t_end=1.0, num_steps=4), 2, 0)
        path = tmp_path / "ens.csv"
        ens.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "path_id,t,dim,x"
        assert len(lines) == 1 + 2 * 5
        # shortest round-trip float formatting
        for line in lines[1:3]:
            _, t, _, x = line.split(",")
            assert float(t) == float(t)  # parses
            assert repr(float(x)) == x

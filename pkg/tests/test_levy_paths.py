import numpy as np
import pytest

from mfbsde import (
    ConfigError,
    DomainError,
    LevyMeasure,
    build_grid,
    girsanov_density,
    shift_to_q,
    simulate_ensemble,
)

from conftest import mc_se


class TestBuildGrid:
    def test_uniform_subdivision(self):
        g = build_grid(1.0, 4)
        assert np.array_equal(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_single_step(self):
        g = build_grid(2.0, 1)
        assert np.array_equal(g.nodes, [0.0, 2.0])
        assert g.dt == 2.0

    @pytest.mark.parametrize("horizon,steps", [(1.0, 0), (0.0, 10),
                                               (-1.0, 5), (1.0, 2.5)])
    def test_bad_inputs_rejected(self, horizon, steps):
        with pytest.raises(ConfigError):
            build_grid(horizon, steps)


class TestLevyMeasure:
    def test_total_mass(self, levy2):
        assert levy2.total_mass == pytest.approx(2.7)

    def test_zero_mark_rejected(self):
        with pytest.raises(ConfigError, match="nonzero"):
            LevyMeasure.from_atoms([(0.0, 1.0)])

    def test_duplicate_marks_rejected(self):
        with pytest.raises(ConfigError, match="distinct"):
            LevyMeasure.from_atoms([(1.0, 0.5), (1.0, 0.7)])

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ConfigError, match="positive"):
            LevyMeasure.from_atoms([(1.0, 0.0)])


class TestSimulateEnsemble:
    def test_no_atoms_means_no_jumps(self, grid50, levy0):
        ens = simulate_ensemble(grid50, levy0, 100, seed=1)
        assert ens.jumps.shape == (100, 50, 0)
        assert np.all(ens.compensated_jumps_p == 0)

    def test_brownian_moments(self, grid50, levy0):
        ens = simulate_ensemble(grid50, levy0, 100000, seed=2)
        db = ens.db.ravel()
        assert abs(db.mean()) <= 3 * mc_se(db)
        var = db**2
        assert abs(var.mean() - grid50.dt) <= 3 * mc_se(var)

    def test_poisson_mean(self):
        grid = build_grid(1.0, 10)  # dt = 0.1
        levy = LevyMeasure.from_atoms([(1.0, 2.0)])
        ens = simulate_ensemble(grid, levy, 100000, seed=3)
        counts = ens.jumps[:, :, 0].ravel()
        assert abs(counts.mean() - 0.2) <= 3 * mc_se(counts)

    def test_compensation(self, ens_small):
        comp = ens_small.compensated_jumps_p
        for i in (0, 20, 49):
            s = comp[:, i, 0]
            assert abs(s.mean()) <= 3 * mc_se(s)

    def test_reproducible(self, grid50, levy2):
        a = simulate_ensemble(grid50, levy2, 500, seed=9)
        b = simulate_ensemble(grid50, levy2, 500, seed=9)
        assert np.array_equal(a.db, b.db)
        assert np.array_equal(a.jumps, b.jumps)

    def test_paths_required(self, grid50, levy0):
        with pytest.raises(ConfigError):
            simulate_ensemble(grid50, levy0, 0, seed=1)


class TestGirsanovDensity:
    def test_identity_when_no_tilt(self, ens_small):
        dens = girsanov_density(ens_small, 0.0, 0.0)
        assert np.array_equal(dens.m, np.ones_like(dens.m))

    def test_density_starts_at_one(self, ens_small):
        dens = girsanov_density(ens_small, 0.4, 0.3)
        assert np.all(dens.m[:, 0] == 1.0)
        assert np.all(dens.m > 0)

    def test_martingale_mean(self, ens_mid):
        dens = girsanov_density(ens_mid, 0.3, 0.5)
        mt = dens.m[:, -1]
        assert abs(mt.mean() - 1.0) <= 3 * mc_se(mt)

    def test_singular_tilt_rejected(self, ens_small):
        with pytest.raises(DomainError, match="eta1"):
            girsanov_density(ens_small, 0.0, -1.0)


class TestShiftToQ:
    def test_zero_tilt_is_bit_identical(self, ens_small):
        q = shift_to_q(ens_small, 0.0, 0.0)
        assert np.array_equal(q.db, ens_small.db)
        assert np.array_equal(q.jumps, ens_small.jumps)
        assert q.measure == "Q"

    def test_brownian_drift(self, ens_mid):
        q = shift_to_q(ens_mid, 0.3, 0.0)
        db = q.db.ravel()
        assert abs(db.mean() - 0.3 * ens_mid.grid.dt) <= 3 * mc_se(db)
        assert np.allclose(q.martingale_db.mean(), 0.0, atol=1e-3)

    def test_tilted_intensity(self):
        grid = build_grid(1.0, 10)
        levy = LevyMeasure.from_atoms([(1.0, 2.0)])
        ens = simulate_ensemble(grid, levy, 100000, seed=5)
        q = shift_to_q(ens, 0.0, 0.5)
        counts = q.jumps[:, :, 0].ravel()
        assert abs(counts.mean() - 3.0 * grid.dt) <= 3 * mc_se(counts)

    def test_domain_error(self, ens_small):
        with pytest.raises(DomainError):
            shift_to_q(ens_small, 0.0, lambda t, z: -1.5)

    def test_weighting_matches_shifting(self, ens_mid):
        """E_P[phi M(T)] and the shifted-ensemble mean of phi agree."""
        b1, e1 = 0.25, 0.4
        dens = girsanov_density(ens_mid, b1, e1)
        q = shift_to_q(ens_mid, b1, e1)
        for phi in (lambda e: e.db.sum(axis=1),
                    lambda e: e.jumps[:, :, 0].sum(axis=1)):
            lhs = phi(ens_mid) * dens.m[:, -1]
            rhs = phi(q)
            tol = 3 * np.hypot(mc_se(lhs), mc_se(rhs))
            assert abs(lhs.mean() - rhs.mean()) <= tol

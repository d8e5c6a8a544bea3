import numpy as np
import pytest

from openmhd.core_fields import Side, classify_boundary, lp_norm, make_grid
from openmhd.errors import (
    CharacteristicEntersThroughNonInflow,
    CompatibilityViolated,
    NonPositiveData,
    VelocityNotInterpolable,
)
from openmhd.transport_density import (
    DensityProblem,
    backtrack_characteristic,
    cfl_advisory,
    check_gradient_estimate,
    check_lp_estimate,
    density_minmax_bounds,
    solve_continuity,
    solve_continuity_upwind,
)


def constant_velocity(grid, nt, vec):
    v = np.zeros((3, grid.nx, grid.ny))
    v[0] = vec[0]
    v[1] = vec[1]
    v[2] = vec[2]
    return [v.copy() for _ in range(nt + 1)]


def boundary_table(grid, nt, dt, fn, t0=0.0):
    xb, yb = grid.boundary_coords()
    return np.array([fn(t0 + k * dt, xb, yb) for k in range(nt + 1)])


def translation_problem(n=33, dt=1e-3, nt=200, speed=1.0):
    grid = make_grid(n, n)
    v = constant_velocity(grid, nt, (speed, 0.0, 0.0))
    tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
    rho_b = boundary_table(tagged, nt, dt, lambda t, x, y: 1.0 + t + 0.0 * x)
    return DensityProblem(grid=tagged, v_traj=v, rho0=np.ones(grid.shape),
                          dt=dt, rho_b=rho_b)


def expansion_problem(n=33, dt=1e-3, nt=200, rate=1.0, r=2.0):
    grid = make_grid(n, n)
    v = np.stack([0.5 * rate * grid.xg, 0.5 * rate * grid.yg,
                  np.zeros(grid.shape)])
    v_traj = [v.copy() for _ in range(nt + 1)]
    tagged = classify_boundary(grid, v[:, grid.bd_i, grid.bd_j], c=0.5)
    return DensityProblem(grid=tagged, v_traj=v_traj,
                          rho0=np.full(grid.shape, r), dt=dt)


def translation_exact(grid, t):
    return 1.0 + np.maximum(t - grid.xg, 0.0)


class TestBacktracking:
    def test_stationary(self):
        grid = make_grid(8, 8)
        v = constant_velocity(grid, 1, (0.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        prob = DensityProblem(grid=tagged, v_traj=v, rho0=np.ones(grid.shape),
                              dt=0.1)
        foot = backtrack_characteristic((0.5, 0.5), t=0.1, problem=prob)
        assert foot.interior
        assert foot.point == pytest.approx((0.5, 0.5))

    def test_uniform_translation(self):
        grid = make_grid(8, 8)
        v = constant_velocity(grid, 1, (1.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        rho_b = boundary_table(tagged, 1, 0.1, lambda t, x, y: 1.0 + 0.0 * x)
        prob = DensityProblem(grid=tagged, v_traj=v, rho0=np.ones(grid.shape),
                              dt=0.1, rho_b=rho_b)
        foot = backtrack_characteristic((0.5, 0.5), t=0.1, problem=prob)
        assert foot.interior
        assert foot.point == pytest.approx((0.4, 0.5), abs=1e-12)

    def test_boundary_crossing(self):
        grid = make_grid(8, 8)
        v = constant_velocity(grid, 1, (1.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        rho_b = boundary_table(tagged, 1, 0.1, lambda t, x, y: 1.0 + 0.0 * x)
        prob = DensityProblem(grid=tagged, v_traj=v, rho0=np.ones(grid.shape),
                              dt=0.1, rho_b=rho_b)
        foot = backtrack_characteristic((0.05, 0.5), t=0.1, problem=prob)
        assert not foot.interior
        assert foot.side is Side.LEFT
        assert foot.crossing_time == pytest.approx(0.1 - 0.05, abs=1e-12)

    def test_time_outside_window(self):
        grid = make_grid(8, 8)
        v = constant_velocity(grid, 1, (1.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        rho_b = boundary_table(tagged, 1, 0.1, lambda t, x, y: 1.0 + 0.0 * x)
        prob = DensityProblem(grid=tagged, v_traj=v, rho0=np.ones(grid.shape),
                              dt=0.1, rho_b=rho_b)
        with pytest.raises(VelocityNotInterpolable):
            backtrack_characteristic((0.5, 0.5), t=0.0, problem=prob)

    def test_substepping_matches_exact_translation(self):
        grid = make_grid(33, 33)
        v = constant_velocity(grid, 1, (40.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        rho_b = boundary_table(tagged, 1, 0.01, lambda t, x, y: 1.0 + 0.0 * x)
        prob = DensityProblem(grid=tagged, v_traj=v, rho0=np.ones(grid.shape),
                              dt=0.01, rho_b=rho_b)
        assert cfl_advisory(prob) > 2.0
        foot = backtrack_characteristic((0.9, 0.5), t=0.01, problem=prob)
        assert foot.interior
        assert foot.point == pytest.approx((0.5, 0.5), abs=1e-12)


class TestSolveContinuity:
    def test_stationary_velocity_keeps_rho0(self):
        grid = make_grid(16, 16)
        nt = 20
        v = constant_velocity(grid, nt, (0.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        rng = np.random.default_rng(0)
        rho0 = 1.0 + 0.5 * rng.random(grid.shape)
        prob = DensityProblem(grid=tagged, v_traj=v, rho0=rho0, dt=1e-2)
        traj = solve_continuity(prob)
        for r in traj:
            np.testing.assert_array_equal(r, rho0)

    def test_uniform_divergence_exact_decay(self):
        prob = expansion_problem(rate=1.0, r=2.0, nt=200)
        traj = solve_continuity(prob)
        for k, r in enumerate(traj):
            expect = 2.0 * np.exp(-k * prob.dt)
            np.testing.assert_allclose(r, expect, rtol=1e-12)

    def test_translation_with_boundary_emission(self):
        prob = translation_problem(n=33, dt=1e-3, nt=200)
        traj = solve_continuity(prob)
        t_end = 0.2
        err = lp_norm(traj[-1] - translation_exact(prob.grid, t_end),
                      prob.grid, 2.0)
        h = prob.grid.hx
        assert err <= 1.0 * (h + prob.dt)

    def test_translation_positivity(self):
        prob = translation_problem(n=17, dt=2e-3, nt=100)
        traj = solve_continuity(prob)
        assert min(float(r.min()) for r in traj) > 0.0

    def test_convergence_order(self):
        # smooth traveling wave rho = 2 + a sin(2 pi (x - t)) entering through
        # the inflow edge; simultaneous h, dt refinement gives first order
        def build(n, dt, nt):
            grid = make_grid(n, n)
            v = constant_velocity(grid, nt, (1.0, 0.0, 0.0))
            tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
            xb, yb = tagged.boundary_coords()
            rho_b = np.array([2.0 + 0.5 * np.sin(2 * np.pi * (xb - k * dt))
                              for k in range(nt + 1)])
            rho0 = 2.0 + 0.5 * np.sin(2 * np.pi * grid.xg)
            return DensityProblem(grid=tagged, v_traj=v, rho0=rho0, dt=dt,
                                  rho_b=rho_b)

        errs, hs = [], []
        for n, dt, nt in ((33, 2e-3, 50), (65, 1e-3, 100), (129, 5e-4, 200)):
            prob = build(n, dt, nt)
            traj = solve_continuity(prob)
            exact = 2.0 + 0.5 * np.sin(2 * np.pi * (prob.grid.xg - 0.1))
            errs.append(lp_norm(traj[-1] - exact, prob.grid, 2.0))
            hs.append(prob.grid.hx + dt)
        orders = [np.log(errs[i] / errs[i + 1]) / np.log(hs[i] / hs[i + 1])
                  for i in range(2)]
        assert min(orders) >= 0.9

    def test_upwind_oracle_agrees(self):
        prob = translation_problem(n=33, dt=1e-3, nt=100)
        sl = solve_continuity(prob)
        up = solve_continuity_upwind(prob)
        gap = lp_norm(sl[-1] - up[-1], prob.grid, 2.0)
        assert gap <= 2.0 * (prob.grid.hx + prob.dt)

    def test_upwind_oracle_on_expansion(self):
        prob = expansion_problem(rate=1.0, r=2.0, nt=100, dt=1e-3)
        up = solve_continuity_upwind(prob)
        np.testing.assert_allclose(up[-1], 2.0 * np.exp(-0.1), rtol=2e-3)

    def test_upwind_oracle_on_recirculating_flow(self):
        # solenoidal recirculation from a squared stream bump (velocity and
        # its gradient vanish on the walls): the two independent schemes must
        # agree to discretization accuracy
        grid = make_grid(33, 33)
        psi = (grid.xg * (1.0 - grid.xg) * grid.yg * (1.0 - grid.yg)) ** 2
        from openmhd.core_fields import ddx, ddy
        v = 40.0 * np.stack([ddy(psi, grid), -ddx(psi, grid),
                             np.zeros(grid.shape)])
        nt, dt = 100, 1e-3
        tagged = classify_boundary(grid, v[:, grid.bd_i, grid.bd_j], c=0.5)
        rho0 = 2.0 + np.sin(2 * np.pi * grid.xg) * np.sin(np.pi * grid.yg)
        prob = DensityProblem(grid=tagged, v_traj=[v.copy() for _ in range(nt + 1)],
                              rho0=rho0, dt=dt)
        sl = solve_continuity(prob)
        up = solve_continuity_upwind(prob)
        gap = lp_norm(sl[-1] - up[-1], prob.grid, 2.0)
        assert gap <= 2.0 * (prob.grid.hx + dt)
        assert min(float(r.min()) for r in sl) > 0.0

    def test_wrong_direction_raises(self):
        # velocity pushes mass out through the left edge, which got tagged
        # as inflow from a contradictory trace: feet cross a non-inflow face
        grid = make_grid(8, 8)
        v = constant_velocity(grid, 10, (-1.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        # tags: right edge is inflow; now flip the velocity so characteristics
        # leave through the left (outflow-tagged) edge without data
        prob = DensityProblem(
            grid=tagged,
            v_traj=constant_velocity(grid, 10, (1.0, 0.0, 0.0)),
            rho0=np.ones(grid.shape), dt=0.05,
            rho_b=boundary_table(tagged, 10, 0.05, lambda t, x, y: 1.0 + 0.0 * x))
        with pytest.raises(CharacteristicEntersThroughNonInflow):
            solve_continuity(prob)

    def test_nonpositive_data_rejected(self):
        grid = make_grid(8, 8)
        v = constant_velocity(grid, 2, (0.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        with pytest.raises(NonPositiveData):
            DensityProblem(grid=tagged, v_traj=v,
                           rho0=np.zeros(grid.shape), dt=0.1)

    def test_incompatible_boundary_data_rejected(self):
        grid = make_grid(8, 8)
        v = constant_velocity(grid, 2, (1.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        rho_b = boundary_table(tagged, 2, 0.1, lambda t, x, y: 2.0 + 0.0 * x)
        with pytest.raises(CompatibilityViolated):
            DensityProblem(grid=tagged, v_traj=v, rho0=np.ones(grid.shape),
                           dt=0.1, rho_b=rho_b)


class TestEstimates:
    def test_lp_estimate_stationary(self):
        grid = make_grid(12, 12)
        nt = 10
        v = constant_velocity(grid, nt, (0.0, 0.0, 0.0))
        tagged = classify_boundary(grid, v[0][:, grid.bd_i, grid.bd_j], c=0.5)
        prob = DensityProblem(grid=tagged, v_traj=v,
                              rho0=np.ones(grid.shape), dt=0.01)
        traj = solve_continuity(prob)
        rep = check_lp_estimate(traj, prob, p=4.0, tol=1e-9)
        assert rep.passed()
        # exponential factor is 1, so rhs is exactly the initial norm
        assert rep.entries[0].rhs == pytest.approx(rep.entries[0].lhs, rel=1e-12)

    def test_lp_estimate_translation_and_expansion(self):
        for prob in (translation_problem(nt=100), expansion_problem(nt=100)):
            traj = solve_continuity(prob)
            rep = check_lp_estimate(traj, prob, p=4.0, tol=1e-9)
            assert rep.passed(), rep.to_dict()

    def test_lp_estimate_detects_corruption(self):
        prob = translation_problem(n=17, dt=2e-3, nt=50)
        traj = solve_continuity(prob)
        bad = [10.0 * r for r in traj]
        rep = check_lp_estimate(bad, prob, p=4.0, tol=1e-9)
        assert not rep.passed()
        assert not rep.entries[1].passed  # the L-infinity variant too

    def test_gradient_estimate_uniform_density(self):
        prob = translation_problem(n=17, dt=2e-3, nt=50)
        traj = [np.ones(prob.grid.shape) for _ in range(prob.nt + 1)]
        rep = check_gradient_estimate(traj, prob, q=4.0, tol=1e-9, constant=1.0)
        assert rep.entries[0].lhs == 0.0
        assert rep.passed()

    def test_gradient_estimate_ratio_and_identity(self):
        prob = translation_problem(n=33, dt=1e-3, nt=200)
        traj = solve_continuity(prob)
        rep = check_gradient_estimate(traj, prob, q=4.0, tol=1e-9, p=4.0)
        e = rep.entries[0]
        assert e.passed is None       # uncalibrated: ratio only
        assert e.ratio < 1.0          # the analytic bound dominates here
        assert e.extras["exponent_condition_ok"]
        # reconstruction of the inflow normal derivative matches one-sided
        # differences once the emitted wave covers the first layer
        assert e.extras["normal_derivative_mismatch_final"] <= 5.0 * prob.grid.hx

    def test_gradient_estimate_detects_corruption(self):
        prob = translation_problem(n=17, dt=2e-3, nt=50)
        traj = solve_continuity(prob)
        rep0 = check_gradient_estimate(traj, prob, q=4.0, tol=1e-9)
        const = 2.0 * rep0.entries[0].ratio
        mean = [float(r.mean()) for r in traj]
        bad = [m + 10.0 * (r - m) for r, m in zip(traj, mean)]
        rep = check_gradient_estimate(bad, prob, q=4.0, tol=1e-9, constant=const)
        assert not rep.passed()


class TestMinMaxBounds:
    def test_zero_divergence_constant_bounds(self):
        prob = translation_problem(n=17, dt=2e-3, nt=50)
        div_sup = np.zeros(prob.nt + 1)
        lower, upper = density_minmax_bounds(prob, div_sup)
        assert lower[0] == pytest.approx(1.0)
        np.testing.assert_allclose(lower, lower[0] * np.ones_like(lower))
        # boundary data grows like 1 + t, so the upper envelope tracks it
        assert upper[-1] == pytest.approx(1.0 + 0.1, rel=1e-12)

    def test_uniform_divergence_envelopes(self):
        prob = expansion_problem(rate=1.0, r=2.0, nt=100, dt=1e-3)
        div_sup = np.ones(prob.nt + 1)
        lower, upper = density_minmax_bounds(prob, div_sup)
        ts = prob.dt * np.arange(prob.nt + 1)
        np.testing.assert_allclose(lower, 2.0 * np.exp(-ts), rtol=1e-12)
        np.testing.assert_allclose(upper, 2.0 * np.exp(ts), rtol=1e-12)

    def test_computed_density_sits_on_lower_bound(self):
        prob = expansion_problem(rate=1.0, r=2.0, nt=100, dt=1e-3)
        traj = solve_continuity(prob)
        from openmhd.core_fields import divergence
        div_sup = [float(np.max(np.abs(divergence(v, prob.grid))))
                   for v in prob.v_traj]
        lower, _ = density_minmax_bounds(prob, div_sup)
        for k, r in enumerate(traj):
            np.testing.assert_allclose(r, lower[k], rtol=1e-10)

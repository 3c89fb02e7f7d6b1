import numpy as np
import pytest

from osscontrol.matlib import (
    SubspaceBasis,
    null_basis,
    numerical_rank,
    range_basis,
    solve_linear,
    subspace_equal,
)
from osscontrol.plant import PlantMatrices, UncertainPlant, eval_plant, fixed_plant
from osscontrol.power import build_swing_plant, default_network
from osscontrol.subspaces import (
    check_prop6_detectability_condition,
    check_rerfs_range_condition,
    check_rfs,
    check_robust_full_rank,
    check_ros,
    equilibrium_geometry,
)

from helpers import random_plant


def swing_pieces(delta=0.0):
    net = default_network()
    up = build_swing_plant(net)
    pm = eval_plant(up, [delta])
    return net, up, pm


class TestEquilibriumGeometry:
    def test_perturbed_two_state_direction(self, two_state_family):
        # from the plant equations the equilibrium outputs move along (1, 1+delta)
        for d in (0.0, 0.5, -0.5):
            pm = eval_plant(two_state_family, [d])
            geom = equilibrium_geometry(pm)
            expected = range_basis(np.array([[1.0], [1.0 + d]]))
            assert subspace_equal(geom.g_range, expected)

    def test_invariants(self, two_state_plant):
        geom = equilibrium_geometry(two_state_plant, h_eq=None)
        ab = np.hstack([two_state_plant.a, two_state_plant.b])
        assert np.abs(ab @ geom.ndelta).max() < 1e-8
        assert np.abs(geom.gperp @ geom.g).max() < 1e-8
        assert geom.gperp.shape[0] + geom.g_range.dim == two_state_plant.p

    def test_swing_network_output_span(self):
        net, _, pm = swing_pieces(0.3)
        geom = equilibrium_geometry(pm)
        damping = np.diag(1.3 * net.damping)
        explicit = np.block([
            [damping @ np.ones((net.n, 1)), net.incidence()],
            [np.ones((net.n, 1)), np.zeros((net.n, net.n_lines))],
        ])
        assert subspace_equal(geom.g_range, range_basis(explicit))

    def test_swing_null_space_matches_explicit_basis(self):
        net, _, pm = swing_pieces(0.0)
        ab = np.hstack([pm.a, pm.b])
        explicit = np.block([
            [np.ones((net.n, 1)), np.zeros((net.n, net.n_lines))],
            [np.zeros((net.n_lines, 1)), np.eye(net.n_lines)],
            [np.diag(net.damping) @ np.ones((net.n, 1)), net.incidence()],
        ])
        assert np.abs(ab @ explicit).max() < 1e-12
        nb = null_basis(ab)
        assert subspace_equal(nb, range_basis(explicit))
        # rank from the explicit null dimension: cols(ab) - (1 + n_lines)
        assert numerical_rank(ab) == ab.shape[1] - explicit.shape[1]

    def test_swing_annihilator_row_space(self):
        net, _, pm = swing_pieces(0.0)
        geom = equilibrium_geometry(pm)
        total_damping = float(np.ones(net.n) @ np.diag(net.damping) @ np.ones(net.n))
        explicit = np.hstack([
            np.ones((net.n, net.n)), -total_damping * np.eye(net.n),
        ])
        assert subspace_equal(range_basis(geom.gperp.T), range_basis(explicit.T))

    def test_membership_constancy_across_equilibria(self):
        # every achievable equilibrium output lands on the same affine slice
        rng = np.random.default_rng(31)
        for _ in range(5):
            pm = random_plant(rng, 4, 2, 3)
            geom = equilibrium_geometry(pm)
            w = rng.standard_normal(1)
            ab = np.hstack([pm.a, pm.b])
            z0 = solve_linear(ab, -pm.bw @ w)
            nb = null_basis(ab).basis
            ref = None
            for _ in range(200):
                z = z0 + nb @ rng.standard_normal(nb.shape[1])
                y = np.hstack([pm.c, pm.d]) @ z + pm.q @ w
                proj = geom.gperp @ y
                if ref is None:
                    ref = proj
                assert np.abs(proj - ref).max() < 1e-8 * (1 + np.abs(ref).max())

    def test_basis_independence_under_state_permutation(self):
        rng = np.random.default_rng(32)
        pm = random_plant(rng, 5, 2, 3)
        perm = np.eye(5)[rng.permutation(5)]
        pm2 = PlantMatrices(a=perm @ pm.a @ perm.T, b=perm @ pm.b, bw=perm @ pm.bw,
                            c=pm.c @ perm.T, d=pm.d, q=pm.q)
        h = rng.standard_normal((1, 3))
        g1 = equilibrium_geometry(pm, h)
        g2 = equilibrium_geometry(pm2, h)
        assert subspace_equal(g1.g_range, g2.g_range)
        assert subspace_equal(g1.t_basis, g2.t_basis)

    def test_empty_null_space_plant(self):
        # x_dot = -x with no inputs: no equilibrium freedom, annihilator is identity
        pm = PlantMatrices(a=[[-1.0]], b=np.zeros((1, 0)), bw=[[1.0]],
                           c=[[1.0]], d=np.zeros((1, 0)), q=np.zeros((1, 1)))
        geom = equilibrium_geometry(pm)
        assert geom.g.shape[1] == 0
        assert np.allclose(geom.gperp, np.eye(1))


class TestCheckRos:
    def test_nominal_two_state_holds(self, nominal_two_state):
        rep = check_ros(nominal_two_state)
        assert rep["holds"]
        assert subspace_equal(range_basis(rep["g0"]),
                              range_basis(np.array([[1.0], [1.0]])))

    def test_perturbed_family_fails_with_witness(self):
        def evaluate(delta):
            d = float(delta[0])
            return PlantMatrices(
                a=[[-1.0 - d, 0.0], [1.0 + d, -1.0]], b=[[1.0], [-1.0]],
                bw=[[1.0], [1.0]], c=[[1.0, 0.0], [0.0, 0.0]], d=[[0.0], [1.0]],
                q=np.zeros((2, 1)),
            )

        up = UncertainPlant(evaluate=evaluate, delta_dim=1,
                            delta_samples=[[0.0], [0.5], [-0.5]])
        rep = check_ros(up)
        assert not rep["holds"]
        ref, bad = rep["witness"]
        assert np.allclose(ref, [0.0]) and np.allclose(bad, [0.5])

    def test_single_sample_always_holds(self):
        rng = np.random.default_rng(33)
        up = fixed_plant(random_plant(rng, 3, 2, 3))
        assert check_ros(up)["holds"]


class TestCheckRfs:
    def test_swing_network_holds_with_expected_span(self):
        net = default_network()
        up = build_swing_plant(net)
        h = np.hstack([np.zeros((net.n, net.n)), np.eye(net.n)])
        rep = check_rfs(up, h)
        assert rep["holds"]
        # feasible directions are (v, 0) with the entries of v summing to zero
        vecs = np.vstack([np.eye(net.n - 1), -np.ones((1, net.n - 1)),
                          np.zeros((net.n, net.n - 1))])
        assert subspace_equal(range_basis(rep["t0"]), range_basis(vecs))

    def test_perturbed_family_fails(self, two_state_family):
        assert not check_rfs(two_state_family)["holds"]

    def test_ros_implies_rfs(self):
        rng = np.random.default_rng(34)
        scenarios = []
        base = random_plant(rng, 3, 3, 3)
        scenarios.append(fixed_plant(base))

        def scaled(delta):
            s = 1.0 + 0.5 * float(delta[0])
            return PlantMatrices(a=s * base.a, b=s * base.b, bw=base.bw,
                                 c=base.c, d=base.d, q=base.q)

        scenarios.append(UncertainPlant(evaluate=scaled, delta_dim=1,
                                        delta_samples=[[0.0], [1.0]]))
        h = rng.standard_normal((1, 3))
        for up in scenarios:
            if check_ros(up)["holds"]:
                assert check_rfs(up, h)["holds"]

    def test_delta_dependent_equalities(self, two_state_plant):
        # scaled dynamics keep the output span fixed while H(delta) rescales its
        # row: the feasible slice stays (1, 1), so the property holds with a
        # fixed matrix even though H varies
        base = two_state_plant

        def evaluate(delta):
            s = 1.0 + 0.5 * float(delta[0])
            return PlantMatrices(a=s * base.a, b=s * base.b, bw=base.bw,
                                 c=base.c, d=base.d, q=base.q)

        up = UncertainPlant(evaluate=evaluate, delta_dim=1,
                            delta_samples=[[0.0], [1.0], [-1.0]])

        def h_of(delta):
            return (1.0 + 0.5 * float(delta[0])) * np.array([[1.0, -1.0]])

        rep = check_rfs(up, h_of)
        assert rep["holds"]
        assert subspace_equal(range_basis(rep["t0"]),
                              range_basis(np.array([[1.0], [1.0]])))

        def h_bad(delta):
            d = float(delta[0])
            return np.array([[1.0, -1.0 - d]])

        assert not check_rfs(up, h_bad)["holds"]


class TestRobustFullRank:
    def test_single_integrator(self):
        pm = PlantMatrices(a=[[0.0]], b=[[1.0]], bw=[[1.0]], c=[[1.0]], d=[[0.0]],
                           q=[[0.0]])
        assert check_robust_full_rank(fixed_plant(pm))

    def test_more_outputs_than_inputs_fails(self, singular_unstable_plant):
        # n + p exceeds the column count n + m, so full row rank is impossible
        assert not check_robust_full_rank(fixed_plant(singular_unstable_plant))

    def test_swing_fails(self):
        _, up, _ = swing_pieces()
        assert not check_robust_full_rank(up)


class TestReducedErrorRangeCondition:
    def test_empty_equalities_vacuous(self, nominal_two_state):
        rep = check_rerfs_range_condition(nominal_two_state, np.zeros((0, 2)),
                                          np.zeros((2, 0)))
        assert rep["holds"]

    def test_swing_full_frequency_constraint(self):
        # subspace matrix [laplacian'; 0]: its transpose spans the orthogonal
        # complement of the left-null vector of the Laplacian, and F = I pushes
        # the all-ones direction out of it, so the spaces meet only at zero
        net, up, _ = swing_pieces()
        h = np.hstack([np.zeros((net.n, net.n)), np.eye(net.n)])
        t0 = np.vstack([net.laplacian.T, np.zeros((net.n, net.n))])
        assert check_rerfs_range_condition(up, h, t0)["holds"]

    def test_alternating_frequency_weights_fail(self):
        # F 1 nonzero but orthogonal to the Laplacian's left-null vector puts
        # the weighted-frequency direction inside the averaging span
        net, up, _ = swing_pieces()
        f = np.diag([1.0, -1.0, 1.0, -1.0])
        h = np.hstack([np.zeros((net.n, net.n)), f])
        t0 = np.vstack([net.laplacian.T, np.zeros((net.n, net.n))])
        assert not check_rerfs_range_condition(up, h, t0)["holds"]

    def test_square_full_rank_projection_fails(self, nominal_two_state):
        # t0' spans everything, so any nonzero H G direction lands inside it
        h = np.array([[1.0, 0.0]])
        t0 = np.array([[1.0], [0.0]])
        rep = check_rerfs_range_condition(nominal_two_state, h, t0)
        # H G = [1 0] @ (1,1) = 1 != 0 and range t0' = R^1
        assert not rep["holds"]


class TestProp6DetectabilityCondition:
    def test_full_rank_projection_holds(self, nominal_two_state):
        h = np.array([[1.0, 0.0]])
        t0 = np.array([[1.0], [0.0]])
        assert check_prop6_detectability_condition(nominal_two_state, h, t0)

    def test_annihilated_output_with_deficient_projection_fails(self):
        # H G = 0 and t0 = 0: both complements are everything
        pm = PlantMatrices(a=[[-1.0]], b=[[1.0]], bw=[[1.0]],
                           c=[[1.0], [0.0]], d=[[0.0], [1.0]], q=np.zeros((2, 1)))
        up = fixed_plant(pm)
        geom = equilibrium_geometry(pm)
        h = geom.gperp[:1, :]
        t0 = np.zeros((2, 1))
        assert not check_prop6_detectability_condition(up, h, t0)

    def test_swing_dapi_case(self):
        net, up, _ = swing_pieces()
        h = np.hstack([np.zeros((net.n, net.n)), np.eye(net.n)])
        t0 = np.vstack([net.laplacian.T, np.zeros((net.n, net.n))])
        assert check_prop6_detectability_condition(up, h, t0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from packing_sim.config_space import (
    ResourceProfile,
    enumerate_configs,
    validate_explicit_configs,
)
from packing_sim.optimizer import (
    Allocation,
    Demand,
    StatePoint,
    aggregate_objective,
    class_totals,
    constraint_matrix,
    drift,
    feasibility_gap,
    kkt_certificate,
    min_drift,
    neutral_allocation,
    no_simple_improvement,
    objective,
    project_to_polytope,
    simple_improving_allocations,
    solve_aggregate_optimum,
    solve_optimum,
    weight_diff,
)

from oracle_grid import grid_search


def scalar_space(m):
    return validate_explicit_configs([(j,) for j in range(1, m + 1)])


def unit_demand(n=1):
    return Demand(np.ones(n), np.ones(n))


def b3_instance():
    space = enumerate_configs(ResourceProfile((3.0,), ((1.0,), (2.0,))))
    return space, Demand(np.array([0.5, 0.25]), np.array([1.0, 1.0]))


class TestDemand:
    def test_normalizes_total_load(self):
        d = Demand(np.array([2.0, 4.0]), np.array([1.0, 2.0]))
        assert np.isclose(np.sum(d.rho), 1.0)
        assert np.isclose(d.scale, 4.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Demand(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            Demand(np.array([1.0]), np.array([-1.0]))


class TestProjection:
    def test_hand_case(self):
        # project (0.5, 0.1) onto x1 + 2 x2 = 1, x >= 0
        A = np.array([[1.0, 2.0]])
        b = np.array([1.0])
        x = project_to_polytope(A, b, np.array([0.5, 0.1]))
        assert np.allclose(x, [0.56, 0.22], atol=1e-12)

    def test_negative_gets_pinned(self):
        A = np.array([[1.0, 2.0]])
        b = np.array([1.0])
        x = project_to_polytope(A, b, np.array([-5.0, 0.0]))
        assert x[0] == 0.0
        assert np.isclose(x[1], 0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_projection_optimality(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, min(3, n) + 1))
        A = rng.uniform(0.0, 2.0, size=(m, n))
        xf = rng.uniform(0.0, 1.0, size=n)  # guarantees feasibility
        b = A @ xf
        z = rng.uniform(-1.0, 1.0, size=n)
        x = project_to_polytope(A, b, z)
        assert np.min(x) >= -1e-12
        assert np.max(np.abs(A @ x - b)) < 1e-8
        # no feasible perturbation may be closer than the projection
        for _ in range(20):
            y = project_to_polytope(A, b, x + rng.normal(scale=0.1, size=n))
            assert np.dot(x - z, x - z) <= np.dot(y - z, y - z) + 1e-9


class TestObjective:
    def test_value(self):
        assert np.isclose(objective(StatePoint(np.array([0.2, 0.4]), 1.0)), 0.1)

    def test_class_totals_and_aggregate(self):
        space, demand = b3_instance()
        x = np.ones(space.num_configs) * 0.1
        s = class_totals(space, x)
        assert s[0] == 0.0
        assert np.isclose(np.sum(s), 0.5)
        val = aggregate_objective(space, StatePoint(x, 1.0))
        assert np.isclose(val, np.sum(s[1:] ** 2) / 2.0)

    def test_weights_hook(self):
        st_pt = StatePoint(np.array([0.2, 0.4]), 1.0)
        w = objective(st_pt, weights=np.array([1.0, 2.0]))
        assert w > objective(st_pt)
        space, _ = b3_instance()
        with pytest.raises(NotImplementedError):
            aggregate_objective(space, StatePoint(np.ones(5) * 0.1, 1.0),
                                weights=np.ones(5))


class TestSolveOptimum:
    def test_two_config_closed_form(self):
        space = scalar_space(2)
        state, cert = solve_optimum(space, unit_demand(), 1.0)
        assert np.max(np.abs(state.x - [0.2, 0.4])) < 1e-9
        assert cert.residual <= 1e-10
        assert np.isclose(cert.eta[0], 0.2, atol=1e-9)

    def test_three_config_closed_form(self):
        space = scalar_space(3)
        state, cert = solve_optimum(space, unit_demand(), 1.0)
        assert np.max(np.abs(state.x - [1 / 14, 2 / 14, 3 / 14])) < 1e-9
        assert cert.residual <= 1e-10

    def test_feasibility(self):
        space, demand = b3_instance()
        state, cert = solve_optimum(space, demand, 1.0)
        assert feasibility_gap(space, state, demand) < 1e-9
        assert cert.residual <= 1e-8

    def test_matches_grid_oracle_alpha_half(self):
        space = scalar_space(3)
        d = unit_demand()
        state, _ = solve_optimum(space, d, 0.5)
        _, x_grid = grid_search(space, d, 0.5, step=2e-3)
        assert np.max(np.abs(state.x - x_grid)) < 4e-3

    def test_certificate_flags_non_optimal_point(self):
        space = scalar_space(2)
        x = np.array([0.6, 0.2])  # feasible but not optimal
        cert = kkt_certificate(space, StatePoint(x, 1.0), unit_demand())
        assert cert.residual > 0.05


class TestAggregateSolve:
    def test_b3_value_against_grid(self):
        space, demand = b3_instance()
        state, value = solve_aggregate_optimum(space, demand, 1.0)
        val_grid, _ = grid_search(space, demand, 1.0, step=2e-3, aggregate=True)
        assert abs(value - val_grid) < 2e-3
        assert feasibility_gap(space, state, demand) < 1e-7

    def test_aggregate_never_above_plain(self):
        # the class objective optimum cannot exceed the value the plain
        # optimizer achieves for the same instance
        space, demand = b3_instance()
        plain, _ = solve_optimum(space, demand, 1.0)
        _, value = solve_aggregate_optimum(space, demand, 1.0)
        assert value <= aggregate_objective(space, plain) + 1e-9

    def test_aggregate_certificate(self):
        space, demand = b3_instance()
        state, _ = solve_aggregate_optimum(space, demand, 1.0)
        cert = kkt_certificate(space, state, demand, aggregate=True)
        assert cert.residual <= 1e-6

    def test_singleton_classes_match_plain(self):
        prof = ResourceProfile((2.0,), ((1.0,),))
        space = enumerate_configs(prof)
        d = unit_demand()
        plain, _ = solve_optimum(space, d, 1.0)
        agg, value = solve_aggregate_optimum(space, d, 1.0)
        assert np.max(np.abs(plain.x - agg.x)) < 1e-6
        assert np.isclose(value, objective(plain), atol=1e-9)


class TestDrift:
    def test_weight_diff_hand_values(self):
        space = scalar_space(2)
        state = StatePoint(np.array([3.0, 5.0]), 1.0)
        e1 = space.edge_index((1,), 0)
        e2 = space.edge_index((2,), 0)
        assert weight_diff(space, state, e1) == 3.0
        assert weight_diff(space, state, e2) == 2.0

    def test_neutral_allocation_is_zero_drift(self):
        space = scalar_space(2)
        demand = unit_demand()
        state = StatePoint(np.array([0.6, 0.2]), 1.0)
        gamma = neutral_allocation(space, state, demand)
        assert np.isclose(drift(space, gamma, state, demand), 0.0, atol=1e-12)
        e2 = space.edge_index((2,), 0)
        assert np.isclose(gamma.gamma[e2], 2 * 0.2)

    def test_si_moves_find_the_improvement(self):
        space = scalar_space(2)
        demand = unit_demand()
        state = StatePoint(np.array([0.6, 0.2]), 1.0)
        found = simple_improving_allocations(space, state, demand)
        assert found, "expected at least one improving move"
        drifts = [drift(space, a, state, demand) for a, _ in found]
        assert min(drifts) < 0
        # full donor mass 0.6 moved from the unit edge to the pair edge
        assert np.isclose(min(drifts), -0.6)

    def test_min_drift_zero_at_optimum(self):
        space = scalar_space(2)
        demand = unit_demand()
        state, _ = solve_optimum(space, demand, 1.0)
        assert min_drift(space, state, demand) == 0.0

    def test_min_drift_negative_off_optimum(self):
        space = scalar_space(2)
        demand = unit_demand()
        assert min_drift(space, StatePoint(np.array([0.6, 0.2]), 1.0), demand) < -0.5

    def test_no_simple_improvement_witness(self):
        space, demand = b3_instance()
        state, _ = solve_aggregate_optimum(space, demand, 1.0)
        ok, witness = no_simple_improvement(space, state)
        assert ok and witness is None
        x = np.zeros(space.num_configs)
        rho = demand.rho
        x[space.unit_index[0]] = rho[0]
        x[space.unit_index[1]] = rho[1]
        ok, witness = no_simple_improvement(space, StatePoint(x, 1.0))
        assert not ok
        assert witness is not None


@st.composite
def small_instances(draw):
    m = draw(st.integers(2, 4))
    space = scalar_space(m)
    lam = draw(st.floats(0.5, 2.0))
    mu = draw(st.floats(0.5, 2.0))
    alpha = draw(st.sampled_from([0.5, 1.0, 2.0]))
    return space, Demand(np.array([lam]), np.array([mu])), alpha


@settings(max_examples=25, deadline=None)
@given(small_instances())
def test_solver_properties(inst):
    space, demand, alpha = inst
    state, cert = solve_optimum(space, demand, alpha)
    assert cert.residual <= 1e-8
    assert feasibility_gap(space, state, demand) < 1e-9
    assert np.min(state.x) >= 0.0
    # the optimum admits no improving move
    assert min_drift(space, state, demand) >= -1e-9


@settings(max_examples=25, deadline=None)
@given(small_instances(), st.integers(0, 2**31 - 1))
def test_drift_nonpositive_everywhere(inst, seed):
    space, demand, alpha = inst
    rng = np.random.default_rng(seed)
    A = constraint_matrix(space)
    z = rng.uniform(0.0, 1.0, size=space.num_configs)
    x = project_to_polytope(A, demand.rho, z)
    assert min_drift(space, StatePoint(x, alpha), demand) <= 1e-12

"""
Forest, adaptation rules, node layout and hanging-node constraints
"""
import numpy as np
import pytest

from adaptopt.errors import InvalidArgumentError, LevelCapError, PreconditionError
from adaptopt.models.mesh import (
    AdaptFlag, AdaptFlags, ConstraintSet, Forest, NodeLayout, build_hanging_constraints, child_keys,
    create_base_mesh, execute_adaptation, parent_key, refine_uniform
)


def find_node(layout, x, y):
    distance = np.hypot(layout.coords[:, 0] - x, layout.coords[:, 1] - y)
    node = int(np.argmin(distance))
    assert distance[node] < 1e-12
    return node


def adapt(forest, **flags):
    """Execute flags given as refine=[keys], coarsen=[keys]"""
    wanted = {key: AdaptFlag.REFINE for key in flags.get('refine', [])}
    wanted.update({key: AdaptFlag.COARSEN for key in flags.get('coarsen', [])})
    return execute_adaptation(forest, AdaptFlags(forest, wanted))


@pytest.fixture
def one_refined_cell():
    """2x1 base grid with the left cell quadrisected"""
    forest = create_base_mesh(2, 1, 2.0, 1.0, max_level=2)
    return adapt(forest, refine=[(0, 0, 0)])


class TestForest:
    def test_base_mesh_counts(self):
        forest = create_base_mesh(20, 10, 2.0, 1.0)
        assert forest.n_active == 200
        assert forest.domain_area() == pytest.approx(2.0)
        assert forest.is_balanced()

    def test_invalid_base_mesh(self):
        with pytest.raises(InvalidArgumentError):
            create_base_mesh(0, 3, 1.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            create_base_mesh(2, 2, 1.0, 1.0, excluded=[(0, 0), (1, 0), (0, 1), (1, 1)])

    def test_uniform_refinement(self):
        forest = refine_uniform(create_base_mesh(20, 10, 2.0, 1.0), 1)
        assert forest.n_active == 800
        assert set(forest.levels()) == {1}
        assert np.sum(forest.areas()) == pytest.approx(2.0, abs=1e-12)

    def test_uniform_refinement_to_level_four(self):
        forest = refine_uniform(create_base_mesh(20, 10, 2.0, 1.0, max_level=4), 4)
        assert forest.n_active == 20 * 10 * 4 ** 4

    def test_uniform_refinement_respects_level_cap(self):
        forest = create_base_mesh(2, 2, 1.0, 1.0, max_level=1)
        with pytest.raises(LevelCapError):
            refine_uniform(forest, 2)

    def test_parent_child_keys(self):
        children = child_keys((1, 2, 3))
        assert children == [(2, 4, 6), (2, 5, 6), (2, 4, 7), (2, 5, 7)]
        assert all(parent_key(c) == (1, 2, 3) for c in children)
        assert parent_key((0, 1, 1)) is None

    def test_path_keys(self, one_refined_cell):
        forest = one_refined_cell
        for key in forest.active_keys():
            assert forest.key_from_path(forest.path_key(key)) == key
        assert forest.path_key((1, 1, 1)) == '0/3'

    def test_locate(self, one_refined_cell):
        assert one_refined_cell.locate(0.9, 0.1) == (1, 1, 0)
        assert one_refined_cell.locate(1.5, 0.5) == (0, 1, 0)
        assert one_refined_cell.locate(2.0, 1.0) == (0, 1, 0)

    def test_locate_in_excluded_cell(self):
        forest = create_base_mesh(2, 2, 2.0, 2.0, excluded=[(1, 1)])
        with pytest.raises(InvalidArgumentError):
            forest.locate(1.5, 1.5)

    def test_neighbors_across_levels(self, one_refined_cell):
        assert one_refined_cell.neighbors((0, 1, 0), 0) == [(1, 1, 0), (1, 1, 1)]
        assert one_refined_cell.neighbors((1, 1, 1), 1) == [(0, 1, 0)]
        assert one_refined_cell.neighbors((1, 0, 0), 0) == []

    def test_dump_restores_forest(self, one_refined_cell):
        adapt(one_refined_cell, refine=[(1, 1, 1)])
        restored = Forest.from_dump(one_refined_cell.dump())
        assert restored.active_keys() == one_refined_cell.active_keys()
        assert restored.max_level == one_refined_cell.max_level

    def test_dump_keeps_excluded_cells(self):
        forest = create_base_mesh(3, 3, 3.0, 3.0, excluded=[(2, 2), (1, 2)])
        restored = Forest.from_dump(forest.dump())
        assert restored.excluded == {(2, 2), (1, 2)}
        assert restored.n_active == 7

    def test_dump_without_header_is_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Forest.from_dump('0/ 0 1\n')

    def test_reentrant_corner_of_l_shape(self):
        excluded = [(i, j) for j in range(5, 20) for i in range(5, 10)]
        forest = create_base_mesh(10, 20, 1.0, 2.0, excluded=excluded)
        corners = forest.reentrant_corners()
        assert len(corners) == 1
        assert corners[0] == pytest.approx((0.5, 0.5))
        assert forest.domain_area() == pytest.approx(1.25)


class TestAdaptFlags:
    def test_refine_wins_over_coarsen(self):
        forest = create_base_mesh(2, 1, 2.0, 1.0)
        flags = AdaptFlags.from_masks(forest, [True, False], [True, True])
        assert flags.as_list() == [AdaptFlag.REFINE, AdaptFlag.COARSEN]

    def test_unknown_cell_is_rejected(self):
        forest = create_base_mesh(2, 1, 2.0, 1.0)
        with pytest.raises(PreconditionError):
            AdaptFlags(forest, {(1, 0, 0): AdaptFlag.REFINE})

    def test_stale_flags_are_rejected(self, one_refined_cell):
        flags = AdaptFlags(one_refined_cell)
        adapt(one_refined_cell, refine=[(0, 1, 0)])
        with pytest.raises(PreconditionError):
            execute_adaptation(one_refined_cell, flags)


class TestExecuteAdaptation:
    def test_single_refinement(self):
        forest = adapt(create_base_mesh(4, 4, 4.0, 4.0), refine=[(0, 1, 1)])
        assert forest.n_active == 19
        assert forest.last_adaptation['refined'] == 1

    def test_balance_closure_promotes_coarse_neighbours(self):
        forest = create_base_mesh(4, 4, 4.0, 4.0, max_level=3)
        adapt(forest, refine=[(0, 0, 0)])
        adapt(forest, refine=[(1, 1, 1)])
        assert forest.last_adaptation['promoted'] == 2
        assert forest.last_adaptation['refined'] == 3
        assert forest.n_active == 28
        assert forest.is_balanced()

    def test_refine_at_max_level_is_dropped(self):
        forest = refine_uniform(create_base_mesh(2, 2, 1.0, 1.0, max_level=1), 1)
        adapt(forest, refine=list(forest.active_keys()))
        assert forest.n_active == 16
        assert forest.last_adaptation['dropped_refine'] == 16
        assert forest.max_active_level() == 1

    def test_partial_sibling_set_is_not_coarsened(self, one_refined_cell):
        forest = adapt(one_refined_cell, coarsen=child_keys((0, 0, 0))[:3])
        assert forest.n_active == 5
        assert forest.last_adaptation['coarsened'] == 0

    def test_full_sibling_set_is_coarsened(self, one_refined_cell):
        forest = adapt(one_refined_cell, coarsen=child_keys((0, 0, 0)))
        assert forest.n_active == 2
        assert (0, 0, 0) in forest.active_keys()

    def test_refine_flag_blocks_sibling_coarsening(self):
        forest = refine_uniform(create_base_mesh(2, 2, 1.0, 1.0), 1)
        children = child_keys((0, 0, 0))
        adapt(forest, refine=children[:1], coarsen=children[1:])
        assert forest.last_adaptation['coarsened'] == 0
        assert forest.n_active == 19

    def test_coarsening_that_breaks_balance_is_dropped(self):
        forest = refine_uniform(create_base_mesh(2, 2, 1.0, 1.0, max_level=2), 1)
        adapt(forest, refine=[(1, 2, 0)])
        adapt(forest, coarsen=child_keys((0, 0, 0)))
        assert forest.last_adaptation['coarsened'] == 0
        assert forest.is_balanced()

    def test_unrefined_island_is_refined(self):
        forest = create_base_mesh(3, 3, 3.0, 3.0, max_level=2)
        ring = [key for key in forest.active_keys() if key != (0, 1, 1)]
        adapt(forest, refine=ring)
        assert forest.last_adaptation['islands'] == 1
        assert forest.n_active == 36
        assert forest.islands() == []

    def test_excluded_cells_bound_the_domain(self):
        forest = create_base_mesh(2, 2, 2.0, 2.0, max_level=2, excluded=[(1, 1)])
        adapt(forest, refine=[(0, 0, 0)])
        assert forest.neighbors((0, 1, 0), 3) == []
        assert forest.is_balanced()


class TestConstraintSet:
    def test_chains_are_closed(self):
        constraints = ConstraintSet()
        constraints.add(0, [(1, 0.5)], 1.0)
        constraints.add(1, [(2, 2.0)], 3.0)
        constraints.close()
        assert constraints.is_closed()
        assert constraints.to_list()[0] == (0, [(2, 1.0)], 2.5)

    def test_first_constraint_on_a_slave_wins(self):
        constraints = ConstraintSet()
        assert constraints.add(4, [], 1.0)
        assert not constraints.add(4, [], 2.0)
        assert constraints.to_list() == [(4, [], 1.0)]

    def test_cycles_are_rejected(self):
        constraints = ConstraintSet()
        constraints.add(0, [(1, 1.0)])
        constraints.add(1, [(0, 1.0)])
        with pytest.raises(PreconditionError):
            constraints.close()

    def test_condense_and_distribute_agree(self):
        constraints = ConstraintSet()
        constraints.add(1, [(0, 0.5), (2, 0.5)])
        constraints.add(3, [], 0.25)
        C, g, free = constraints.condense(4)
        np.testing.assert_array_equal(free, [0, 2])
        u = C @ np.array([1.0, 3.0]) + g
        np.testing.assert_allclose(u, [1.0, 2.0, 3.0, 0.25])
        np.testing.assert_allclose(constraints.distribute([1.0, 0.0, 3.0, 0.0]), u)


class TestNodeLayout:
    def test_biquadratic_node_count(self):
        forest = refine_uniform(create_base_mesh(20, 10, 2.0, 1.0), 1)
        layout = NodeLayout(forest, degree=2)
        assert layout.n_nodes == 81 * 41
        assert layout.n_dofs == 2 * 81 * 41
        assert not layout.hanging

    def test_bilinear_node_count(self):
        layout = NodeLayout(create_base_mesh(4, 3, 4.0, 3.0), degree=1, components=1)
        assert layout.n_nodes == 20
        assert layout.n_dofs == 20

    def test_quadratic_hanging_weights(self, one_refined_cell):
        layout = NodeLayout(one_refined_cell, degree=2)
        assert len(layout.hanging) == 2

        node = find_node(layout, 1.0, 0.25)
        masters = dict(layout.hanging[node])
        expected = {
            find_node(layout, 1.0, 0.0): 0.375,
            find_node(layout, 1.0, 0.5): 0.75,
            find_node(layout, 1.0, 1.0): -0.125,
        }
        assert masters.keys() == expected.keys()
        for master, weight in expected.items():
            assert masters[master] == pytest.approx(weight, abs=1e-14)

    def test_linear_hanging_weights(self, one_refined_cell):
        layout = NodeLayout(one_refined_cell, degree=1)
        node = find_node(layout, 1.0, 0.5)
        assert list(layout.hanging) == [node]
        masters = dict(layout.hanging[node])
        assert masters == {find_node(layout, 1.0, 0.0): 0.5, find_node(layout, 1.0, 1.0): 0.5}

    def test_vector_constraints_per_component(self, one_refined_cell):
        layout = NodeLayout(one_refined_cell, degree=2, components=2)
        constraints = build_hanging_constraints(one_refined_cell, layout)
        assert len(constraints) == 4
        node = find_node(layout, 1.0, 0.75)
        assert 2 * node in constraints and 2 * node + 1 in constraints

    def test_stale_layout_is_rejected(self, one_refined_cell):
        layout = NodeLayout(one_refined_cell, degree=2)
        adapt(one_refined_cell, refine=[(0, 1, 0)])
        with pytest.raises(PreconditionError):
            build_hanging_constraints(one_refined_cell, layout)

    def test_boundary_nodes(self):
        layout = NodeLayout(create_base_mesh(2, 2, 1.0, 1.0), degree=2)
        assert int(np.sum(layout.is_boundary)) == 16
        assert not layout.is_boundary[find_node(layout, 0.5, 0.5)]

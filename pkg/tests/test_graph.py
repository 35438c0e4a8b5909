import itertools

import networkx as nx
import numpy as np
import pytest

from qmgraph.errors import CapacityError, GraphError
from qmgraph.graph import (
    GraphState,
    connect,
    dumps,
    edge_graph,
    ghz_star,
    loads,
    pbs_connect_dense,
    single_node,
    stabilizer,
    stabilizer_expectations,
    to_dense,
    to_statevector,
    tree_graph,
)
from qmgraph.quantum import fidelity_to_pure


def small_graphs(max_nodes=3):
    """Every labelled graph on 1..max_nodes nodes."""
    for n in range(1, max_nodes + 1):
        pairs = list(itertools.combinations(range(n), 2))
        for mask in range(1 << len(pairs)):
            yield GraphState.from_edges([pairs[k] for k in range(len(pairs)) if mask >> k & 1], range(n))


def as_nx(g: GraphState) -> nx.Graph:
    h = nx.Graph()
    h.add_nodes_from(g.nodes)
    h.add_edges_from(g.sorted_edges())
    return h


class TestGraphState:
    def test_rejects_dangling_edge(self):
        with pytest.raises(GraphError):
            GraphState(frozenset({0}), frozenset({frozenset({0, 1})}))

    def test_rejects_self_loop(self):
        with pytest.raises(GraphError):
            GraphState.from_edges([(1, 1)])

    def test_neighbors_and_degree(self):
        g = ghz_star(4)
        assert g.neighbors(0) == {1, 2, 3}
        assert g.degree(2) == 1

    def test_star_stabilizers(self):
        assert all(abs(v - 1) < 1e-12 for v in stabilizer_expectations(ghz_star(4)).values())

    def test_stabilizer_label(self):
        assert stabilizer(edge_graph(), 0).label == "XZ"

    def test_dense_cap(self):
        with pytest.raises(CapacityError):
            to_statevector(ghz_star(6), max_qubits=5)


class TestConnect:
    def test_two_edges_make_a_path(self):
        g = connect(edge_graph(), 1, edge_graph(), 0)
        # j = 2 keeps one edge to i = 1, i inherits 3
        assert g.sorted_edges() == [(0, 1), (1, 2), (1, 3)]
        assert g.corrections == (("H", 2),)

    def test_edge_count(self):
        for g1, g2 in [(ghz_star(3), edge_graph()), (tree_graph(2), ghz_star(3))]:
            fused = connect(g1, 0, g2, 1)
            assert len(fused.edges) == len(g1.edges) + len(g2.edges) + 1

    def test_missing_node(self):
        with pytest.raises(GraphError):
            connect(edge_graph(), 5, edge_graph(), 0)

    def test_dense_construction_matches(self):
        """Exhaustive over pairs of graphs with at most five nodes in total."""
        checked = 0
        graphs = list(small_graphs(3))
        for g1 in graphs:
            for g2 in graphs:
                if len(g1) + len(g2) > 5:
                    continue
                for i in g1.nodes:
                    for j in g2.nodes:
                        fused = connect(g1, i, g2, j)
                        rho, prob = pbs_connect_dense(g1, i, g2, j)
                        assert prob == pytest.approx(0.5, abs=1e-12)
                        assert fidelity_to_pure(rho, to_statevector(fused)) > 1 - 1e-10
                        assert all(abs(v - 1) < 1e-10 for v in stabilizer_expectations(fused, rho).values())
                        checked += 1
        assert checked > 100

    def test_without_correction_differs(self):
        rho, _ = pbs_connect_dense(edge_graph(), 1, edge_graph(), 0, apply_corrections=False)
        fused = connect(edge_graph(), 1, edge_graph(), 0)
        assert fidelity_to_pure(rho, to_statevector(fused)) < 0.99


class TestTree:
    @pytest.mark.parametrize("levels", [1, 2, 3, 4, 5])
    def test_is_tree(self, levels):
        g = tree_graph(levels)
        assert len(g) == 2**levels
        assert nx.is_tree(as_nx(g))

    def test_dense_state_is_stabilized(self):
        g = tree_graph(3)
        assert all(abs(v - 1) < 1e-10 for v in stabilizer_expectations(g, to_dense(g)).values())


class TestSerialization:
    def test_round_trip(self):
        g = tree_graph(3)
        assert loads(dumps(g)) == g

    def test_isolated_nodes_survive(self):
        g = GraphState.from_edges([(0, 1)], range(3))
        assert loads(dumps(g)).nodes == {0, 1, 2}

    @pytest.mark.parametrize(
        "text", ["", "nodes x\n", "nodes 2\n0 5\n", "nodes 2\n0\n", "nodes 2\na b\n", "nodes 1\n0 0\n"]
    )
    def test_malformed(self, text):
        with pytest.raises(GraphError):
            loads(text)

    def test_requires_contiguous_labels(self):
        with pytest.raises(GraphError):
            dumps(single_node(3))

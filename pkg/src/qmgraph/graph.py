"""Symbolic graph states and the PBS connection rule.

A PBS gate on qubit ``i`` of one graph and qubit ``j`` of another fuses the
two graphs: ``j`` keeps a single edge to ``i``, and ``i`` inherits every
former neighbour of ``j``.  Physically the PBS projects ``(i, j)`` onto
``span{|00>, |11>}`` in the graph's computational basis; the result equals
the new graph state up to a Hadamard on ``j``, which :func:`connect` records
in :attr:`GraphState.corrections`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .config import MAX_QUBITS
from .errors import CapacityError, GraphError
from .quantum import (
    HADAMARD,
    DensityMatrix,
    PauliObservable,
    Projector,
    apply_unitary,
    expectation,
    permute_qubits,
    project,
    tensor,
)


@dataclass(frozen=True)
class GraphState:
    """Graph on integer-labelled qubits.

    ``corrections`` lists ``(gate, node)`` pairs that map the physical state
    left behind by the operation that built this graph onto the canonical
    graph state (CZ on every edge of ``|+>^n``).
    """

    nodes: frozenset[int]
    edges: frozenset[frozenset[int]]
    corrections: tuple[tuple[str, int], ...] = field(default=(), compare=False)

    def __post_init__(self):
        nodes = frozenset(int(v) for v in self.nodes)
        edges = frozenset(frozenset(int(v) for v in e) for e in self.edges)
        for e in edges:
            if len(e) != 2:
                raise GraphError(f"self-loop or malformed edge {sorted(e)}")
            if not e <= nodes:
                raise GraphError(f"edge {sorted(e)} references a missing node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], nodes: Iterable[int] = ()) -> "GraphState":
        edges = [frozenset(e) for e in edges]
        all_nodes = set(nodes)
        for e in edges:
            all_nodes |= e
        return cls(frozenset(all_nodes), frozenset(edges))

    def neighbors(self, v: int) -> frozenset[int]:
        if v not in self.nodes:
            raise GraphError(f"node {v} not in graph")
        return frozenset(u for e in self.edges if v in e for u in e if u != v)

    def degree(self, v: int) -> int:
        return len(self.neighbors(v))

    def sorted_nodes(self) -> list[int]:
        return sorted(self.nodes)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(tuple(sorted(e)) for e in self.edges)

    def relabel(self, offset: int) -> "GraphState":
        return GraphState(
            frozenset(v + offset for v in self.nodes),
            frozenset(frozenset(v + offset for v in e) for e in self.edges),
        )

    def __len__(self) -> int:
        return len(self.nodes)


def single_node(label: int = 0) -> GraphState:
    return GraphState(frozenset({label}), frozenset())


def edge_graph(a: int = 0, b: int = 1) -> GraphState:
    return GraphState.from_edges([(a, b)])


def ghz_star(n: int) -> GraphState:
    """Star with hub 0 and leaves ``1..n-1``; LC-equivalent to GHZ_n."""
    if n < 2:
        raise GraphError(f"a star needs at least 2 nodes, got {n}")
    return GraphState.from_edges([(0, k) for k in range(1, n)])


def connect(g1: GraphState, i: int, g2: GraphState, j: int) -> GraphState:
    """Fuse ``g1`` and ``g2`` with a PBS gate on ``i`` (in g1) and ``j`` (in g2).

    ``g2`` is relabelled by adding ``len(g1)`` to every node, so ``j`` in the
    result is ``j + len(g1)``.
    """
    if i not in g1.nodes:
        raise GraphError(f"node {i} not in first graph")
    if j not in g2.nodes:
        raise GraphError(f"node {j} not in second graph")
    offset = len(g1)
    g2r = g2.relabel(offset)
    if g1.nodes & g2r.nodes:
        raise GraphError(
            f"node collision after relabelling: {sorted(g1.nodes & g2r.nodes)}"
        )
    jj = j + offset
    nj = g2r.neighbors(jj)
    kept = {e for e in g2r.edges if jj not in e}
    edges = set(g1.edges) | kept
    edges.add(frozenset((i, jj)))
    edges |= {frozenset((i, u)) for u in nj}
    return GraphState(g1.nodes | g2r.nodes, frozenset(edges), corrections=(("H", jj),))


def tree_graph(levels: int) -> GraphState:
    """Binary-doubling tree with ``2**levels`` nodes.

    Each level fuses two copies of the previous tree on their node 0, as in
    the repeated PBS construction; ``levels=1`` is a single edge.
    """
    if levels < 1:
        raise GraphError("levels must be >= 1")
    g = edge_graph()
    for _ in range(levels - 1):
        g = connect(g, 0, g, 0)
    return GraphState(g.nodes, g.edges)


# ---------------------------------------------------------------------------
# dense export


def _check_dense(g: GraphState, max_qubits: int) -> list[int]:
    if len(g) > max_qubits:
        raise CapacityError(f"graph of {len(g)} nodes exceeds the dense cap of {max_qubits}")
    return g.sorted_nodes()


def to_statevector(g: GraphState, max_qubits: int = MAX_QUBITS) -> np.ndarray:
    """Amplitudes ``(-1)^{sum_edges x_u x_v} / sqrt(2^n)``; qubits in node order."""
    order = _check_dense(g, max_qubits)
    n = len(order)
    pos = {v: k for k, v in enumerate(order)}
    idx = np.arange(1 << n)
    bits = (idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    parity = np.zeros(1 << n, dtype=np.int64)
    for u, v in g.sorted_edges():
        parity ^= bits[:, pos[u]] & bits[:, pos[v]]
    return (1.0 - 2.0 * parity).astype(complex) / np.sqrt(1 << n)


def to_dense(g: GraphState, max_qubits: int = MAX_QUBITS) -> DensityMatrix:
    psi = to_statevector(g, max_qubits)
    return DensityMatrix(np.outer(psi, psi.conj()), validate=len(g) <= 8, max_qubits=max_qubits)


def stabilizer(g: GraphState, v: int) -> PauliObservable:
    """``X_v prod_{u in N(v)} Z_u`` in node order."""
    nb = g.neighbors(v)
    return PauliObservable(
        tuple("X" if u == v else "Z" if u in nb else "I" for u in g.sorted_nodes())
    )


def stabilizer_expectations(g: GraphState, rho: DensityMatrix | None = None) -> dict[int, float]:
    if rho is None:
        rho = to_dense(g)
    return {v: expectation(rho, stabilizer(g, v)) for v in g.sorted_nodes()}


def pbs_connect_dense(
    g1: GraphState, i: int, g2: GraphState, j: int, apply_corrections: bool = True
) -> tuple[DensityMatrix, float]:
    """Physical PBS gate on dense graph states, for checking :func:`connect`.

    Returns the renormalized postselected state (qubits in node order of the
    fused graph) and the postselection success probability.
    """
    fused = connect(g1, i, g2, j)
    g2r = g2.relabel(len(g1))
    rho = tensor(to_dense(g1), to_dense(g2r))
    reg = g1.sorted_nodes() + g2r.sorted_nodes()
    at = {v: k for k, v in enumerate(reg)}
    out, prob = project(rho, Projector.parity_even(at[i], at[j + len(g1)]), renormalize=True)
    order = fused.sorted_nodes()
    out = permute_qubits(out, [at[v] for v in order])
    pos = {v: k for k, v in enumerate(order)}
    if apply_corrections:
        for gate, v in fused.corrections:
            if gate != "H":
                raise GraphError(f"unsupported correction {gate}")
            out = apply_unitary(out, HADAMARD, (pos[v],))
    return out, prob


# ---------------------------------------------------------------------------
# text format: "nodes N" then one "u v" line per edge


def dumps(g: GraphState) -> str:
    order = g.sorted_nodes()
    if order != list(range(len(order))):
        raise GraphError("serialization requires nodes labelled 0..N-1")
    lines = [f"nodes {len(order)}"]
    lines += [f"{u} {v}" for u, v in g.sorted_edges()]
    return "\n".join(lines) + "\n"


def loads(text: str) -> GraphState:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GraphError("empty graph file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "nodes" or not head[1].isdigit():
        raise GraphError(f"bad header line {lines[0]!r}")
    n = int(head[1])
    edges = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'u v', got {ln!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"line {lineno}: non-integer node in {ln!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"line {lineno}: node out of range 0..{n - 1}")
        edges.append((u, v))
    return GraphState(frozenset(range(n)), frozenset(frozenset(e) for e in edges))

"""
Incidence, spanning tree, fundamental cycles and fundamental-flow basis of a DC network
"""
import logging
import math
from typing import Iterable, List, Optional

import networkx as nx
import numpy as np

from app.core.errors import DimensionMismatch, DisconnectedNetwork
from app.models.network import Branch, FlowStructure, Network

logger = logging.getLogger(__name__)


def to_graph(net: Network) -> nx.MultiGraph:
    """Undirected multigraph with one keyed edge per branch"""
    graph = nx.MultiGraph()
    graph.add_nodes_from(range(net.n))
    for idx, br in enumerate(net.branches):
        graph.add_edge(br.from_bus, br.to_bus, key=idx)
    return graph


def incidence_matrix(net: Network) -> np.ndarray:
    """n x m, +1 at the sending bus and -1 at the receiving bus"""
    inc = np.zeros((net.n, net.m))
    for idx, br in enumerate(net.branches):
        inc[br.from_bus, idx] = 1.0
        inc[br.to_bus, idx] = -1.0
    return inc


def _spanning_tree(net: Network, root: int, pinned_branch: Optional[int]) -> List[int]:
    """
    Breadth-first tree visiting neighbours by ascending bus index; parallel
    branches are represented by their lowest index.

    A pinned branch is always the first tree branch.
    """
    graph = nx.Graph()
    graph.add_nodes_from(range(net.n))
    for idx, br in enumerate(net.branches):
        if not graph.has_edge(br.from_bus, br.to_bus):
            graph.add_edge(br.from_bus, br.to_bus, branch=idx)

    first = None
    if pinned_branch is not None:
        br = net.branches[pinned_branch]
        graph.edges[br.from_bus, br.to_bus]["branch"] = pinned_branch
        root, first = br.from_bus, br.to_bus

    def order(neighbours):
        return sorted(neighbours, key=lambda bus: (bus != first, bus))

    return [graph.edges[u, v]["branch"] for u, v in nx.bfs_edges(graph, root, sort_neighbors=order)]


def _cycle_matrix(net: Network, tree: List[int]) -> np.ndarray:
    """One reactance-weighted row per non-tree branch, oriented along that branch"""
    in_tree = set(tree)
    chords = [idx for idx in range(net.m) if idx not in in_tree]
    tree_graph = nx.Graph()
    tree_graph.add_nodes_from(range(net.n))
    for idx in tree:
        br = net.branches[idx]
        tree_graph.add_edge(br.from_bus, br.to_bus, branch=idx)

    cycles = np.zeros((len(chords), net.m))
    for row, chord in enumerate(chords):
        br = net.branches[chord]
        cycles[row, chord] = 1.0 / br.susceptance
        path = nx.shortest_path(tree_graph, br.to_bus, br.from_bus)
        for u, v in zip(path, path[1:]):
            idx = tree_graph.edges[u, v]["branch"]
            tb = net.branches[idx]
            sign = 1.0 if tb.from_bus == u else -1.0
            cycles[row, idx] += sign / tb.susceptance
    return cycles


def build_flow_structure(
    net: Network,
    tree_root: int = 0,
    pinned_branch: Optional[int] = None,
) -> FlowStructure:
    """
    Build incidence, cycle constraints and the fundamental-flow basis.

    With `pinned_branch` the spanning tree starts from that branch, which then
    carries fundamental coordinate 0.

    Raises:
        DisconnectedNetwork: if some bus cannot be reached
    """
    if not 0 <= tree_root < net.n:
        raise DimensionMismatch(f"tree root {tree_root} is not a bus of a {net.n}-bus network")
    if pinned_branch is not None and not 0 <= pinned_branch < net.m:
        raise DimensionMismatch(f"branch {pinned_branch} does not exist")

    graph = to_graph(net)
    if not nx.is_connected(graph):
        islands = nx.number_connected_components(graph)
        raise DisconnectedNetwork(f"network splits into {islands} islands")

    inc = incidence_matrix(net)
    tree = _spanning_tree(net, tree_root, pinned_branch)

    if net.n == 1:
        flow_basis = np.zeros((net.m, 0))
    else:
        # PTDF against the root, then re-parameterized by the tree flows
        ref = tree_root if pinned_branch is None else net.branches[pinned_branch].from_bus
        keep = [bus for bus in range(net.n) if bus != ref]
        b = np.array([br.susceptance for br in net.branches])
        bus_susceptance = inc @ np.diag(b) @ inc.T
        ptdf = np.diag(b) @ inc[keep, :].T @ np.linalg.inv(bus_susceptance[np.ix_(keep, keep)])
        tree_rows = ptdf[tree, :]
        flow_basis = np.linalg.solve(tree_rows.T, ptdf.T).T
        flow_basis[tree, :] = np.eye(net.n - 1)

    cycles = _cycle_matrix(net, tree)
    logger.debug("flow structure: %d buses, %d branches, %d cycles", net.n, net.m, cycles.shape[0])
    return FlowStructure(
        incidence=inc,
        cycle_matrix=cycles,
        tree_branches=tree,
        flow_basis=flow_basis,
        injection_map=inc @ flow_basis,
        root=tree_root,
        pinned_branch=pinned_branch,
    )


def injections_from_fundamental(fs: FlowStructure, f_tilde) -> np.ndarray:
    """Net bus injections A f~ (sum to zero)"""
    f_tilde = np.asarray(f_tilde, dtype=float)
    if f_tilde.shape != (fs.injection_map.shape[1],):
        raise DimensionMismatch(
            f"expected {fs.injection_map.shape[1]} fundamental flows, got shape {f_tilde.shape}"
        )
    return fs.injection_map @ f_tilde


def branch_flows(fs: FlowStructure, f_tilde) -> np.ndarray:
    """All branch flows R f~"""
    f_tilde = np.asarray(f_tilde, dtype=float)
    if f_tilde.shape[-1:] != (fs.flow_basis.shape[1],):
        raise DimensionMismatch(
            f"expected {fs.flow_basis.shape[1]} fundamental flows, got shape {f_tilde.shape}"
        )
    return f_tilde @ fs.flow_basis.T


def fundamental_from_injections(fs: FlowStructure, injections) -> np.ndarray:
    """Fundamental flows realizing a balanced injection pattern"""
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (fs.injection_map.shape[0],):
        raise DimensionMismatch(f"expected {fs.injection_map.shape[0]} injections")
    solution, *_ = np.linalg.lstsq(fs.injection_map, injections, rcond=None)
    return solution


def relax_capacities(net: Network, keep: Iterable[int]) -> Network:
    """Copy of the network where only the branches in `keep` stay bounded"""
    keep = set(keep)
    branches = [
        br if idx in keep else Branch(
            from_bus=br.from_bus, to_bus=br.to_bus, susceptance=br.susceptance, capacity=math.inf
        )
        for idx, br in enumerate(net.branches)
    ]
    return Network(n_buses=net.n, branches=branches)

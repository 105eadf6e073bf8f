"""Directed spatio-temporal interaction graph over one sequence window.

Per timestep, every non-controlled agent connects to every other non-controlled
agent in both directions, and to each controlled agent with a single directed
edge (nothing points back out of a controlled node).  A temporal edge links a
non-controlled agent to itself across consecutive timesteps while it stays
present.  From the last observed timestep onward the structure is frozen: the
future presence of agents is unknown at rollout time, so whoever is present
then is assumed to remain so.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajdata import SequenceWindow


class GraphError(Exception):
    """Structural inconsistency while building or querying a graph."""


@dataclass(frozen=True)
class NodeRef:
    index: int          # position in UnrolledGraph.nodes
    agent_id: int
    agent_type: int
    controlled: bool


@dataclass(frozen=True)
class SpatialEdge:
    """Directed same-timestep edge; factor key is the ordered type pair."""

    from_node: int
    to_node: int
    factor: tuple[int, int]


@dataclass(frozen=True)
class TemporalEdge:
    """Self edge of a non-controlled node from timestep t to t+1."""

    node: int
    factor: tuple[int, int]


@dataclass
class UnrolledGraph:
    nodes: list[NodeRef]
    nodes_at: list[list[int]]                 # per timestep, node indices present
    spatial_at: list[list[SpatialEdge]]       # per timestep
    temporal_at: list[list[TemporalEdge]]     # per timestep (edge t -> t+1)
    presence: np.ndarray                      # (n_nodes, T) structural presence
    n_obs: int
    freeze_step: int = field(init=False)

    def __post_init__(self) -> None:
        self.freeze_step = self.n_obs - 1

    @property
    def total_steps(self) -> int:
        return len(self.nodes_at)

    def counts_at(self, t: int) -> tuple[int, int]:
        """(non-controlled, controlled) node counts at timestep t."""
        n_n = sum(1 for i in self.nodes_at[t] if not self.nodes[i].controlled)
        n_c = sum(1 for i in self.nodes_at[t] if self.nodes[i].controlled)
        return n_n, n_c

    def outgoing_spatial(self, node: int, t: int) -> list[SpatialEdge]:
        return [e for e in self.spatial_at[t] if e.from_node == node]


def build_graph(window: SequenceWindow) -> UnrolledGraph:
    """Unroll the interaction graph across every timestep of a window."""
    T = window.total_steps
    nodes: list[NodeRef] = []
    presence_rows = []
    for j, aid in enumerate(window.agent_ids):
        nodes.append(NodeRef(len(nodes), aid, int(window.agent_types[j]), False))
        presence_rows.append(window.presence[j].copy())
    for j, rid in enumerate(window.robot_ids):
        nodes.append(NodeRef(len(nodes), rid, int(window.robot_types[j]), True))
        presence_rows.append(np.ones(T, dtype=bool))

    presence = np.stack(presence_rows) if nodes else np.zeros((0, T), dtype=bool)
    freeze = window.n_obs - 1
    # From the freeze step on, presence is pinned to the freeze step's pattern.
    for t in range(freeze + 1, T):
        presence[:, t] = presence[:, freeze]

    nodes_at: list[list[int]] = []
    spatial_at: list[list[SpatialEdge]] = []
    temporal_at: list[list[TemporalEdge]] = []
    for t in range(T):
        present = [n.index for n in nodes if presence[n.index, t]]
        nodes_at.append(present)
        non_ctrl = [i for i in present if not nodes[i].controlled]
        ctrl = [i for i in present if nodes[i].controlled]
        edges = []
        for a in non_ctrl:
            for b in non_ctrl:
                if a != b:
                    edges.append(SpatialEdge(a, b, (nodes[a].agent_type, nodes[b].agent_type)))
            for b in ctrl:
                edges.append(SpatialEdge(a, b, (nodes[a].agent_type, nodes[b].agent_type)))
        spatial_at.append(edges)
        if t + 1 < T:
            temporal_at.append([TemporalEdge(i, (nodes[i].agent_type, nodes[i].agent_type))
                                for i in non_ctrl if presence[i, t + 1]])
        else:
            temporal_at.append([])
    return UnrolledGraph(nodes=nodes, nodes_at=nodes_at, spatial_at=spatial_at,
                         temporal_at=temporal_at, presence=presence, n_obs=window.n_obs)


# ---------------------------------------------------------------------------
# edge features


def spatial_feature(edge: SpatialEdge, positions: np.ndarray, robot_plan: np.ndarray,
                    node_row: dict[int, int], robot_row: dict[int, int], t: int) -> np.ndarray:
    """Input of a spatial edge at timestep t: source minus destination position.

    Edges pointing at a controlled node difference against the controlled
    agent's *next* planned position, which is how a plan reaches the model.
    """
    a = positions[node_row[edge.from_node], t]
    if edge.to_node in robot_row:
        b = robot_plan[robot_row[edge.to_node], t + 1]
    else:
        b = positions[node_row[edge.to_node], t]
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise GraphError(f"missing endpoint position for edge {edge} at t={t}")
    return a - b


def temporal_feature(node_idx: int, positions: np.ndarray, node_row: dict[int, int],
                     t: int, last_seen: int | None) -> np.ndarray:
    """Displacement of a node into timestep t (zero at its first appearance)."""
    row = node_row[node_idx]
    if last_seen is None:
        return np.zeros(2)
    feat = positions[row, t] - positions[row, last_seen]
    if not np.isfinite(feat).all():
        raise GraphError(f"missing endpoint position for temporal edge of node {node_idx}")
    return feat


def edge_feature(edge: SpatialEdge | TemporalEdge, window: SequenceWindow, t: int,
                 graph: UnrolledGraph | None = None,
                 robot_override: np.ndarray | None = None) -> np.ndarray:
    """Edge input at timestep t taken from a window's recorded positions."""
    if graph is None:
        graph = build_graph(window)
    # Agents occupy the first node indices, in window row order; robots follow.
    node_row = {i: i for i in range(window.n_agents)}
    robot_row = {window.n_agents + j: j for j in range(window.n_controlled)}
    plan = window.robot_xy.copy()
    if robot_override is not None:
        plan[0, window.n_obs:] = robot_override
    if isinstance(edge, SpatialEdge):
        return spatial_feature(edge, window.positions, plan, node_row, robot_row, t)
    prev = t - 1
    row = node_row[edge.node]
    while prev >= 0 and not window.presence[row, prev]:
        prev -= 1
    return temporal_feature(edge.node, window.positions, node_row, t,
                            prev if prev >= 0 else None)


# ---------------------------------------------------------------------------
# debug export


def export_graph(graph: UnrolledGraph) -> dict:
    """JSON-able adjacency dump used for golden-file inspection."""
    return {
        "schema_version": 1,
        "n_obs": graph.n_obs,
        "total_steps": graph.total_steps,
        "nodes": [{"index": n.index, "agent_id": n.agent_id, "agent_type": n.agent_type,
                   "controlled": n.controlled} for n in graph.nodes],
        "timesteps": [
            {
                "t": t,
                "nodes": list(graph.nodes_at[t]),
                "spatial_edges": [[e.from_node, e.to_node, list(e.factor)]
                                  for e in graph.spatial_at[t]],
                "temporal_edges": [[e.node, list(e.factor)] for e in graph.temporal_at[t]],
            }
            for t in range(graph.total_steps)
        ],
    }


def dump_graph(graph: UnrolledGraph, path: Path) -> None:
    Path(path).write_text(json.dumps(export_graph(graph), indent=2, sort_keys=True) + "\n")

"""Lineage graph reconstruction from scored object pairs.

Per parent, children above the MOVE threshold give a continuation edge only
when exactly one candidate exists and nothing competes for a breakup; two or
more children above the BREAKUP threshold trigger fragmentation, with the
child subset chosen to minimize the relative area-conservation error
|A_parent - sum(A_children)| / A_parent. Children claimed by two parents go
to the higher-probability edge. The result is a DAG whose edges connect
consecutive frames only, every node has at most one incoming edge, and
breakup parents keep at least two children.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DetectedObject,
    InvariantError,
    ObjectClass,
    RelationLabel,
    ValidationError,
    equivalent_diameter,
)

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 12  # 2^12 subsets; beyond this the greedy fallback runs


@dataclass(frozen=True)
class LinkThresholds:
    tau_move: float = 0.5
    tau_break: float = 0.3

    def __post_init__(self):
        if not (0.0 < self.tau_move < 1.0 and 0.0 < self.tau_break < 1.0):
            raise ValidationError("thresholds must lie in (0, 1)")


@dataclass(frozen=True)
class ScoredPair:
    """A candidate (parent@t -> child@t+1) link with class probabilities."""

    frame: int
    parent_id: int
    child_id: int
    p_none: float
    p_move: float
    p_break: float
    parent_area: float = 0.0
    child_area: float = 0.0


@dataclass(frozen=True)
class Edge:
    parent: tuple[int, int]  # (frame, id)
    child: tuple[int, int]
    kind: RelationLabel  # MOVE or BREAKUP
    probability: float


@dataclass
class LineageGraph:
    nodes: dict[tuple[int, int], DetectedObject]
    edges: list[Edge]
    _children: dict[tuple[int, int], list[Edge]] = field(default_factory=dict, repr=False)
    _parent: dict[tuple[int, int], Edge] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._children = {}
        self._parent = {}
        for edge in self.edges:
            self._children.setdefault(edge.parent, []).append(edge)
            self._parent[edge.child] = edge

    def children_of(self, key) -> list[Edge]:
        return self._children.get(key, [])

    def parent_of(self, key) -> Edge | None:
        return self._parent.get(key)

    def roots(self) -> list[tuple[int, int]]:
        return sorted(k for k in self.nodes if k not in self._parent)

    def weakly_connected_components(self) -> list[set[tuple[int, int]]]:
        neighbours: dict[tuple[int, int], set] = {k: set() for k in self.nodes}
        for edge in self.edges:
            neighbours[edge.parent].add(edge.child)
            neighbours[edge.child].add(edge.parent)
        seen: set[tuple[int, int]] = set()
        components = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            stack, component = [start], set()
            while stack:
                node = stack.pop()
                if node in component:
                    continue
                component.add(node)
                stack.extend(neighbours[node] - component)
            seen |= component
            components.append(component)
        return components

    def validate(self):
        """Structural invariants; a violation is an internal bug."""
        incoming: set[tuple[int, int]] = set()
        for edge in self.edges:
            if edge.parent not in self.nodes or edge.child not in self.nodes:
                raise InvariantError(f"edge references unknown node: {edge}")
            if edge.child[0] != edge.parent[0] + 1:
                raise InvariantError(f"edge does not span consecutive frames: {edge}")
            if edge.child in incoming:
                raise InvariantError(f"node {edge.child} has two incoming edges")
            incoming.add(edge.child)
        for key, edges in self._children.items():
            kinds = {e.kind for e in edges}
            if len(kinds) > 1:
                raise InvariantError(f"node {key} mixes MOVE and BREAKUP edges")
            if kinds == {RelationLabel.MOVE} and len(edges) != 1:
                raise InvariantError(f"node {key} has {len(edges)} MOVE edges")
            if kinds == {RelationLabel.BREAKUP} and len(edges) < 2:
                raise InvariantError(f"breakup parent {key} has fewer than 2 children")


def conservation_error(parent_area: float, child_areas) -> float:
    return abs(parent_area - sum(child_areas)) / parent_area


def select_breakup_children(
    parent_area: float,
    candidates: list[tuple[int, float, float]],
    thresholds: LinkThresholds = LinkThresholds(),
) -> list[int]:
    """Pick the child subset (size >= 2) minimizing area-conservation error.

    `candidates` rows are (child id, child area, breakup probability); all are
    assumed to have cleared the breakup threshold already. Ties break toward
    the higher total breakup probability, then the smaller sorted id tuple.
    Exhaustive enumeration up to 12 candidates, greedy best-insertion beyond.
    Returns [] when fewer than two candidates exist: one child is never a
    breakup.
    """
    if parent_area <= 0:
        raise ValidationError("parent area must be positive")
    if len(candidates) < 2:
        return []

    if len(candidates) <= EXHAUSTIVE_LIMIT:
        areas = np.array([c[1] for c in candidates], dtype=np.float64)
        probs = np.array([c[2] for c in candidates], dtype=np.float64)
        n = len(candidates)
        codes = np.arange(1, 2**n, dtype=np.uint64)
        bits = ((codes[:, None] >> np.arange(n, dtype=np.uint64)) & 1).astype(np.float64)
        valid = bits.sum(axis=1) >= 2
        errors = np.abs(parent_area - bits @ areas) / parent_area
        errors[~valid] = np.inf
        best_err = errors.min()
        tie_codes = codes[errors == best_err]
        if tie_codes.size > 1:  # rare: order ties by breakup mass, then ids
            prob_totals = bits[errors == best_err] @ probs
            keys = []
            for code, ptotal in zip(tie_codes, prob_totals):
                ids = tuple(
                    sorted(candidates[b][0] for b in range(n) if (int(code) >> b) & 1)
                )
                keys.append((-ptotal, ids, int(code)))
            best_code = min(keys)[2]
        else:
            best_code = int(tie_codes[0])
        return sorted(candidates[b][0] for b in range(n) if (best_code >> b) & 1)

    # greedy: repeatedly add the candidate that most reduces the error
    remaining = sorted(candidates, key=lambda c: (-c[2], c[0]))
    chosen: list[tuple[int, float, float]] = []
    total = 0.0
    while remaining:
        best_idx, best_err = None, None
        for i, cand in enumerate(remaining):
            err = abs(parent_area - (total + cand[1])) / parent_area
            if best_err is None or err < best_err:
                best_idx, best_err = i, err
        current_err = abs(parent_area - total) / parent_area
        if len(chosen) >= 2 and best_err >= current_err:
            break
        chosen.append(remaining.pop(best_idx))
        total += chosen[-1][1]
    if len(chosen) < 2:
        return []
    return sorted(c[0] for c in chosen)


def link_frames(
    pairs: list[ScoredPair], thresholds: LinkThresholds = LinkThresholds()
) -> list[Edge]:
    """Decide MOVE/BREAKUP edges for one (t, t+1) frame pair."""
    by_parent: dict[tuple[int, int], list[ScoredPair]] = {}
    for pair in pairs:
        by_parent.setdefault((pair.frame, pair.parent_id), []).append(pair)

    proposed: list[Edge] = []
    for parent_key in sorted(by_parent):
        candidates = by_parent[parent_key]
        move_cands = [p for p in candidates if p.p_move >= thresholds.tau_move]
        break_cands = [p for p in candidates if p.p_break >= thresholds.tau_break]
        if len(break_cands) >= 2:
            parent_area = break_cands[0].parent_area
            chosen = select_breakup_children(
                parent_area,
                [(p.child_id, p.child_area, p.p_break) for p in break_cands],
                thresholds,
            )
            chosen_set = set(chosen)
            for p in break_cands:
                if p.child_id in chosen_set:
                    proposed.append(
                        Edge(
                            parent=parent_key,
                            child=(p.frame + 1, p.child_id),
                            kind=RelationLabel.BREAKUP,
                            probability=p.p_break,
                        )
                    )
        elif len(move_cands) == 1:
            if break_cands:
                logger.info(
                    "parent %s: single breakup candidate coexists with a MOVE; "
                    "preferring the MOVE edge",
                    parent_key,
                )
            p = move_cands[0]
            proposed.append(
                Edge(
                    parent=parent_key,
                    child=(p.frame + 1, p.child_id),
                    kind=RelationLabel.MOVE,
                    probability=p.p_move,
                )
            )
        # anything else: no edge (rejected as NONE)

    return _resolve_child_conflicts(proposed)


def _resolve_child_conflicts(edges: list[Edge]) -> list[Edge]:
    """Enforce one parent per child: keep the higher-probability edge.

    Ties go to the lower parent id. Breakup events reduced below two children
    by a conflict are dropped entirely (a single leftover child is not a
    breakup).
    """
    by_child: dict[tuple[int, int], list[Edge]] = {}
    for edge in edges:
        by_child.setdefault(edge.child, []).append(edge)

    kept: list[Edge] = []
    for child in sorted(by_child):
        rivals = by_child[child]
        rivals.sort(key=lambda e: (-e.probability, e.parent))
        kept.append(rivals[0])
        if len(rivals) > 1:
            logger.info("child %s claimed by %d parents; kept %s",
                        child, len(rivals), rivals[0].parent)

    while True:
        per_parent: dict[tuple[int, int], list[Edge]] = {}
        for edge in kept:
            per_parent.setdefault(edge.parent, []).append(edge)
        broken = [
            parent
            for parent, parent_edges in per_parent.items()
            if parent_edges[0].kind is RelationLabel.BREAKUP and len(parent_edges) < 2
        ]
        if not broken:
            return sorted(kept, key=lambda e: (e.parent, e.child))
        broken_set = set(broken)
        kept = [e for e in kept if e.parent not in broken_set]


def build_graph(
    frames,
    scored_pairs: list[ScoredPair],
    thresholds: LinkThresholds = LinkThresholds(),
) -> LineageGraph:
    """Link every consecutive frame pair and assemble the validated graph."""
    frames = sorted(frames, key=lambda f: f.index)
    nodes = {obj.key: obj for frame in frames for obj in frame.objects}
    for pair in scored_pairs:
        if (pair.frame, pair.parent_id) not in nodes:
            raise ValidationError(f"scored pair references unknown parent {pair}")
        if (pair.frame + 1, pair.child_id) not in nodes:
            raise ValidationError(f"scored pair references unknown child {pair}")

    by_frame: dict[int, list[ScoredPair]] = {}
    for pair in scored_pairs:
        by_frame.setdefault(pair.frame, []).append(pair)

    edges: list[Edge] = []
    for frame_index in sorted(by_frame):
        edges.extend(link_frames(by_frame[frame_index], thresholds))

    graph = LineageGraph(nodes=nodes, edges=edges)
    graph.validate()
    return graph


def scored_pairs_from_samples(samples, probabilities) -> list[ScoredPair]:
    """Attach (p_none, p_move, p_break) rows to relation samples."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.shape != (len(samples), 3):
        raise ValidationError("need one probability row of width 3 per sample")
    return [
        ScoredPair(
            frame=s.parent.frame_index,
            parent_id=s.parent.id,
            child_id=s.child.id,
            p_none=float(p[0]),
            p_move=float(p[1]),
            p_break=float(p[2]),
            parent_area=float(s.parent.area),
            child_area=float(s.child.area),
        )
        for s, p in zip(samples, probabilities)
    ]


# ---------------------------------------------------------------------------
# Fragmentation trees and statistics
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    key: tuple[int, int]
    edge_kind: RelationLabel | None  # edge from the parent node; None at root
    children: list["TreeNode"] = field(default_factory=list)

    def leaves(self) -> list["TreeNode"]:
        if not self.children:
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(child.depth() for child in self.children)


def fragmentation_trees(graph: LineageGraph) -> list[TreeNode]:
    """One tree per parentless node, in (frame, id) order."""

    def grow(key, kind) -> TreeNode:
        node = TreeNode(key=key, edge_kind=kind)
        for edge in sorted(graph.children_of(key), key=lambda e: e.child):
            node.children.append(grow(edge.child, edge.kind))
        return node

    return [grow(root, None) for root in graph.roots()]


@dataclass
class BreakupStats:
    multiplicity_histogram: dict[int, int]
    lifespans_frames: list[int]  # ligament track lengths
    lifespans_seconds: list[float]
    lifespan_censored: list[bool]  # right-censored: still alive at sequence end
    parent_child_area_ratios: list[float]  # A_parent / A_child per breakup edge
    velocities_mps: list[float]  # per MOVE edge
    droplet_diameters_m: list[float]
    smd_m: float | None

    def summary(self) -> dict:
        return {
            "breakup_events": int(sum(self.multiplicity_histogram.values())),
            "multiplicity_histogram": dict(sorted(self.multiplicity_histogram.items())),
            "n_ligament_tracks": len(self.lifespans_frames),
            "mean_lifespan_frames": float(np.mean(self.lifespans_frames))
            if self.lifespans_frames
            else None,
            "mean_velocity_mps": float(np.mean(self.velocities_mps))
            if self.velocities_mps
            else None,
            "n_droplet_detections": len(self.droplet_diameters_m),
            "smd_m": self.smd_m,
        }


def sauter_mean_diameter(diameters) -> float:
    """Sum(d^3) / sum(d^2) over a diameter population."""
    diameters = np.asarray(diameters, dtype=np.float64)
    if diameters.size == 0 or (diameters <= 0).any():
        raise ValidationError("need a nonempty population of positive diameters")
    return float(np.sum(diameters**3) / np.sum(diameters**2))


def compute_stats(
    graph: LineageGraph,
    trees: list[TreeNode] | None = None,
    px_size_m: float = 83e-6,
    dt_s: float = 1.0 / 5120.0,
) -> BreakupStats:
    """Fragment multiplicity, ligament lifespans, area ratios, velocities,
    droplet diameters and their Sauter mean diameter."""
    if dt_s <= 0:
        raise ValidationError("dt_s must be positive")
    if trees is None:
        trees = fragmentation_trees(graph)

    last_frame = max((key[0] for key in graph.nodes), default=-1)

    multiplicity: dict[int, int] = {}
    ratios: list[float] = []
    velocities: list[float] = []
    for key in sorted(graph.nodes):
        edges = graph.children_of(key)
        if not edges:
            continue
        if edges[0].kind is RelationLabel.BREAKUP:
            multiplicity[len(edges)] = multiplicity.get(len(edges), 0) + 1
            parent_area = graph.nodes[key].area
            for edge in edges:
                ratios.append(parent_area / graph.nodes[edge.child].area)
        else:
            edge = edges[0]
            a = graph.nodes[key].centroid
            b = graph.nodes[edge.child].centroid
            displacement_px = math.hypot(b[0] - a[0], b[1] - a[1])
            velocities.append(displacement_px * px_size_m / dt_s)

    # ligament track lifespans: follow MOVE chains from each track start
    lifespans_frames: list[int] = []
    lifespans_seconds: list[float] = []
    censored: list[bool] = []
    for key in sorted(graph.nodes):
        if graph.nodes[key].object_class is not ObjectClass.LIGAMENT:
            continue
        incoming = graph.parent_of(key)
        if incoming is not None and incoming.kind is RelationLabel.MOVE:
            continue  # interior of a track
        length = 1
        cursor = key
        while True:
            edges = graph.children_of(cursor)
            if len(edges) == 1 and edges[0].kind is RelationLabel.MOVE:
                cursor = edges[0].child
                length += 1
            else:
                break
        ends_in_breakup = bool(
            graph.children_of(cursor)
            and graph.children_of(cursor)[0].kind is RelationLabel.BREAKUP
        )
        lifespans_frames.append(length)
        lifespans_seconds.append(length * dt_s)
        censored.append(cursor[0] == last_frame and not ends_in_breakup)

    diameters = [
        equivalent_diameter(obj.area) * px_size_m
        for key, obj in sorted(graph.nodes.items())
        if obj.object_class is ObjectClass.DROPLET
    ]
    smd = sauter_mean_diameter(diameters) if diameters else None

    return BreakupStats(
        multiplicity_histogram=multiplicity,
        lifespans_frames=lifespans_frames,
        lifespans_seconds=lifespans_seconds,
        lifespan_censored=censored,
        parent_child_area_ratios=ratios,
        velocities_mps=velocities,
        droplet_diameters_m=diameters,
        smd_m=smd,
    )

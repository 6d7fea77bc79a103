import itertools
import math

import numpy as np
import pytest

from fragtrack.core import (
    DetectedObject,
    Frame,
    ObjectClass,
    RelationLabel,
    ValidationError,
)
from fragtrack.lineage import (
    Edge,
    LinkThresholds,
    ScoredPair,
    build_graph,
    compute_stats,
    fragmentation_trees,
    link_frames,
    sauter_mean_diameter,
    scored_pairs_from_samples,
    select_breakup_children,
)
from fragtrack.relate import GateParams, build_pair_dataset
from fragtrack.synthgen import SimConfig, simulate_sequence


def oracle_select(parent_area, candidates):
    """Independent subset-enumeration oracle mirroring the documented contract:
    min error, then max total breakup probability, then smallest id tuple."""
    best_key, best_ids = None, None
    for size in range(2, len(candidates) + 1):
        for combo in itertools.combinations(candidates, size):
            err = abs(parent_area - sum(c[1] for c in combo)) / parent_area
            ptotal = sum(c[2] for c in combo)
            ids = tuple(sorted(c[0] for c in combo))
            key = (err, -ptotal, ids)
            if best_key is None or key < best_key:
                best_key, best_ids = key, ids
    return [] if best_ids is None else list(best_ids)


def make_node(frame, obj_id, x, y, area, cls=ObjectClass.DROPLET):
    side = int(math.ceil(math.sqrt(area)))
    full = np.zeros((512, 512), dtype=bool)
    placed = 0
    for r in range(side + 1):
        for c in range(side):
            if placed < area:
                full[y + r, x + c] = True
                placed += 1
    return DetectedObject.from_full_mask(frame, obj_id, full, cls)


def frames_from_nodes(nodes, width=512, height=512):
    by_frame = {}
    for node in nodes:
        by_frame.setdefault(node.frame_index, []).append(node)
    return [
        Frame(index=i, width=width, height=height, objects=tuple(by_frame[i]))
        for i in sorted(by_frame)
    ]


class TestSelectBreakupChildren:
    def test_exact_conservation_subset(self):
        candidates = [(0, 60.0, 0.9), (1, 45.0, 0.8), (2, 40.0, 0.7), (3, 5.0, 0.6)]
        assert select_breakup_children(100.0, candidates) == [0, 2]
        assert oracle_select(100.0, candidates) == [0, 2]

    def test_two_halves(self):
        candidates = [(0, 50.0, 0.5), (1, 50.0, 0.5)]
        assert select_breakup_children(100.0, candidates) == [0, 1]

    def test_single_candidate_empty(self):
        assert select_breakup_children(100.0, [(0, 100.0, 0.99)]) == []

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            parent_area = float(rng.integers(50, 400))
            candidates = [
                (i, float(rng.integers(4, 200)), float(rng.uniform(0.3, 1.0)))
                for i in range(n)
            ]
            assert select_breakup_children(parent_area, candidates) == oracle_select(
                parent_area, candidates
            )

    def test_greedy_beyond_limit_conserves(self):
        rng = np.random.default_rng(3)
        parts = rng.integers(5, 40, size=6).astype(float)
        parent_area = float(parts.sum())
        candidates = [(i, float(a), 0.9) for i, a in enumerate(parts)]
        candidates += [(100 + i, float(rng.integers(50, 90)), 0.5) for i in range(9)]
        chosen = select_breakup_children(parent_area, candidates)
        assert len(chosen) >= 2
        total = sum(area for cid, area, _ in candidates if cid in chosen)
        assert abs(parent_area - total) / parent_area < 0.25

    def test_rejects_bad_parent_area(self):
        with pytest.raises(ValidationError):
            select_breakup_children(0.0, [(0, 1.0, 0.5), (1, 2.0, 0.5)])


class TestLinkFrames:
    def test_single_move(self):
        pairs = [ScoredPair(0, 0, 0, 0.05, 0.9, 0.05, 50.0, 50.0)]
        edges = link_frames(pairs)
        assert len(edges) == 1
        assert edges[0].kind is RelationLabel.MOVE
        assert edges[0].parent == (0, 0)
        assert edges[0].child == (1, 0)

    def test_breakup_conserving_subset(self):
        pairs = [
            ScoredPair(0, 0, 0, 0.1, 0.1, 0.8, 100.0, 60.0),
            ScoredPair(0, 0, 1, 0.2, 0.1, 0.7, 100.0, 40.0),
            ScoredPair(0, 0, 2, 0.3, 0.1, 0.6, 100.0, 55.0),
        ]
        edges = link_frames(pairs)
        assert oracle_select(100.0, [(0, 60.0, 0.8), (1, 40.0, 0.7), (2, 55.0, 0.6)]) == [0, 1]
        assert {e.child for e in edges} == {(1, 0), (1, 1)}
        assert all(e.kind is RelationLabel.BREAKUP for e in edges)

    def test_all_none(self):
        pairs = [
            ScoredPair(0, 0, 0, 0.98, 0.01, 0.01, 50.0, 50.0),
            ScoredPair(0, 1, 1, 0.99, 0.005, 0.005, 50.0, 50.0),
        ]
        assert link_frames(pairs) == []

    def test_move_preferred_over_single_breakup(self):
        pairs = [
            ScoredPair(0, 0, 0, 0.1, 0.8, 0.1, 50.0, 50.0),
            ScoredPair(0, 0, 1, 0.3, 0.2, 0.5, 50.0, 30.0),
        ]
        edges = link_frames(pairs)
        assert len(edges) == 1
        assert edges[0].kind is RelationLabel.MOVE
        assert edges[0].child == (1, 0)

    def test_two_moves_is_none(self):
        pairs = [
            ScoredPair(0, 0, 0, 0.1, 0.8, 0.05, 50.0, 50.0),
            ScoredPair(0, 0, 1, 0.1, 0.7, 0.05, 50.0, 50.0),
        ]
        assert link_frames(pairs) == []

    def test_child_conflict_higher_probability_wins(self):
        pairs = [
            ScoredPair(0, 0, 0, 0.1, 0.7, 0.05, 50.0, 50.0),
            ScoredPair(0, 1, 0, 0.05, 0.9, 0.05, 50.0, 50.0),
        ]
        edges = link_frames(pairs)
        assert len(edges) == 1
        assert edges[0].parent == (0, 1)

    def test_conflict_starved_breakup_dropped(self):
        # parent 0 would break into children 0, 1; parent 1 steals child 0
        # with a stronger MOVE, leaving a one-child breakup that must vanish
        pairs = [
            ScoredPair(0, 0, 0, 0.05, 0.05, 0.85, 100.0, 50.0),
            ScoredPair(0, 0, 1, 0.05, 0.05, 0.80, 100.0, 50.0),
            ScoredPair(0, 1, 0, 0.02, 0.97, 0.01, 50.0, 50.0),
        ]
        edges = link_frames(pairs)
        assert len(edges) == 1
        assert edges[0].kind is RelationLabel.MOVE
        assert edges[0].parent == (0, 1)

    def test_raising_tau_break_never_adds_edges(self):
        rng = np.random.default_rng(23)
        pairs = []
        for parent in range(6):
            for child in range(6):
                p = rng.dirichlet((1.0, 1.0, 1.0))
                pairs.append(
                    ScoredPair(0, parent, child, float(p[0]), float(p[1]), float(p[2]),
                               float(rng.integers(20, 200)), float(rng.integers(5, 120)))
                )
        previous = None
        for tau in (0.2, 0.3, 0.45, 0.6, 0.8):
            edges = link_frames(pairs, LinkThresholds(tau_move=0.5, tau_break=tau))
            n_break = sum(1 for e in edges if e.kind is RelationLabel.BREAKUP)
            if previous is not None:
                assert n_break <= previous
            previous = n_break


class TestBuildGraph:
    def truth_scored_pairs(self, packet, gate_params=GateParams()):
        dataset = build_pair_dataset(packet.truth_frames, packet.truth_relations, gate_params)
        assert not dataset.gated_truth
        probs = []
        for sample in dataset.samples:
            row = [0.0, 0.0, 0.0]
            row[int(sample.label) + 1] = 1.0
            probs.append(row)
        return dataset.samples, np.array(probs)

    def test_truth_probabilities_reconstruct_truth(self):
        packet = simulate_sequence(SimConfig(n_frames=6, p_breakup=0.35, n_ligaments=3), 51)
        samples, probs = self.truth_scored_pairs(packet)
        graph = build_graph(packet.truth_frames, scored_pairs_from_samples(samples, probs))
        reconstructed = {
            (e.parent[0], e.parent[1], e.child[1], e.kind) for e in graph.edges
        }
        truth = {
            (r.frame, r.parent_id, r.child_id, r.label) for r in packet.truth_relations
        }
        assert reconstructed == truth

    def test_single_frame_no_edges(self):
        packet = simulate_sequence(SimConfig(n_frames=2, p_breakup=0.0), 4)
        graph = build_graph([packet.truth_frames[0]], [])
        assert len(graph.nodes) == len(packet.truth_frames[0].objects)
        assert graph.edges == []

    def test_two_disjoint_families(self):
        nodes = [
            make_node(0, 0, 10, 10, 25),
            make_node(1, 0, 14, 10, 25),
            make_node(0, 1, 100, 100, 25),
            make_node(1, 1, 104, 100, 25),
        ]
        frames = frames_from_nodes(nodes)
        pairs = [
            ScoredPair(0, 0, 0, 0.05, 0.9, 0.05, 25.0, 25.0),
            ScoredPair(0, 1, 1, 0.05, 0.9, 0.05, 25.0, 25.0),
        ]
        graph = build_graph(frames, pairs)
        assert len(graph.edges) == 2
        assert len(graph.weakly_connected_components()) == 2

    def test_fuzzed_probabilities_keep_invariants(self):
        rng = np.random.default_rng(77)
        packet = simulate_sequence(SimConfig(n_frames=5, p_breakup=0.3, n_ligaments=3), 12)
        dataset = build_pair_dataset(packet.truth_frames, packet.truth_relations)
        for _ in range(10):
            probs = rng.dirichlet((1.0, 1.0, 1.0), size=len(dataset.samples))
            graph = build_graph(
                packet.truth_frames, scored_pairs_from_samples(dataset.samples, probs)
            )
            graph.validate()  # raises on violation


class TestFragmentationTrees:
    def chain_graph(self, length):
        nodes = [make_node(i, 0, 10 + 3 * i, 10, 25, ObjectClass.LIGAMENT) for i in range(length)]
        frames = frames_from_nodes(nodes)
        pairs = [
            ScoredPair(i, 0, 0, 0.02, 0.95, 0.03, 25.0, 25.0) for i in range(length - 1)
        ]
        return build_graph(frames, pairs)

    def test_move_chain_depth(self):
        graph = self.chain_graph(5)
        trees = fragmentation_trees(graph)
        assert len(trees) == 1
        assert trees[0].depth() == 5
        assert len(trees[0].leaves()) == 1

    def test_binary_breakup_tree(self):
        # 1 -> 2 -> 4 over three frames
        nodes = [make_node(0, 0, 50, 50, 100, ObjectClass.LIGAMENT)]
        nodes += [make_node(1, i, 30 + 40 * i, 50, 50) for i in range(2)]
        nodes += [make_node(2, i, 15 + 25 * i, 50, 25) for i in range(4)]
        frames = frames_from_nodes(nodes)
        pairs = [
            ScoredPair(0, 0, 0, 0.05, 0.05, 0.9, 100.0, 50.0),
            ScoredPair(0, 0, 1, 0.05, 0.05, 0.9, 100.0, 50.0),
            ScoredPair(1, 0, 0, 0.05, 0.05, 0.9, 50.0, 25.0),
            ScoredPair(1, 0, 1, 0.05, 0.05, 0.9, 50.0, 25.0),
            ScoredPair(1, 1, 2, 0.05, 0.05, 0.9, 50.0, 25.0),
            ScoredPair(1, 1, 3, 0.05, 0.05, 0.9, 50.0, 25.0),
        ]
        graph = build_graph(frames, pairs)
        trees = fragmentation_trees(graph)
        assert len(trees) == 1
        assert len(trees[0].leaves()) == 4
        assert trees[0].depth() == 3

    def test_simulator_leaf_count_matches_terminal_objects(self):
        packet = simulate_sequence(SimConfig(n_frames=5, p_breakup=0.4, n_ligaments=3), 29)
        dataset = build_pair_dataset(packet.truth_frames, packet.truth_relations)
        probs = []
        for sample in dataset.samples:
            row = [0.0, 0.0, 0.0]
            row[int(sample.label) + 1] = 1.0
            probs.append(row)
        graph = build_graph(
            packet.truth_frames, scored_pairs_from_samples(dataset.samples, np.array(probs))
        )
        trees = fragmentation_trees(graph)
        leaves = sum(len(t.leaves()) for t in trees)
        # every leaf is a node without children; with full truth edges these
        # are exactly the last-frame objects (nothing disappears mid-sequence)
        assert leaves == len(packet.truth_frames[-1].objects)


class TestComputeStats:
    def test_smd_monodisperse(self):
        assert sauter_mean_diameter([10e-6] * 8) == pytest.approx(10e-6)

    def test_smd_two_sizes(self):
        # (10^3 + 20^3) / (10^2 + 20^2) = 9000 / 500 = 18
        assert sauter_mean_diameter([10.0, 20.0]) == pytest.approx(18.0, abs=1e-12)

    def test_velocity_unit_conversion(self):
        parent = make_node(0, 0, 100, 100, 25)
        template = make_node(1, 0, 108, 100, 25)
        # child displaced exactly 8.3 px in x (sub-pixel centroid is legal)
        moved = DetectedObject(
            id=0, frame_index=1,
            bbox=template.bbox, mask=template.mask,
            centroid=(parent.centroid[0] + 8.3, parent.centroid[1]),
            area=template.area, object_class=template.object_class,
        )
        frames = frames_from_nodes([parent, moved])
        graph = build_graph(frames, [ScoredPair(0, 0, 0, 0.05, 0.9, 0.05, 25.0, 25.0)])
        stats = compute_stats(graph, px_size_m=83e-6, dt_s=195.3e-6)
        assert len(stats.velocities_mps) == 1
        assert stats.velocities_mps[0] == pytest.approx(8.3 * 83e-6 / 195.3e-6, abs=1e-9)
        assert stats.velocities_mps[0] == pytest.approx(3.527, abs=1e-3)

    def test_multiplicity_matches_truth_events(self):
        packet = simulate_sequence(
            SimConfig(n_frames=5, p_breakup=0.5, n_ligaments=4, area_noise=0.0), 61
        )
        dataset = build_pair_dataset(packet.truth_frames, packet.truth_relations)
        probs = []
        for sample in dataset.samples:
            row = [0.0, 0.0, 0.0]
            row[int(sample.label) + 1] = 1.0
            probs.append(row)
        graph = build_graph(
            packet.truth_frames, scored_pairs_from_samples(dataset.samples, np.array(probs))
        )
        stats = compute_stats(graph, dt_s=packet.config.dt_s)
        truth_events: dict[tuple, int] = {}
        for rel in packet.truth_relations:
            if rel.label is RelationLabel.BREAKUP:
                key = (rel.frame, rel.parent_id)
                truth_events[key] = truth_events.get(key, 0) + 1
        truth_hist: dict[int, int] = {}
        for k in truth_events.values():
            truth_hist[k] = truth_hist.get(k, 0) + 1
        assert stats.multiplicity_histogram == truth_hist

    def test_lifespan_censoring(self):
        graph = TestFragmentationTrees().chain_graph(4)
        stats = compute_stats(graph, dt_s=1e-3)
        assert stats.lifespans_frames == [4]
        assert stats.lifespans_seconds == [pytest.approx(4e-3)]
        assert stats.lifespan_censored == [True]  # never broke, alive at end

    def test_dt_must_be_positive(self):
        graph = TestFragmentationTrees().chain_graph(2)
        with pytest.raises(ValidationError):
            compute_stats(graph, dt_s=0.0)

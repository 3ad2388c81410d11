"""Saliency tables, state probes, and the subadditivity checkers."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slimgraph import (
    EvalDataset,
    Node,
    TaskSpec,
    TensorSpec,
    apply_pruning,
    build_channel_groups,
    build_graph,
    check_probability_bound,
    check_subadditivity,
    conditional_saliency,
    filter_l1_saliency,
    forward,
    group_units,
    make_probe,
    make_toy_dataset,
)


def tiny_conv_graph(filters):
    """One 1x1 conv over 3 input channels with the given filter rows,
    followed by a pinned head so every conv channel is prunable."""
    filters = np.asarray(filters, dtype=np.float32)
    out_ch = filters.shape[0]
    w = filters.reshape(out_ch, 3, 1, 1)
    fw = np.ones((2, out_ch), dtype=np.float32)
    nodes = [
        Node("c1", "Conv", ("x", "w"), ("t1",), {}),
        Node("r1", "Relu", ("t1",), ("t2",), {}),
        Node("gap", "GlobalAveragePool", ("t2",), ("t3",), {}),
        Node("fl", "Flatten", ("t3",), ("t4",), {}),
        Node("fc", "Gemm", ("t4", "fw"), ("y",), {"transB": 1}),
    ]
    return build_graph(
        "tiny", nodes, {"w": w, "fw": fw},
        [TensorSpec("x", (-1, 3, 4, 4))], [TensorSpec("y", (-1, 2))],
    )


class TestL1Table:
    def test_hand_value(self):
        g = tiny_conv_graph([[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]])
        groups = build_channel_groups(g)
        table = filter_l1_saliency(g, groups)
        by_layer = {
            (e.layer, round(e.raw_l1, 9)): e
            for e in table.entries
        }
        e0 = by_layer[("c1", 6.0)]
        assert e0.normalized == pytest.approx(2.0, abs=1e-12)
        assert e0.probability == pytest.approx(math.exp(-2.0), rel=1e-12)
        e1 = by_layer[("c1", 1.5)]
        assert e1.normalized == pytest.approx(0.5, abs=1e-12)

    def test_zero_filter_probability_one(self):
        g = tiny_conv_graph([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        table = filter_l1_saliency(g, build_channel_groups(g))
        probs = sorted(e.probability for e in table.entries)
        assert probs[-1] == 1.0
        assert all(0.0 < p <= 1.0 for p in probs)

    def test_group_mean_over_coupled_slots(self, toy_a, groups_a, units_a):
        unit = next(u for u in units_a if u.label == "conv1+conv2b")
        table = filter_l1_saliency(toy_a, groups_a)
        gid = unit.group_ids[0]
        by_id = {g.id: g for g in groups_a}
        slots = [
            s for s in by_id[gid].slots
            if s.role == "producer_out"
        ]
        assert {s.node_id for s in slots} == {"conv1", "conv2b"}
        norms = []
        for slot in slots:
            w = toy_a.weights[f"{slot.node_id}_w"][slot.channel]
            norms.append(float(np.abs(w.astype(np.float64)).sum()) / w.size)
        assert table.entry(gid).normalized == pytest.approx(
            float(np.mean(norms)), rel=1e-12
        )

    def test_dropped_exclusion_matches_rebuilt_graph(self, toy_a, groups_a, units_a):
        """Scoring with channels marked dropped must equal scoring the
        structurally rebuilt graph (up to group identity)."""
        unit = next(u for u in units_a if u.label == "conv2a")
        dropped = frozenset(unit.group_ids[:4])
        masked_table = filter_l1_saliency(toy_a, groups_a, dropped=dropped)
        rebuilt = apply_pruning(toy_a, dropped, groups_a)
        rebuilt_table = filter_l1_saliency(rebuilt, build_channel_groups(rebuilt))

        def profile(table):
            out = {}
            for e in table.entries:
                out.setdefault(e.layer, []).append(round(e.normalized, 12))
            return {k: sorted(v) for k, v in out.items()}

        assert profile(masked_table) == profile(rebuilt_table)

    def test_dropped_groups_leave_table(self, toy_a, groups_a, units_a):
        unit = next(u for u in units_a if u.label == "conv5")
        dropped = frozenset(unit.group_ids[:2])
        table = filter_l1_saliency(toy_a, groups_a, dropped=dropped)
        assert not any(table.has(gid) for gid in dropped)

    def test_scale_covariance_preserves_order(self, toy_a, groups_a):
        base = filter_l1_saliency(toy_a, groups_a)
        scaled_weights = {k: 3.0 * v for k, v in toy_a.weights.items()}
        # BN running stats are not filter weights; scaling them too keeps
        # the l1 table covariant since only conv and fc tensors are read
        scaled = build_graph(
            toy_a.name, list(toy_a.nodes), scaled_weights,
            list(toy_a.input_specs), list(toy_a.output_specs),
        )
        table = filter_l1_saliency(scaled, build_channel_groups(scaled))
        assert table.ascending_ids() == base.ascending_ids()
        for e in base.entries:
            assert table.entry(e.group_id).normalized == pytest.approx(
                3.0 * e.normalized, rel=1e-6
            )

    def test_tie_break_ascending_by_group_id(self):
        g = tiny_conv_graph([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [2.0, 0.5, 1.0]])
        table = filter_l1_saliency(g, build_channel_groups(g))
        ids = table.ascending_ids()
        tied = [e.group_id for e in table.entries
                if e.normalized == pytest.approx(1.0)]
        assert ids[:2] == sorted(tied)

    def test_subset_restriction(self, toy_a, groups_a, units_a):
        unit = next(u for u in units_a if u.label == "conv4")
        table = filter_l1_saliency(toy_a, groups_a)
        subset = table.ascending_ids(subset=unit.group_ids)
        assert set(subset) == set(unit.group_ids)
        full = [gid for gid in table.ascending_ids() if gid in set(unit.group_ids)]
        assert subset == full

    def test_csv_header_and_rows(self, tmp_path, toy_a, groups_a):
        table = filter_l1_saliency(toy_a, groups_a)
        path = tmp_path / "saliency.csv"
        table.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "group_id,layer,raw,normalized,probability"
        assert len(lines) == 1 + len(table.entries)
        first = lines[1].split(",")
        assert int(first[0]) == table.entries[0].group_id


class TestStateProbes:
    def test_l1_state_exact_equality(self, toy_a, groups_a, units_a):
        """Additive state: joint equals the telescoped bound to 1e-12."""
        probe = make_probe(toy_a, groups_a, state_kind="l1_weight")
        rng = np.random.default_rng(3)
        pool = [gid for u in units_a for gid in u.group_ids]
        for _ in range(5):
            chain = list(rng.choice(pool, size=3, replace=False))
            chain = [int(c) for c in chain]
            joint, bound, holds = check_subadditivity(probe, toy_a, chain)
            assert holds
            assert abs(joint - bound) <= 1e-12 * max(1.0, bound)

    def test_loss_state_subadditivity(self, toy_a, groups_a, units_a, data_a):
        probe = make_probe(toy_a, groups_a, state_kind="loss_state",
                           dataset=data_a)
        rng = np.random.default_rng(11)
        pool = [gid for u in units_a for gid in u.group_ids]
        for _ in range(5):
            chain = [int(c) for c in rng.choice(pool, size=4, replace=False)]
            joint, bound, holds = check_subadditivity(probe, toy_a, chain)
            assert holds
            assert joint <= bound + 1e-9 * max(1.0, bound)
            p_joint, p_prod, p_holds = check_probability_bound(
                probe, toy_a, chain
            )
            assert p_holds
            assert p_joint == pytest.approx(math.exp(-joint), rel=1e-12)
            assert p_prod == pytest.approx(math.exp(-bound), rel=1e-12)

    def test_empty_prefix_is_marginal(self, toy_a, groups_a, units_a, data_a):
        probe = make_probe(toy_a, groups_a, state_kind="loss_state",
                           dataset=data_a)
        gid = next(u for u in units_a if u.label == "conv4").group_ids[0]
        marginal = conditional_saliency(probe, toy_a, set(), gid)
        assert marginal >= 0.0
        # reference is cached: recomputing from scratch agrees exactly
        probe2 = make_probe(toy_a, groups_a, state_kind="loss_state",
                            dataset=data_a)
        assert conditional_saliency(probe2, toy_a, set(), gid) == marginal

    def test_conditional_differs_from_marginal_across_layers(
        self, toy_a, groups_a, units_a, data_a
    ):
        probe = make_probe(toy_a, groups_a, state_kind="loss_state",
                           dataset=data_a)
        a = next(u for u in units_a if u.label == "conv4").group_ids[0]
        b = next(u for u in units_a if u.label == "conv3a").group_ids[0]
        marginal = conditional_saliency(probe, toy_a, set(), a)
        conditioned = conditional_saliency(probe, toy_a, {b}, a)
        assert marginal != conditioned

    def test_clamped_improvement_scores_zero(self):
        """Targets fitted to the pruned model make the prune an
        improvement; the clamped state assigns it saliency 0."""
        g = tiny_conv_graph([[1.0, -2.0, 3.0], [0.5, 0.5, 0.5],
                             [2.0, 1.0, -1.0]])
        groups = build_channel_groups(g)
        unit = group_units(groups)[0]
        target_gid = unit.group_ids[0]
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 3, 4, 4)).astype(np.float32)
        fitted = forward(g, {"x": x}, mask=frozenset({target_gid}),
                         groups=groups)["y"]
        data = EvalDataset(
            batches=[({"x": x}, {"fit": fitted})],
            task_specs=[TaskSpec("fit", "mse", "y")],
            tag="fitted",
        )
        clamped = make_probe(g, groups, state_kind="clamped_loss_state",
                             dataset=data)
        plain = make_probe(g, groups, state_kind="loss_state", dataset=data)
        assert conditional_saliency(clamped, g, set(), target_gid) == 0.0
        assert conditional_saliency(plain, g, set(), target_gid) > 0.0
        # probability view: certain to prune
        p_joint, p_prod, holds = check_probability_bound(
            clamped, g, [target_gid, unit.group_ids[1]]
        )
        assert holds
        assert p_joint <= 1.0

    def test_norm_order_two(self, toy_a, groups_a, units_a, data_a):
        probe = make_probe(toy_a, groups_a, state_kind="loss_state",
                           dataset=data_a, norm_order=2)
        gid = next(u for u in units_a if u.label == "conv2a").group_ids[0]
        s2 = conditional_saliency(probe, toy_a, set(), gid)
        assert s2 >= 0.0

    def test_probe_validation(self, toy_a, groups_a, data_a):
        with pytest.raises(ValueError, match="unknown state kind"):
            make_probe(toy_a, groups_a, state_kind="entropy")
        with pytest.raises(ValueError, match="needs a probe dataset"):
            make_probe(toy_a, groups_a, state_kind="loss_state")
        with pytest.raises(ValueError, match="norm order"):
            make_probe(toy_a, groups_a, state_kind="loss_state",
                       dataset=data_a, norm_order=0)

    def test_chain_validation(self, toy_a, groups_a, units_a):
        probe = make_probe(toy_a, groups_a, state_kind="l1_weight")
        gid = units_a[0].group_ids[0]
        with pytest.raises(ValueError, match="at least two"):
            check_subadditivity(probe, toy_a, [gid])
        with pytest.raises(ValueError, match="duplicate"):
            check_subadditivity(probe, toy_a, [gid, gid])
        with pytest.raises(ValueError, match="already in"):
            conditional_saliency(probe, toy_a, {gid}, gid)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_l1_equality_property(seed):
    """Additivity of the l1 state holds for arbitrary legal chains."""
    from conftest import fixture_path
    from slimgraph import load_model_file

    g = load_model_file(fixture_path("toy_mt_a.onnx"))
    groups = build_channel_groups(g)
    units = group_units(groups)
    pool = [gid for u in units for gid in u.group_ids]
    rng = np.random.default_rng(seed)
    size = int(rng.integers(2, 5))
    chain = [int(c) for c in rng.choice(pool, size=size, replace=False)]
    probe = make_probe(g, groups, state_kind="l1_weight")
    joint, bound, holds = check_subadditivity(probe, g, chain)
    assert holds
    assert abs(joint - bound) <= 1e-12 * max(1.0, bound)

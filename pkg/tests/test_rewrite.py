"""Structural pruning: weight surgery, floors, masking equivalence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slimgraph import (
    Node,
    TensorSpec,
    apply_pruning,
    build_channel_groups,
    build_graph,
    count_cost,
    evaluate_losses,
    forward,
    group_units,
    make_toy_dataset,
)
from slimgraph.errors import PruneRequestError

from conftest import random_legal_drop


def chain_graph():
    """conv -> bn -> relu -> conv -> gap -> flatten -> gemm(+bias)."""
    rng = np.random.default_rng(0)
    w1 = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
    s = rng.standard_normal(5).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    m = rng.standard_normal(5).astype(np.float32)
    v = np.abs(rng.standard_normal(5)).astype(np.float32) + 0.5
    w2 = rng.standard_normal((4, 5, 1, 1)).astype(np.float32)
    fw = rng.standard_normal((2, 4)).astype(np.float32)
    fb = rng.standard_normal(2).astype(np.float32)
    nodes = [
        Node("c1", "Conv", ("x", "w1"), ("t1",), {"pads": [1, 1, 1, 1]}),
        Node("bn", "BatchNormalization", ("t1", "s", "b", "m", "v"), ("t2",), {}),
        Node("r", "Relu", ("t2",), ("t3",), {}),
        Node("c2", "Conv", ("t3", "w2"), ("t4",), {}),
        Node("gap", "GlobalAveragePool", ("t4",), ("t5",), {}),
        Node("fl", "Flatten", ("t5",), ("t6",), {}),
        Node("fc", "Gemm", ("t6", "fw", "fb"), ("y",), {"transB": 1}),
    ]
    return build_graph(
        "chain", nodes,
        {"w1": w1, "s": s, "b": b, "m": m, "v": v, "w2": w2, "fw": fw, "fb": fb},
        [TensorSpec("x", (-1, 3, 6, 6))],
        [TensorSpec("y", (-1, 2))],
    )


class TestWeightSurgery:
    def test_conv_bn_consumer_slices(self):
        g = chain_graph()
        groups = build_channel_groups(g)
        # drop channel 2 of c1
        target = next(
            grp.id for grp in groups
            if any(s.node_id == "c1" and s.role == "producer_out" and s.channel == 2
                   for s in grp.slots)
        )
        pruned = apply_pruning(g, {target}, groups)
        keep = [0, 1, 3, 4]
        np.testing.assert_array_equal(pruned.weights["w1"], g.weights["w1"][keep])
        for name in ("s", "b", "m", "v"):
            np.testing.assert_array_equal(pruned.weights[name], g.weights[name][keep])
        np.testing.assert_array_equal(pruned.weights["w2"], g.weights["w2"][:, keep])
        assert pruned.shape_of("t1") == (-1, 4, 6, 6)

    def test_gemm_transB_input_slice(self):
        g = chain_graph()
        groups = build_channel_groups(g)
        target = next(
            grp.id for grp in groups
            if any(s.node_id == "c2" and s.role == "producer_out" and s.channel == 1
                   for s in grp.slots)
        )
        pruned = apply_pruning(g, {target}, groups)
        keep = [0, 2, 3]
        np.testing.assert_array_equal(pruned.weights["w2"], g.weights["w2"][keep])
        np.testing.assert_array_equal(pruned.weights["fw"], g.weights["fw"][:, keep])
        # output head untouched
        np.testing.assert_array_equal(pruned.weights["fb"], g.weights["fb"])

    def test_matmul_and_bias_add_slices(self, toy_b):
        groups = build_channel_groups(toy_b)
        units = group_units(groups)
        conv5 = next(u for u in units if u.label == "conv5")
        dropped = set(conv5.group_ids[:2])
        channels = sorted(
            s.channel
            for grp in groups if grp.id in dropped
            for s in grp.slots if s.node_id == "conv5" and s.role == "producer_out"
        )
        pruned = apply_pruning(toy_b, dropped, groups)
        keep = [c for c in range(6) if c not in channels]
        np.testing.assert_array_equal(
            pruned.weights["conv5_w"], toy_b.weights["conv5_w"][keep]
        )
        np.testing.assert_array_equal(
            pruned.weights["conv5_b"], toy_b.weights["conv5_b"][keep]
        )
        # MatMul weight is (in_features, out); rows follow the producer
        np.testing.assert_array_equal(
            pruned.weights["fc_reg_w"], toy_b.weights["fc_reg_w"][keep]
        )
        # bias-Add rides the head output and stays intact
        np.testing.assert_array_equal(
            pruned.weights["fc_reg_b"], toy_b.weights["fc_reg_b"]
        )
        assert pruned.shape_of("conv5_out") == (-1, 4, 4, 4)
        # reshape target vector re-derived for the narrower tensor
        assert int(np.prod(pruned.weights["reshape_reg_shape"][1:])) in (4, -1)

    def test_coupled_unit_prunes_both_producers(self, toy_a, groups_a, units_a):
        unit = next(u for u in units_a if u.label == "conv1+conv2b")
        dropped = set(unit.group_ids[:3])
        pruned = apply_pruning(toy_a, dropped, groups_a)
        assert pruned.weights["conv1_w"].shape[0] == 9
        assert pruned.weights["conv2b_w"].shape[0] == 9
        assert pruned.weights["conv2a_w"].shape[1] == 9
        assert pruned.shape_of("add1_out") == (-1, 9, 8, 8)


class TestGuards:
    def test_unknown_group_rejected(self, toy_a, groups_a):
        with pytest.raises(PruneRequestError):
            apply_pruning(toy_a, {10_000}, groups_a)

    def test_pinned_group_rejected(self, toy_a, groups_a):
        pinned = next(g.id for g in groups_a if g.pinned)
        with pytest.raises(PruneRequestError):
            apply_pruning(toy_a, {pinned}, groups_a)

    def test_floor_enforced(self, toy_a, groups_a, units_a):
        unit = next(u for u in units_a if u.label == "conv3b")
        with pytest.raises(PruneRequestError):
            apply_pruning(toy_a, set(unit.group_ids), groups_a)  # would leave 0
        kept_one = apply_pruning(toy_a, set(unit.group_ids[:-1]), groups_a)
        assert kept_one.weights["conv3b_w"].shape[0] == 1

    def test_floor_parameter(self, toy_a, groups_a, units_a):
        unit = next(u for u in units_a if u.label == "conv3b")
        with pytest.raises(PruneRequestError):
            apply_pruning(toy_a, set(unit.group_ids[:-1]), groups_a, min_channels=2)

    def test_empty_drop_is_identity(self, toy_a, groups_a):
        pruned = apply_pruning(toy_a, set(), groups_a)
        assert count_cost(pruned).total_flops == count_cost(toy_a).total_flops


class TestMaskingEquivalence:
    def test_spot_equivalence(self, toy_a, groups_a, units_a, data_a):
        rng = np.random.default_rng(42)
        dropped = random_legal_drop(groups_a, units_a, rng)
        masked = evaluate_losses(toy_a, data_a, mask=dropped, groups=groups_a)
        pruned = apply_pruning(toy_a, dropped, groups_a)
        removed = evaluate_losses(pruned, data_a)
        for (_, lm), (_, lr) in zip(masked.values, removed.values):
            assert abs(lm - lr) <= 1e-5 * max(1.0, abs(lr))

    def test_forward_outputs_match(self, toy_a, groups_a, units_a):
        rng = np.random.default_rng(7)
        dropped = random_legal_drop(groups_a, units_a, rng)
        x = rng.standard_normal((4, 3, 16, 16)).astype(np.float32)
        masked = forward(toy_a, {"input": x}, mask=dropped, groups=groups_a)
        pruned = apply_pruning(toy_a, dropped, groups_a)
        removed = forward(pruned, {"input": x})
        for name in masked:
            np.testing.assert_allclose(masked[name], removed[name], rtol=1e-5, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_random_legal_drops_stay_valid(seed):
    """Any legal drop yields a graph that revalidates, with widths
    reduced by exactly the dropped counts."""
    from conftest import fixture_path
    from slimgraph import load_model_file

    g = load_model_file(fixture_path("toy_mt_a.onnx"))
    groups = build_channel_groups(g)
    units = group_units(groups)
    rng = np.random.default_rng(seed)
    dropped = random_legal_drop(groups, units, rng)
    pruned = apply_pruning(g, dropped, groups)  # build_graph re-validates
    for unit in units:
        removed_here = sum(1 for gid in unit.group_ids if gid in dropped)
        for producer in unit.producers:
            w_old = next(
                a for n, a in g.weights.items()
                if n.startswith(producer) and a.ndim in (2, 4)
            )
            w_new = next(
                a for n, a in pruned.weights.items()
                if n.startswith(producer) and a.ndim in (2, 4)
            )
            axis_old = w_old.shape[0]
            axis_new = w_new.shape[0]
            assert axis_old - axis_new == removed_here
    assert count_cost(pruned).total_params < count_cost(g).total_params

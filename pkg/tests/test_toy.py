"""Toy multi-task architectures: structure, determinism, redundancy."""

import numpy as np
import pytest

from slimgraph import (
    build_channel_groups,
    build_toy_model,
    group_units,
    graphs_equal,
)
from slimgraph.graph.toy import head_node_ids


class TestToyA:
    def test_group_census(self, toy_a, groups_a, units_a):
        assert len(groups_a) == 80
        assert sum(1 for g in groups_a if g.pinned) == 8
        assert sum(1 for g in groups_a if not g.pinned) == 72
        by_label = {u.label: u for u in units_a}
        expected = {
            "conv1+conv2b": 12,
            "conv2a": 16,
            "conv3a": 10,
            "conv3b": 6,
            "conv4": 20,
            "conv5": 8,
        }
        for label, count in expected.items():
            assert len(by_label[label].group_ids) == count, label
            assert by_label[label].total_channels == count
        # output heads are pinned whole
        assert len(by_label["fc_cls"].group_ids) == 0
        assert len(by_label["fc_cls"].pinned_ids) == 5
        assert len(by_label["fc_reg"].pinned_ids) == 3

    def test_output_shapes(self, toy_a):
        assert toy_a.shape_of("cls_out") == (-1, 5)
        assert toy_a.shape_of("reg_out") == (-1, 3)

    def test_heads(self, toy_a):
        assert head_node_ids(toy_a) == ["fc_cls", "fc_reg"]

    def test_seed_determinism(self):
        assert graphs_equal(build_toy_model("toy_mt_a", 7), build_toy_model("toy_mt_a", 7))
        assert not graphs_equal(build_toy_model("toy_mt_a", 7), build_toy_model("toy_mt_a", 8))


class TestToyB:
    def test_group_census(self, toy_b):
        groups = build_channel_groups(toy_b)
        units = group_units(groups)
        assert len(groups) == 48
        assert sum(1 for g in groups if g.pinned) == 6
        by_label = {u.label: u for u in units}
        expected = {"conv1+conv3": 10, "conv2": 14, "conv4": 12, "conv5": 6}
        for label, count in expected.items():
            assert len(by_label[label].group_ids) == count, label

    def test_reshape_head(self, toy_b):
        # the regression head flattens via Reshape into MatMul+Add
        ops = {n.id: n.op for n in toy_b.nodes}
        assert ops["reshape_reg"] == "Reshape"
        assert ops["fc_reg_mm"] == "MatMul"
        assert ops["fc_reg_add"] == "Add"
        assert head_node_ids(toy_b) == ["fc_cls", "fc_reg_mm", "fc_reg_add"]


class TestRedundancyDesign:
    def test_weak_channels_have_small_saliency(self, toy_a):
        """Half of each conv's filters are scaled down along with their
        normalization gain, so the ascending saliency order should meet
        many near-free drops before any consequential one."""
        w = toy_a.weights["conv1_w"]
        norms = np.abs(w).sum(axis=(1, 2, 3))
        order = np.sort(norms)
        weak, strong = order[:6], order[6:]
        assert weak.max() < strong.min() * 0.25

    def test_unknown_arch(self):
        with pytest.raises(ValueError):
            build_toy_model("toy_mt_z", seed=0)

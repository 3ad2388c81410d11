"""Loss evaluation, relative change, and the drop criterion."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slimgraph import (
    Node,
    TaskLossVector,
    TaskSpec,
    TensorSpec,
    build_graph,
    evaluate_losses,
    forward,
    make_toy_dataset,
    perf_drop,
    relative_change,
)
from slimgraph.errors import OracleError
from slimgraph.oracle import EvalDataset
from slimgraph.oracle.data import per_sample_losses


def identity_model(features=3):
    w = np.eye(features, dtype=np.float32)
    node = Node("mm", "MatMul", ("x", "w"), ("y",), {})
    return build_graph("ident", [node], {"w": w},
                       [TensorSpec("x", (-1, features))],
                       [TensorSpec("y", (-1, features))])


def dataset_for(g, targets_fn, loss_kind="mse", batches=2, batch=4, features=3, seed=0):
    rng = np.random.default_rng(seed)
    spec = TaskSpec("t", loss_kind, "y")
    rows = []
    for _ in range(batches):
        x = rng.standard_normal((batch, features)).astype(np.float32)
        y = forward(g, {"x": x})["y"]
        rows.append(({"x": x}, {"t": targets_fn(y)}))
    return EvalDataset(rows, [spec], tag="test")


class TestLossKinds:
    def test_mse_offset_one_is_one(self):
        g = identity_model()
        data = dataset_for(g, lambda y: y + 1.0)
        losses = evaluate_losses(g, data)
        assert abs(losses.as_dict()["t"] - 1.0) < 1e-6

    def test_perfect_prediction_near_zero(self):
        g = identity_model()
        data = dataset_for(g, lambda y: y)
        assert evaluate_losses(g, data).as_dict()["t"] <= 1e-6

    def test_smooth_l1_small_branch(self):
        g = identity_model()
        data = dataset_for(g, lambda y: y + 0.5, loss_kind="smooth_l1")
        # |d| = 0.5 < 1 everywhere: loss = 0.5 * 0.25
        assert abs(evaluate_losses(g, data).as_dict()["t"] - 0.125) < 1e-6

    def test_smooth_l1_large_branch(self):
        g = identity_model()
        data = dataset_for(g, lambda y: y + 3.0, loss_kind="smooth_l1")
        assert abs(evaluate_losses(g, data).as_dict()["t"] - 2.5) < 1e-6

    def test_cross_entropy_hand_value(self):
        g = identity_model(2)
        x = np.array([[2.0, 0.0]], np.float32)
        labels = np.array([0], np.int64)
        data = EvalDataset([({"x": x}, {"t": labels})],
                           [TaskSpec("t", "cross_entropy", "y")], tag="ce")
        loss = evaluate_losses(g, data).as_dict()["t"]
        expected = float(np.log(1.0 + np.exp(-2.0)))
        assert abs(loss - expected) < 1e-9

    def test_unknown_loss_kind_rejected(self):
        with pytest.raises(OracleError):
            TaskSpec("t", "hinge", "y")


class TestAggregation:
    def test_mean_of_batch_means(self, toy_a, data_a):
        matrix = per_sample_losses(toy_a, data_a)
        losses = evaluate_losses(toy_a, data_a)
        # equal batch sizes: mean of batch means equals the global mean
        np.testing.assert_allclose(losses.losses, matrix.mean(axis=0), rtol=1e-12)

    def test_batch_id_tracks_mask(self, toy_a, data_a, groups_a):
        a = evaluate_losses(toy_a, data_a)
        b = evaluate_losses(toy_a, data_a)
        c = evaluate_losses(toy_a, data_a, mask={0}, groups=groups_a)
        assert a.batch_id == b.batch_id
        assert a.batch_id != c.batch_id

    def test_toy_dataset_shape(self, toy_a, data_a):
        assert data_a.sample_count == 32
        assert [s.task_name for s in data_a.task_specs] == ["cls", "reg"]
        assert [s.loss_kind for s in data_a.task_specs] == ["cross_entropy", "mse"]

    def test_toy_dataset_deterministic(self, toy_a):
        d1 = make_toy_dataset(toy_a, samples=8, batch_size=4, seed=3)
        d2 = make_toy_dataset(toy_a, samples=8, batch_size=4, seed=3)
        for (i1, t1), (i2, t2) in zip(d1.batches, d2.batches):
            for k in i1:
                np.testing.assert_array_equal(i1[k], i2[k])
            for k in t1:
                np.testing.assert_array_equal(t1[k], t2[k])
        assert d1.tag == d2.tag


def vec(*values):
    return TaskLossVector(tuple((f"t{i}", v) for i, v in enumerate(values)), "b")


class TestRelativeChange:
    def test_basic(self):
        delta = relative_change(vec(2.0), vec(2.3))
        assert abs(delta.values[0] - 0.15) < 1e-12
        assert delta.absolute_fallback == (False,)

    def test_identity_is_zero(self):
        delta = relative_change(vec(1.0, 4.0), vec(1.0, 4.0))
        assert delta.values == (0.0, 0.0)

    def test_vector_example(self):
        delta = relative_change(vec(1.0, 4.0), vec(1.1, 3.0))
        np.testing.assert_allclose(delta.values, (0.1, -0.25), atol=1e-12)

    def test_zero_base_falls_back_to_absolute(self):
        delta = relative_change(vec(0.0, 2.0), vec(0.5, 2.2))
        assert delta.absolute_fallback == (True, False)
        assert abs(delta.values[0] - 0.5) < 1e-12

    def test_task_mismatch_rejected(self):
        other = TaskLossVector((("other", 1.0),), "b")
        with pytest.raises(OracleError):
            relative_change(vec(1.0), other)


class TestPerfDrop:
    def test_linf_example(self):
        assert perf_drop((0.10, -0.25, 0.05)) == (0.25, 1)

    def test_single_component(self):
        assert perf_drop((0.0,)) == (0.0, 0)

    def test_tie_breaks_low_index(self):
        value, task = perf_drop((0.2, -0.2))
        assert value == 0.2 and task == 0

    def test_alternative_metrics(self):
        delta = (0.10, -0.25, 0.05)
        v_l1, _ = perf_drop(delta, "l1_sum")
        v_l2, _ = perf_drop(delta, "l2")
        v_min, _ = perf_drop(delta, "min")
        assert abs(v_l1 - 0.40) < 1e-12
        assert abs(v_l2 - np.sqrt(0.01 + 0.0625 + 0.0025)) < 1e-12
        assert abs(v_min - 0.05) < 1e-12

    def test_argmax_is_always_the_linf_task(self):
        for metric in ("linf", "l1_sum", "l2", "min"):
            _, task = perf_drop((0.10, -0.25, 0.05), metric)
            assert task == 1, metric

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.randoms())
    def test_value_permutation_and_sign_invariant(self, values, rand):
        base, _ = perf_drop(tuple(values))
        flipped = tuple(-v for v in values)
        shuffled = list(values)
        rand.shuffle(shuffled)
        assert perf_drop(flipped)[0] == base
        assert perf_drop(tuple(shuffled))[0] == base

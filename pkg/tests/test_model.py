import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import check_gradients
from linconn.errors import PreconditionError
from linconn.model import (
    LinearLayer,
    LossSpec,
    add_head,
    backward,
    extract_features,
    forward,
    init_network,
    load_network,
    loss_distill,
    save_network,
    update_norm_stats,
)


def manual_forward(net, x, task_id):
    """Layer-by-layer re-evaluation with explicit loops over units."""
    h = np.array(x, dtype=float)
    for layer in net.extractor:
        out = np.empty((h.shape[0], layer.out_dim))
        for j in range(layer.out_dim):
            out[:, j] = sum(h[:, i] * layer.weight[j, i] for i in range(layer.in_dim)) + layer.bias[j]
        h = np.maximum(out, 0) if layer.relu else out
    head = net.heads[task_id]
    logits = np.stack([h @ head.weight[k] + head.bias[k] for k in range(head.out_dim)], axis=1)
    return h, logits


def test_init_shapes():
    net = init_network([4, 8, 8], 3, seed=0)
    assert [l.weight.shape for l in net.extractor] == [(8, 4), (8, 8)]
    assert net.heads[0].weight.shape == (3, 8)
    for layer in net.extractor + net.heads:
        bound = np.sqrt(6 / (layer.in_dim + layer.out_dim))
        assert np.abs(layer.weight).max() <= bound
        assert not layer.bias.any()


def test_init_deterministic_and_seed_sensitive():
    a, b = init_network([4, 8, 8], 3, seed=5), init_network([4, 8, 8], 3, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    c = init_network([4, 8, 8], 3, seed=6)
    assert a.parameter_vector().tobytes() != c.parameter_vector().tobytes()


def test_negative_seed_is_accepted():
    init_network([2, 3], 2, seed=-1)


@pytest.mark.parametrize("widths", [[4, 0, 8], [], [-1]])
def test_init_rejects_bad_widths(widths):
    with pytest.raises(PreconditionError):
        init_network(widths, 2, seed=0)


def test_zero_weights_give_zero_logits(small_net, rng):
    for layer in small_net.extractor + small_net.heads:
        layer.weight[:] = 0
        layer.bias[:] = 0
    assert not forward(small_net, rng.normal(size=(5, 4)), 0).logits.any()
    assert not extract_features(small_net, rng.normal(size=(5, 4))).any()


def test_identity_head_passes_inputs(rng):
    net = init_network([3], 3, seed=0)
    net.heads[0] = LinearLayer(np.eye(3), np.zeros(3))
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(forward(net, x, 0).logits, x)


def test_forward_matches_manual_oracle(small_net, rng):
    x = rng.normal(size=(6, 4))
    trace = forward(small_net, x, 0)
    feats, logits = manual_forward(small_net, x, 0)
    np.testing.assert_allclose(trace.logits, logits, rtol=0, atol=1e-12)
    np.testing.assert_allclose(trace.features, feats, rtol=0, atol=1e-12)
    np.testing.assert_allclose(extract_features(small_net, x), feats, rtol=0, atol=1e-12)


def test_trace_structure(small_net, rng):
    x = rng.normal(size=(5, 4))
    trace = forward(small_net, x, 0)
    assert len(trace.layer_inputs) == len(small_net.extractor) + 1
    assert np.array_equal(trace.layer_inputs[0], x)
    assert {a.shape[0] for a in trace.layer_inputs} == {5}
    np.testing.assert_array_equal(trace.features, extract_features(small_net, x))


def test_forward_is_pure(small_net, rng):
    x = rng.normal(size=(5, 4))
    before = small_net.parameter_vector()
    a, b = forward(small_net, x, 0), forward(small_net, x, 0)
    np.testing.assert_array_equal(a.logits, b.logits)
    np.testing.assert_array_equal(before, small_net.parameter_vector())


def test_new_head_leaves_old_outputs(small_net, rng):
    x = rng.normal(size=(5, 4))
    before = forward(small_net, x, 0).logits
    add_head(small_net, 2)
    np.testing.assert_array_equal(forward(small_net, x, 0).logits, before)
    assert forward(small_net, x, 1).logits.shape == (5, 2)


def test_forward_errors(small_net):
    with pytest.raises(PreconditionError):
        forward(small_net, np.zeros((2, 5)), 0)
    with pytest.raises(PreconditionError):
        forward(small_net, np.zeros((2, 4)), 1)


def test_loss_distill_cases(rng):
    assert loss_distill(np.ones((3, 2)), np.ones((3, 2))) == 0.0
    assert loss_distill([[3.0, 4.0]], [[0.0, 0.0]]) == 25.0
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(7, 5))
    loop = sum(sum((a[i, j] - b[i, j]) ** 2 for j in range(5)) for i in range(7)) / 7
    assert abs(loss_distill(a, b) - loop) <= 1e-12
    with pytest.raises(PreconditionError):
        loss_distill(np.ones((2, 2)), np.ones((2, 3)))


def test_duplicate_batch_gives_same_gradient(small_net, rng):
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    loss1, g1 = backward(small_net, x, y, 0)
    loss2, g2 = backward(small_net, np.vstack([x, x]), np.concatenate([y, y]), 0)
    assert loss1 == pytest.approx(loss2, rel=1e-14)
    for (a, b), (c, d) in zip(g1.extractor, g2.extractor):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(b, d, rtol=1e-12, atol=1e-15)


def test_distill_only_at_coincident_features(small_net, rng):
    x = rng.normal(size=(5, 4))
    ref = extract_features(small_net, x)
    loss, grads = backward(small_net, x, np.zeros(5, int), 0, LossSpec(ce=False, distill_weight=1.0, ref_features=ref))
    assert loss == 0.0
    assert all(not w.any() and not b.any() for w, b in grads.extractor)
    assert grads.heads == {}


def test_missing_reference_features(small_net):
    with pytest.raises(PreconditionError):
        backward(small_net, np.zeros((2, 4)), [0, 1], 0, LossSpec(distill_weight=1.0))


def test_labels_out_of_range(small_net):
    with pytest.raises(PreconditionError):
        backward(small_net, np.zeros((2, 4)), [0, 3], 0)


def test_ce_gradient_matches_finite_differences(small_net, rng):
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    assert check_gradients(small_net, x, y, 0, LossSpec()) <= 1.0


def test_ce_plus_distill_gradient(small_net, rng):
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    ref = rng.normal(size=(6, 8))
    assert check_gradients(small_net, x, y, 0, LossSpec(distill_weight=0.7, ref_features=ref)) <= 1.0


def test_mixed_task_batch_gradient(small_net, rng):
    add_head(small_net, 2)
    x = rng.normal(size=(6, 4))
    ids = np.array([0, 1, 0, 1, 1, 0])
    y = np.where(ids == 0, rng.integers(0, 3, 6), rng.integers(0, 2, 6))
    assert check_gradients(small_net, x, y, ids, LossSpec()) <= 1.0


def test_gradient_with_normalization(rng):
    net = init_network([3, 5, 4], 2, seed=1, normalization=True)
    update_norm_stats(net, rng.normal(size=(10, 3)))
    x = rng.normal(size=(4, 3))
    assert check_gradients(net, x, rng.integers(0, 2, 4), 0, LossSpec()) <= 1.0


@settings(max_examples=10, deadline=None)
@given(
    hidden=st.lists(st.integers(1, 16), min_size=0, max_size=2),
    d_in=st.integers(1, 6),
    classes=st.integers(2, 4),
    batch=st.integers(1, 8),
    distill=st.booleans(),
    seed=st.integers(0, 2**31),
)
def test_gradient_property(hidden, d_in, classes, batch, distill, seed):
    rng = np.random.default_rng(seed)
    net = init_network([d_in, *hidden], classes, seed=seed)
    for layer in net.extractor + net.heads:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    x = rng.normal(size=(batch, d_in))
    y = rng.integers(0, classes, size=batch)
    feat_dim = net.feature_dim
    spec = LossSpec(distill_weight=1.0, ref_features=rng.normal(size=(batch, feat_dim))) if distill else LossSpec()
    assert check_gradients(net, x, y, 0, spec) <= 1.0


def test_norm_stats_update_momentum(rng):
    net = init_network([3, 4], 2, seed=0, normalization=True)
    x = rng.normal(size=(20, 3))
    z = x @ net.extractor[0].weight.T + net.extractor[0].bias
    update_norm_stats(net, x)
    np.testing.assert_allclose(net.norm.mean[0], 0.1 * z.mean(axis=0))
    np.testing.assert_allclose(net.norm.var[0], 0.9 + 0.1 * z.var(axis=0))


@pytest.mark.parametrize("normalization", [False, True])
def test_checkpoint_round_trip(tmp_path, small_net, normalization, rng):
    net = init_network([4, 8, 8], 3, seed=2, normalization=normalization)
    add_head(net, 2)
    update_norm_stats(net, rng.normal(size=(6, 4)))
    save_network(net, tmp_path / "net.npz")
    back = load_network(tmp_path / "net.npz")
    assert back.same_architecture(net) and back.seed == net.seed
    for a, b in zip(net.arrays(), back.arrays()):
        assert a.tobytes() == b.tobytes()

import numpy as np
import pytest

from conftest import numerical_gradient, relative_error
from fedcontrast.augment import none_policy
from fedcontrast.client import (
    ClientShard,
    client_loss,
    client_loss_on_views,
    client_train_session,
    ensure_projector,
)
from fedcontrast.config import ExperimentConfig
from fedcontrast.datasets import UnlabeledSet
from fedcontrast.errors import DataError, NonFiniteLossError, ParameterError
from fedcontrast.layers import Flatten, Linear, ReLU, Sequential, Softmax
from fedcontrast.models import ContrastiveNetwork
from fedcontrast.parameters import extract_role, stitch
from fedcontrast.rngs import derive_rng


def toy_net():
    return ContrastiveNetwork.from_stacks(
        backbone=Sequential([Flatten(), Linear("backbone/lin", 4, 3), ReLU()]),
        head=Sequential([Linear("head/lin", 3, 2), Softmax()]),
        projector=Sequential([Linear("projector/lin", 3, 3)]),
        input_shape=(2, 2, 1), feature_dim=3, num_classes=2)


def toy_client_params(net, seed=0, drift=0.0):
    rng = np.random.default_rng(seed)
    backbone = extract_role(net.init_server_params(rng, dtype=np.float64), "backbone")
    projector = net.init_projector_params(rng, dtype=np.float64)
    online = stitch(backbone, projector)
    target = extract_role(online, "backbone").copy()
    if drift:
        for name in target.entries:
            target.entries[name] += drift
    return online, target


def toy_config(**overrides) -> ExperimentConfig:
    base = dict(dataset="mnist", gamma=0.5, K=2, B=1, R_G=1, R_L=1, BS_L=2,
                BS_U=3, augmentation="none", lr=0.1, seed=0)
    base.update(overrides)
    return ExperimentConfig(**base).resolve()


# -- loss values ----------------------------------------------------------------


def test_identity_projector_same_nets_same_views_gives_zero_loss():
    net = toy_net()
    online, target = toy_client_params(net)
    online.entries["projector/lin/weight"][:] = np.eye(3)
    online.entries["projector/lin/bias"][:] = 0.0
    v = np.random.default_rng(1).random((4, 2, 2, 1))
    loss, grads, _ = client_loss_on_views(net, online, target, v, v)
    assert loss == pytest.approx(0.0, abs=1e-15)
    for g in grads.values():
        np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_two_dim_toy_matches_hand_computation():
    """Hand-set 2-dim linear backbone and projector, distinct target."""
    net = ContrastiveNetwork.from_stacks(
        backbone=Sequential([Flatten(), Linear("backbone/lin", 2, 2)]),
        head=None,
        projector=Sequential([Linear("projector/lin", 2, 2)]),
        input_shape=(1, 2, 1), feature_dim=2, num_classes=2)
    online = stitch(
        extract_role(net.init_server_params(np.random.default_rng(0), np.float64), "backbone"),
        net.init_projector_params(np.random.default_rng(0), np.float64))
    w_b = np.array([[1.0, -0.5], [0.25, 2.0]])
    b_b = np.array([0.1, -0.2])
    w_p = np.array([[0.5, 1.0], [-1.0, 0.75]])
    b_p = np.array([0.0, 0.3])
    online.entries["backbone/lin/weight"][:] = w_b
    online.entries["backbone/lin/bias"][:] = b_b
    online.entries["projector/lin/weight"][:] = w_p
    online.entries["projector/lin/bias"][:] = b_p
    target = extract_role(online, "backbone").copy()
    w_t = w_b + 0.3
    b_t = b_b - 0.1
    target.entries["backbone/lin/weight"][:] = w_t
    target.entries["backbone/lin/bias"][:] = b_t

    v1 = np.array([[[[0.2], [0.8]]]])
    v2 = np.array([[[[0.6], [0.1]]]])
    x1, x2 = v1.reshape(1, 2), v2.reshape(1, 2)

    z1 = (x1 @ w_b + b_b) @ w_p + b_p
    z2 = (x2 @ w_b + b_b) @ w_p + b_p
    t1 = x1 @ w_t + b_t
    t2 = x2 @ w_t + b_t
    expected = (np.sum((z1 - t2) ** 2) + np.sum((z2 - t1) ** 2)) / 2

    loss, _, _ = client_loss_on_views(net, online, target, v1, v2)
    assert loss == pytest.approx(expected, rel=1e-12)


def test_swapping_views_is_bitwise_neutral():
    net = toy_net()
    online, target = toy_client_params(net, drift=0.1)
    rng = np.random.default_rng(2)
    v1, v2 = rng.random((5, 2, 2, 1)), rng.random((5, 2, 2, 1))
    a_loss, a_grads, _ = client_loss_on_views(net, online, target, v1, v2)
    b_loss, b_grads, _ = client_loss_on_views(net, online, target, v2, v1)
    assert a_loss == b_loss  # bitwise
    # gradients agree up to summation-order roundoff in the fused backward
    for name in a_grads:
        np.testing.assert_allclose(a_grads[name], b_grads[name], rtol=1e-10, atol=1e-12)


# -- gradients -------------------------------------------------------------------


@pytest.mark.parametrize("normalize_projection", [False, True])
def test_client_gradients_match_finite_differences(normalize_projection):
    net = toy_net()
    online, target = toy_client_params(net, seed=3, drift=0.2)
    rng = np.random.default_rng(4)
    v1, v2 = rng.random((4, 2, 2, 1)), rng.random((4, 2, 2, 1))
    _, grads, _ = client_loss_on_views(net, online, target, v1, v2,
                                       normalize_projection=normalize_projection)

    def loss():
        value, _, _ = client_loss_on_views(net, online, target, v1, v2,
                                           normalize_projection=normalize_projection)
        return value

    for name in online.trainable_names():
        num = numerical_gradient(loss, online.entries[name])
        assert relative_error(grads[name], num) < 1e-4, name


def test_stop_gradient_blocks_the_target_path():
    """With target initialized to the online backbone, the analytic gradient
    matches finite differences that perturb the online copy only; finite
    differences that perturb both copies together (no stop gradient) do not."""
    net = toy_net()
    online, _ = toy_client_params(net, seed=5)
    target = extract_role(online, "backbone").copy()
    rng = np.random.default_rng(6)
    v1, v2 = rng.random((4, 2, 2, 1)), rng.random((4, 2, 2, 1))
    _, grads, _ = client_loss_on_views(net, online, target, v1, v2)

    name = "backbone/lin/weight"

    def loss_online_only():
        value, _, _ = client_loss_on_views(net, online, target, v1, v2)
        return value

    num_online = numerical_gradient(loss_online_only, online.entries[name])
    assert relative_error(grads[name], num_online) < 1e-4

    tied = online.entries[name]  # perturb target in lockstep with online

    def loss_tied():
        target.entries[name][...] = tied
        value, _, _ = client_loss_on_views(net, online, target, v1, v2)
        return value

    num_tied = numerical_gradient(loss_tied, tied)
    target.entries[name][...] = tied
    assert relative_error(grads[name], num_tied) > 1e-2  # clearly different path


def test_loss_gradients_never_name_target_entries():
    net = toy_net()
    online, target = toy_client_params(net, drift=0.3)
    before = {k: v.copy() for k, v in target.entries.items()}
    v = np.random.default_rng(7).random((3, 2, 2, 1))
    _, grads, _ = client_loss_on_views(net, online, target, v, v + 0.01)
    assert set(grads) <= set(online.trainable_names())
    for name, value in target.entries.items():
        np.testing.assert_array_equal(value, before[name])


# -- sessions --------------------------------------------------------------------


def make_shard(net, n=7, client_id=0, seed=0):
    images = np.random.default_rng(seed).random((n, 2, 2, 1))
    return ClientShard(client_id=client_id, data=UnlabeledSet(images),
                       rng=derive_rng(0, 7, client_id))


def server_backbone(net, seed=0, dtype=np.float64):
    return extract_role(net.init_server_params(np.random.default_rng(seed), dtype), "backbone")


def test_session_rejects_non_backbone_payload():
    net = toy_net()
    full = net.init_server_params(np.random.default_rng(0), np.float64)
    shard = make_shard(net)
    with pytest.raises(ParameterError):
        client_train_session(net, full, shard, toy_config(), none_policy(), None,
                             session_rng=derive_rng(0, 5, 0, 0))


def test_session_rejects_empty_shard():
    net = toy_net()
    shard = ClientShard(client_id=0, data=UnlabeledSet(np.zeros((0, 2, 2, 1))),
                        rng=derive_rng(0, 7, 0))
    with pytest.raises(DataError):
        client_train_session(net, server_backbone(net), shard, toy_config(),
                             none_policy(), None, session_rng=derive_rng(0, 5, 0, 0))


def test_session_lr_zero_returns_incoming_backbone():
    net = toy_net()
    incoming = server_backbone(net)
    before = {k: v.copy() for k, v in incoming.entries.items()}
    shard = make_shard(net)
    returned, summary = client_train_session(
        net, incoming, shard, toy_config(lr=0.0), none_policy(), None,
        session_rng=derive_rng(0, 5, 0, 0))
    assert summary.steps == 3  # 7 examples, BS_U=3, final partial batch
    for name, value in returned.entries.items():
        np.testing.assert_array_equal(value, before[name])
    # incoming payload was copied, not aliased
    assert returned.entries["backbone/lin/weight"] is not incoming.entries["backbone/lin/weight"]


def test_first_contact_initializes_projector_deterministically():
    net = toy_net()
    shard_a = make_shard(net, client_id=3)
    shard_b = make_shard(net, client_id=3)
    cfg = toy_config()
    client_train_session(net, server_backbone(net), shard_a, cfg, none_policy(), None,
                         session_rng=derive_rng(0, 5, 0, 3))
    client_train_session(net, server_backbone(net), shard_b, cfg, none_policy(), None,
                         session_rng=derive_rng(0, 5, 0, 3))
    for name in shard_a.projector.entries:
        np.testing.assert_array_equal(
            shard_a.projector.entries[name], shard_b.projector.entries[name])
    other = make_shard(net, client_id=4)
    client_train_session(net, server_backbone(net), other, cfg, none_policy(), None,
                         session_rng=derive_rng(0, 5, 0, 4))
    assert not np.array_equal(
        shard_a.projector.entries["projector/lin/weight"],
        other.projector.entries["projector/lin/weight"])


def test_projector_persists_across_sessions():
    net = toy_net()
    shard = make_shard(net)
    cfg = toy_config(lr=0.05)
    client_train_session(net, server_backbone(net), shard, cfg, none_policy(), None,
                         session_rng=derive_rng(0, 5, 0, 0))
    after_first = {k: v.copy() for k, v in shard.projector.entries.items()}
    client_train_session(net, server_backbone(net), shard, cfg, none_policy(), None,
                         session_rng=derive_rng(0, 5, 1, 0))
    # second session trained further from the persisted projector
    changed = any(
        not np.array_equal(after_first[name], shard.projector.entries[name])
        for name in after_first)
    assert changed
    # and with lr=0 nothing changes at all
    frozen = {k: v.copy() for k, v in shard.projector.entries.items()}
    client_train_session(net, server_backbone(net), shard, toy_config(lr=0.0),
                         none_policy(), None, session_rng=derive_rng(0, 5, 2, 0))
    for name in frozen:
        np.testing.assert_array_equal(frozen[name], shard.projector.entries[name])


def test_session_never_holds_head_parameters():
    net = toy_net()
    shard = make_shard(net)
    returned, _ = client_train_session(
        net, server_backbone(net), shard, toy_config(), none_policy(), None,
        session_rng=derive_rng(0, 5, 0, 0))
    assert returned.present_roles() == {"backbone"}
    assert shard.projector.present_roles() == {"projector"}


def test_session_aborts_on_non_finite_loss():
    net = toy_net()
    incoming = server_backbone(net)
    incoming.entries["backbone/lin/weight"][0, 0] = np.nan
    shard = make_shard(net)
    with pytest.raises(NonFiniteLossError):
        client_train_session(net, incoming, shard, toy_config(), none_policy(), None,
                             session_rng=derive_rng(0, 5, 0, 0))


def test_persist_client_target_keeps_ema_state():
    net = toy_net()
    shard = make_shard(net)
    cfg = toy_config(persist_client_target=True, lr=0.05)
    client_train_session(net, server_backbone(net), shard, cfg, none_policy(), None,
                         session_rng=derive_rng(0, 5, 0, 0))
    assert shard.target_backbone is not None
    carried = {k: v.copy() for k, v in shard.target_backbone.entries.items()}
    # with zero lr the carried target is the session's EMA anchor and survives
    client_train_session(net, server_backbone(net), shard, toy_config(
        persist_client_target=True, lr=0.0), none_policy(), None,
        session_rng=derive_rng(0, 5, 1, 0))
    for name in carried:
        assert shard.target_backbone.entries[name].shape == carried[name].shape


def test_client_lr_override_decouples_from_server_lr():
    net = toy_net()
    incoming = server_backbone(net)
    before = {k: v.copy() for k, v in incoming.entries.items()}
    shard = make_shard(net)
    cfg = toy_config(lr=0.5, client_lr=0.0)
    returned, _ = client_train_session(net, incoming, shard, cfg, none_policy(), None,
                                       session_rng=derive_rng(0, 5, 0, 0))
    for name, value in returned.entries.items():
        np.testing.assert_array_equal(value, before[name])


def test_ema_anchor_uses_global_step():
    """With a large global step the target stays close to the incoming
    backbone through a session even at a fast learning rate."""
    net = toy_net()
    shard = make_shard(net)
    cfg = toy_config(lr=0.2, persist_client_target=True)
    incoming = server_backbone(net)
    client_train_session(net, incoming.copy(), shard, cfg, none_policy(), None,
                         session_rng=derive_rng(0, 5, 0, 0), global_step=10**6)
    for name, value in shard.target_backbone.entries.items():
        np.testing.assert_allclose(value, incoming.entries[name], atol=1e-2)


def test_client_loss_wrapper_requires_data():
    net = toy_net()
    online, target = toy_client_params(net)
    with pytest.raises(DataError):
        client_loss(net, online, target, np.zeros((0, 2, 2, 1)), none_policy(),
                    np.random.default_rng(0))


def test_ensure_projector_uses_shard_stream_once():
    net = toy_net()
    shard = make_shard(net, client_id=9)
    first = ensure_projector(net, shard, np.float64)
    again = ensure_projector(net, shard, np.float64)
    assert first is again

import json

import numpy as np
import pytest

from absnas.angle import Reference, angle_of_child
from absnas.data import DataConfig
from absnas.exceptions import ConfigurationError, InvalidChild, SpaceMismatch
from absnas.graph import ChildModel, OperatorId, OperatorSpec, SupernetGraph, enumerate_children
from absnas.nnet import InitPolicy
from absnas.supernet import (
    LrSchedule,
    TrainConfig,
    WeightSource,
    eval_child_accuracy,
    init_supernet,
    load_checkpoint,
    reset_base_weights,
    save_checkpoint,
    train_epoch,
    train_stage,
    train_standalone,
    train_supernet,
)


def current_values(store):
    return {name: param.value.copy() for name, param in store.weights.named_params()}


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigurationError):
        TrainConfig(first_stage_epochs=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(init_policy="he")
    with pytest.raises(ConfigurationError, match="unknown keys"):
        TrainConfig.from_dict({"epochs": 3})
    cfg = TrainConfig.from_dict({"lr_schedule": "constant", "init_policy": "orthogonal"})
    assert cfg.lr_schedule == LrSchedule.constant
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_lr_schedule():
    cosine = TrainConfig(learning_rate=0.1)
    assert cosine.lr_at(0, 10) == pytest.approx(0.1)
    assert cosine.lr_at(5, 10) == pytest.approx(0.05)
    assert cosine.lr_at(3, 1) == pytest.approx(0.1)
    constant = TrainConfig(learning_rate=0.1, lr_schedule=LrSchedule.constant)
    assert constant.lr_at(7, 10) == 0.1


def test_init_supernet_deterministic(toy_space):
    first = init_supernet(toy_space, InitPolicy.kaiming_normal, 11)
    second = init_supernet(toy_space, InitPolicy.kaiming_normal, 11)
    other = init_supernet(toy_space, InitPolicy.kaiming_normal, 12)
    for name, value in current_values(first).items():
        np.testing.assert_array_equal(value, second.weights.params()[name].value)
    assert not np.array_equal(first.weights.stem.weight.value, other.weights.stem.weight.value)


def test_init_supernet_contents(toy_space):
    store = init_supernet(toy_space, InitPolicy.kaiming_normal, 0)
    # identity has no weights, linear and mlp32 do, on all six edges.
    assert len(store.weights.operators) == 12
    assert len(store.weights.operators[OperatorId(0, 2)]) == 2
    assert store.space_hash == toy_space.structure_hash()
    assert store.base_snapshot is store.init_snapshot
    assert not store.init_snapshot["op.0.1.0.weight"].flags.writeable
    np.testing.assert_array_equal(store.init_snapshot["op.0.1.0.weight"], store.weights.operators[OperatorId(0, 1)][0].weight.value)


def test_init_supernet_orthogonal(toy_space):
    store = init_supernet(toy_space, InitPolicy.orthogonal, 0)
    weight = store.weights.operators[OperatorId(3, 1)][0].weight.value
    np.testing.assert_allclose(weight.T @ weight, np.eye(16), atol=1e-6)


def test_operator_vector(shortcut_space):
    store = init_supernet(shortcut_space, InitPolicy.kaiming_normal, 0)
    pool = store.operator_vector(OperatorId(0, 1), OperatorSpec.parse("pool3"))
    np.testing.assert_array_equal(pool, np.full(9, 1.0 / 9.0))
    assert len(store.operator_vector(OperatorId(0, 2), OperatorSpec.parse("none"))) == 0
    linear = store.operator_vector(OperatorId(2, 0), OperatorSpec.parse("linear"), WeightSource.init)
    np.testing.assert_array_equal(linear, store.init_snapshot["op.2.0.0.weight"].ravel())


def test_train_epoch_zero_lr(tiny_space, tiny_store, small_data, quick_train, rng):
    before = current_values(tiny_store)
    entry = train_epoch(tiny_store, tiny_space, small_data.train, quick_train, rng, lr=0.0)
    assert entry.batches == 4
    assert entry.epoch == tiny_store.epoch == 1
    for name, value in before.items():
        np.testing.assert_array_equal(tiny_store.weights.params()[name].value, value)
    for child in enumerate_children(tiny_space):
        if child.choices != (1, 1):
            assert angle_of_child(child, tiny_store, Reference.init) == 0.0


def test_train_epoch_update_counts(tiny_space, quick_train, rng):
    data = DataConfig(num_train=3200, num_validation=10).generate()
    store = init_supernet(tiny_space, InitPolicy.kaiming_normal, 0, input_dim=2, num_classes=4)
    cfg = TrainConfig(batch_size=2, learning_rate=0.01, momentum=0.0)
    entry = train_epoch(store, tiny_space, data.train, cfg, rng)
    assert entry.batches == 1600
    for edge in range(2):
        linear, identity = entry.updates[f"{edge}.0"], entry.updates[f"{edge}.1"]
        assert linear + identity == entry.batches
        assert abs(linear - entry.batches / 2) <= 0.1 * entry.batches / 2


def test_unsampled_operators_keep_initial_weights(tiny_space, tiny_store, small_data, quick_train, rng):
    child = ChildModel(tiny_space, (0, 1))
    train_stage(tiny_store, tiny_space, small_data.train, quick_train, 2, rng, child=child)
    untouched = tiny_store.weights.operators[OperatorId(1, 0)][0]
    np.testing.assert_array_equal(untouched.weight.value, tiny_store.init_snapshot["op.1.0.0.weight"])
    assert untouched.weight.velocity is None
    trained = tiny_store.weights.operators[OperatorId(0, 0)][0].weight.value
    assert not np.array_equal(trained, tiny_store.init_snapshot["op.0.0.0.weight"])


def test_train_supernet_reproducible(tiny_space, small_data, quick_train):
    first = train_supernet(tiny_space, small_data, quick_train, seed=5)
    second = train_supernet(tiny_space, small_data, quick_train, seed=5)
    for name, value in current_values(first).items():
        np.testing.assert_array_equal(value, second.weights.params()[name].value)


def test_train_epoch_checks_space(tiny_store, toy_space, small_data, quick_train, rng):
    with pytest.raises(SpaceMismatch):
        train_epoch(tiny_store, toy_space, small_data.train, quick_train, rng)


def test_eval_child_accuracy(tiny_space, tiny_store, small_data):
    child = ChildModel(tiny_space, (0, 0))
    acc = eval_child_accuracy(child, tiny_store, small_data)
    assert 0.0 <= acc <= 1.0
    assert eval_child_accuracy(child, tiny_store, small_data) == acc


def test_eval_child_accuracy_constant_classifier(tiny_space, tiny_store, small_data):
    tiny_store.weights.classifier_weight.value[:] = 0.0
    tiny_store.weights.classifier_bias.value[:] = [1.0, 0.0, 0.0, 0.0]
    acc = eval_child_accuracy(ChildModel(tiny_space, (0, 1)), tiny_store, small_data)
    assert acc == np.mean(small_data.validation.labels == 0)


def test_eval_child_accuracy_invalid_child(shortcut_space, small_data):
    store = init_supernet(shortcut_space, InitPolicy.kaiming_normal, 0)
    with pytest.raises(InvalidChild):
        eval_child_accuracy(ChildModel(shortcut_space, (2, 0, 0, 0)), store, small_data)


def test_reset_base_weights(tiny_space, tiny_store, small_data, quick_train, rng):
    reset_base_weights(tiny_store)
    np.testing.assert_array_equal(tiny_store.base_snapshot["op.0.0.0.weight"], tiny_store.init_snapshot["op.0.0.0.weight"])

    train_stage(tiny_store, tiny_space, small_data.train, quick_train, 2, rng)
    reset_base_weights(tiny_store, [OperatorId(0, 1)])
    child = ChildModel(tiny_space, (0, 0))
    assert angle_of_child(child, tiny_store, Reference.base) == 0.0
    assert angle_of_child(child, tiny_store, Reference.init) > 0.0
    assert [(e.epoch, e.removed) for e in tiny_store.reset_log] == [(0, ()), (2, ("0.1",))]


def test_checkpoint_resume(tmp_path, tiny_space, tiny_store, small_data, quick_train):
    rng = np.random.default_rng(0)
    train_epoch(tiny_store, tiny_space, small_data.train, quick_train, rng)
    reset_base_weights(tiny_store)
    path = tmp_path / "checkpoint.npz"
    save_checkpoint(tiny_store, path, rng)

    train_epoch(tiny_store, tiny_space, small_data.train, quick_train, rng)
    restored, restored_rng = load_checkpoint(path, tiny_space)
    assert restored.epoch == 1
    assert len(restored.reset_log) == 1
    train_epoch(restored, tiny_space, small_data.train, quick_train, restored_rng)
    for name, value in current_values(tiny_store).items():
        np.testing.assert_array_equal(restored.weights.params()[name].value, value)
    for name, value in tiny_store.base_snapshot.items():
        np.testing.assert_array_equal(restored.base_snapshot[name], value)


def test_checkpoint_space_mismatch(tmp_path, tiny_store, toy_space):
    path = tmp_path / "checkpoint.npz"
    save_checkpoint(tiny_store, path)
    with pytest.raises(SpaceMismatch):
        load_checkpoint(path, toy_space)


def test_train_standalone(tiny_space, small_data, quick_train):
    child = ChildModel(tiny_space, (0, 1))
    result = train_standalone(child, small_data, quick_train, seed=3)
    assert 0.0 <= result.accuracy <= 1.0
    assert 0.0 < result.angle <= np.pi
    assert len(result.losses) == quick_train.standalone_epochs
    again = train_standalone(child, small_data, quick_train, seed=3)
    assert again.accuracy == result.accuracy
    assert again.angle == result.angle


def test_train_standalone_without_weights(tiny_space, small_data, quick_train):
    result = train_standalone(ChildModel(tiny_space, (1, 1)), small_data, quick_train, seed=0)
    assert result.angle == 0.0


def test_checkpoint_names_its_run(tmp_path, tiny_space, tiny_store):
    path = tmp_path / "checkpoint.npz"
    save_checkpoint(tiny_store, path, np.random.default_rng(0), config_hash="0123456789ab", seed=4)
    with np.load(path) as archive:
        meta = json.loads(str(archive["meta"]))
    assert (meta["config_hash"], meta["seed"]) == ("0123456789ab", 4)
    store, rng = load_checkpoint(path, tiny_space)
    assert store.epoch == tiny_store.epoch
    assert rng is not None


def test_reset_moves_the_reference_closer(small_data, quick_train):
    space = SupernetGraph.from_dict(
        {
            "schema": "absnas.space/1.0",
            "width": 4,
            "nodes": ["a", "b"],
            "edges": [{"src": "a", "dst": "b", "operators": ["linear"]}],
        }
    )
    store = init_supernet(space, InitPolicy.kaiming_normal, 0, input_dim=2, num_classes=4)
    rng = np.random.default_rng(0)
    train_stage(store, space, small_data.train, quick_train, 3, rng)
    reset_base_weights(store)
    train_stage(store, space, small_data.train, quick_train, 1, rng)
    child = ChildModel(space, (0,))
    from_base = angle_of_child(child, store, Reference.base)
    from_init = angle_of_child(child, store, Reference.init)
    assert 0.0 < from_base < from_init


def test_supernet_with_one_child_trains_it_standalone(tiny_space, small_data, quick_train):
    space = tiny_space.restrict([[0], [0]])
    child = ChildModel(space, (0, 0))
    standalone = train_standalone(child, small_data, quick_train, seed=7)

    rng = np.random.default_rng(7)
    store = init_supernet(
        space, quick_train.init_policy, int(rng.integers(2**32)), input_dim=2, num_classes=small_data.train.num_classes
    )
    # No child passed in: every batch samples the space's only child.
    train_stage(store, space, small_data.train, quick_train, quick_train.standalone_epochs, rng)
    for name, value in current_values(standalone.store).items():
        np.testing.assert_array_equal(store.weights.params()[name].value, value)
    assert eval_child_accuracy(child, store, small_data, with_rebn=False) == standalone.accuracy

import numpy as np
import pytest

from fairnas.data import TRAIN, VAL, synthetic
from fairnas.space import sample, space
from fairnas.zoo import (
    DivergedError,
    ModelState,
    TrainSettings,
    adamw_step,
    build,
    cross_entropy,
    dataset_loss,
    forward,
    gradients,
    parameter_count,
    predict,
    train_epochs,
)
from fairnas.zoo.layers import Context
from fairnas.zoo.training import _batches
from oracles import finite_difference_report

SMALLEST = {
    "MLP": dict(depth=1, base_width=16, first_layer_multiplier=0.25, last_layer_multiplier=0.25),
    "ResNet": dict(n_blocks=1, main_width=16, hidden_expansion=0.5, normalization="batchnorm"),
    "ResNet-LN": dict(n_blocks=1, main_width=16, hidden_expansion=0.5, normalization="layernorm"),
}


def config(family, **values):
    return space(family).default().replace(**values)


@pytest.fixture(scope="module")
def fixture_data():
    return synthetic(400, 0.3, seed=0)


def test_mlp_parameter_count_by_hand():
    c = config("MLP", depth=2, base_width=16, first_layer_multiplier=1.0, last_layer_multiplier=1.0)
    w = 9
    expected = w * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2
    assert parameter_count(c, w) == expected
    assert build(c, w, 0).n_parameters() == expected


@pytest.mark.parametrize("family", ["MLP", "ResNet", "FTTransformer"])
def test_parameter_count_matches_allocation_for_samples(family):
    rng = np.random.default_rng(0)
    for _ in range(5):
        c = sample(space(family), rng)
        if family != "FTTransformer" and max(c.get("base_width", 0), c.get("main_width", 0)) > 256:
            continue
        blocks = [(0, 2), (2, 3), (3, 6)]
        m = build(c, 6, 1, blocks=blocks)
        assert m.n_parameters() == parameter_count(c, 6, n_features=3)


def test_build_is_deterministic():
    c = config("ResNet", main_width=32)
    a, b = build(c, 5, 7), build(c, 5, 7)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert a.epoch_counter == 0


def test_ft_head_split_and_logit_shape():
    c = config("FTTransformer", token_dim=64, n_heads=8, n_blocks=1)
    m = build(c, 5, 0)
    assert m.params["blocks.0.attention.W_q"].shape == (64, 64)
    logits = forward(m, np.random.default_rng(0).normal(size=(4, 5)))
    assert logits.shape == (4, 2)
    attention = [layer for layer in m.network.walk() if type(layer).__name__ == "SelfAttention"][0]
    assert attention.head_dim == 8


def test_zero_parameter_mlp_is_uninformative():
    m = build(config("MLP", depth=3), 4, 0)
    for v in m.params.values():
        v[...] = 0
    logits = forward(m, np.ones((3, 4)))
    assert np.all(logits == 0)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert np.all(p == 0.5)


def test_resnet_zero_branch_is_identity():
    m = build(config("ResNet", n_blocks=2, main_width=16), 4, 0)
    for k, v in m.params.items():
        if ".linear2." in k:
            v[...] = 0
    x = np.random.default_rng(1).normal(size=(6, 16))
    block = m.network.layers[1]
    ctx = Context(train=True, rng=np.random.default_rng(0), buffers=m.buffers)
    assert np.array_equal(block.forward(m.params, x, ctx), x)


def test_eval_forward_deterministic_and_train_dropout_random():
    m = build(config("MLP", dropout=0.5), 3, 0)
    x = np.random.default_rng(0).normal(size=(20, 3))
    assert np.array_equal(forward(m, x), forward(m, x))
    a = forward(m, x, train=True, rng=np.random.default_rng(1))
    b = forward(m, x, train=True, rng=np.random.default_rng(2))
    assert not np.array_equal(a, b)


def test_forward_rejects_bad_batches():
    m = build(config("MLP"), 3, 0)
    with pytest.raises(ValueError, match="shape"):
        forward(m, np.zeros((2, 4)))
    with pytest.raises(ValueError, match="non-finite"):
        forward(m, np.array([[0.0, np.nan, 1.0]]))


@pytest.mark.parametrize("name", list(SMALLEST))
def test_gradients_match_finite_differences(name):
    family = name.split("-")[0]
    c = config(family, **SMALLEST[name])
    m = build(c, 3, 0)
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(8, 3)), rng.integers(0, 2, 8)

    def loss_fn(params):
        m.params = params
        return gradients(m, x, y, seed=3)

    worst = finite_difference_report(loss_fn, m.params)
    assert max(worst.values()) <= 1e-6, worst


def test_duplicated_rows_give_identical_gradients():
    m = build(config("ResNet", **SMALLEST["ResNet-LN"], dropout=0.0), 3, 0)
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(5, 3)), rng.integers(0, 2, 5)
    _, g1 = gradients(m, x, y)
    _, g2 = gradients(m, np.vstack([x, x]), np.r_[y, y])
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-12, atol=1e-15)


def test_output_bias_gradient_closed_form():
    m = build(config("MLP", depth=2, dropout=0.0), 3, 0)
    m.params["head.weight"][...] = 0
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(7, 3)), rng.integers(0, 2, 7)
    _, g = gradients(m, x, y)
    b = m.params["head.bias"]
    softmax = np.exp(b) / np.exp(b).sum()
    expected = (softmax[None, :] - np.eye(2)[y]).mean(axis=0)
    np.testing.assert_allclose(g["head.bias"], expected, rtol=1e-12)


def test_unit_weights_match_unweighted_loss():
    logits = np.random.default_rng(0).normal(size=(9, 2))
    y = np.arange(9) % 2
    a, da = cross_entropy(logits, y)
    b, db = cross_entropy(logits, y, np.ones(9))
    assert a == b and np.array_equal(da, db)


@pytest.mark.parametrize("family", ["MLP", "ResNet", "FTTransformer"])
def test_resume_is_bit_exact(family, fixture_data):
    c = config(family, **({"n_blocks": 1, "token_dim": 64, "n_heads": 2} if family == "FTTransformer" else {}))
    c = c.replace(batch_size=64)
    settings = TrainSettings.from_config(c, seed=4)
    straight = build(c, fixture_data.width, 1)
    train_epochs(straight, fixture_data, settings, 4)
    split = build(c, fixture_data.width, 1)
    train_epochs(split, fixture_data, settings, 1)
    train_epochs(split, fixture_data, settings, 3)
    assert split.epoch_counter == straight.epoch_counter == 4
    for k in straight.params:
        assert split.params[k].tobytes() == straight.params[k].tobytes()


def test_checkpoint_round_trip_then_resume(tmp_path, fixture_data):
    c = config("ResNet", n_blocks=1, main_width=32, batch_size=64)
    settings = TrainSettings.from_config(c, seed=0)
    a = build(c, fixture_data.width, 0)
    train_epochs(a, fixture_data, settings, 2)
    a.save(tmp_path / "m.npz")
    b = ModelState.load(tmp_path / "m.npz")
    assert b.step == a.step and b.epoch_counter == 2
    train_epochs(a, fixture_data, settings, 1)
    train_epochs(b, fixture_data, settings, 1)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    for k in a.buffers:
        assert a.buffers[k].tobytes() == b.buffers[k].tobytes()


def test_training_fits_separable_fixture():
    ds = synthetic(1000, 0.0, seed=3)
    c = config("MLP", depth=2, base_width=64)
    m = build(c, ds.width, 0)
    train_epochs(m, ds, TrainSettings.from_config(c, seed=0), 10)
    x, y, _, _ = ds.part(VAL)
    assert np.mean(predict(m, x) == y) >= 0.95


def test_zero_learning_rate_only_decays():
    m = build(config("MLP"), 3, 0)
    start = {k: v.copy() for k, v in m.params.items()}
    rng = np.random.default_rng(0)
    lr, wd = 0.0, 1e-3
    for _ in range(5):
        grads = {k: rng.normal(size=v.shape) for k, v in m.params.items()}
        adamw_step(m, grads, lr, wd)
    for k in start:
        assert np.array_equal(m.params[k], start[k])


def test_zero_gradient_decays_geometrically():
    m = build(config("MLP"), 3, 0)
    start = {k: v.copy() for k, v in m.params.items()}
    lr, wd, steps = 1e-2, 1e-1, 7
    for _ in range(steps):
        adamw_step(m, {k: np.zeros_like(v) for k, v in m.params.items()}, lr, wd)
    for k in start:
        np.testing.assert_allclose(m.params[k], start[k] * (1 - lr * wd) ** steps, rtol=1e-14)


def test_training_loss_mostly_non_increasing():
    ds = synthetic(300, 0.2, seed=0)
    good = 0
    for seed in range(20):
        c = config("MLP", depth=2, base_width=32, learning_rate=1e-3, dropout=0.0, batch_size=64)
        m = build(c, ds.width, seed)
        settings = TrainSettings.from_config(c, seed=seed)
        losses = [dataset_loss(m, ds, TRAIN)]
        for _ in range(5):
            train_epochs(m, ds, settings, 1)
            losses.append(dataset_loss(m, ds, TRAIN))
        good += all(b <= a for a, b in zip(losses, losses[1:]))
    assert good >= 18


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(fixture_data):
    c = config("MLP", learning_rate=1e-3)
    m = build(c, fixture_data.width, 0)
    m.params["head.bias"][...] = np.inf
    with pytest.raises(DivergedError):
        train_epochs(m, fixture_data, TrainSettings.from_config(c), 1)


def test_epoch_limits_and_settings_validation(fixture_data):
    c = config("MLP")
    m = build(c, fixture_data.width, 0)
    with pytest.raises(ValueError):
        train_epochs(m, fixture_data, TrainSettings.from_config(c, max_epochs=2), 3)
    with pytest.raises(ValueError):
        TrainSettings.from_config(c, max_epochs=11)
    with pytest.raises(ValueError):
        TrainSettings.from_config(c, sample_weights=np.array([1.0, 0.0]))


def test_last_single_row_batch_is_folded():
    sizes = [len(b) for b in _batches(129, 64, np.random.default_rng(0))]
    assert sizes == [64, 65]
    assert sorted(np.concatenate(_batches(10, 3, np.random.default_rng(0)))) == list(range(10))


def test_float32_model_trains_in_float32(fixture_data):
    c = config("ResNet", n_blocks=1, main_width=16)
    m = build(c, fixture_data.width, 0, dtype=np.float32)
    train_epochs(m, fixture_data, TrainSettings.from_config(c), 1)
    assert all(v.dtype == np.float32 for v in m.params.values())
    assert all(v.dtype == np.float32 for v in m.moments.values())

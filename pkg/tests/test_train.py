import math

import numpy as np
import pytest

from conftest import class_pattern_dataset
from oracles import scalar_adam
from signcnn.data import Dataset
from signcnn.gradcheck import numerical_gradient, relative_error
from signcnn.layers import softmax
from signcnn.model import build_model
from signcnn.train import (
    Adam,
    EarlyStopping,
    LabelError,
    NumericError,
    TrainConfig,
    sparse_ce_from_logits,
    sparse_ce_loss,
    split_train_val,
    train,
)

# values from tests/oracles.py::scalar_adam
ADAM_ONE_STEP = 0.9990000001999999  # p=1.0, g=0.5
ADAM_THREE_STEPS = 0.9981099542362167  # p=1.0, g=0.5, -0.2, 0.3


# ----------------------------------------------------------------------
# loss


def test_loss_perfect_prediction():
    p = np.eye(24)[[3, 7]]
    loss, _ = sparse_ce_loss(p, [3, 7])
    assert loss == 0.0


def test_loss_uniform():
    loss, grad = sparse_ce_loss(np.full((4, 24), 1 / 24), [0, 5, 9, 23])
    assert loss == pytest.approx(math.log(24), rel=1e-12)
    assert loss == pytest.approx(3.17805, abs=5e-6)
    assert grad.shape == (4, 24)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 24))
    y = rng.integers(0, 24, 5)
    loss, grad = sparse_ce_from_logits(z, y)
    num = numerical_gradient(lambda: sparse_ce_from_logits(z, y)[0], z)
    assert relative_error(grad, num) < 1e-6
    # the probability-based contract gives the same values
    loss_p, grad_p = sparse_ce_loss(softmax(z), y)
    assert loss_p == pytest.approx(loss, rel=1e-12)
    np.testing.assert_allclose(grad_p, grad, rtol=1e-12, atol=1e-15)


def test_loss_label_out_of_range_names_index():
    with pytest.raises(LabelError, match="label 24 at index 2"):
        sparse_ce_loss(np.full((3, 24), 1 / 24), [0, 1, 24])
    with pytest.raises(LabelError, match="label -1 at index 0"):
        sparse_ce_from_logits(np.zeros((1, 24)), [-1])


# ----------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_from_fresh_state():
    p = np.array([1.0, -2.0])
    opt = Adam()
    opt.step([p], [np.zeros(2)])
    np.testing.assert_array_equal(p, [1.0, -2.0])
    assert opt.t == 1


def test_adam_scalar_reference_one_step():
    p = np.array([1.0])
    Adam().step([p], [np.array([0.5])])
    assert p[0] == pytest.approx(ADAM_ONE_STEP, rel=0, abs=1e-15)
    assert scalar_adam(1.0, [0.5]) == ADAM_ONE_STEP


def test_adam_scalar_reference_three_steps():
    p = np.array([1.0])
    opt = Adam()
    for g in (0.5, -0.2, 0.3):
        opt.step([p], [np.array([g])])
    assert p[0] == pytest.approx(ADAM_THREE_STEPS, rel=0, abs=1e-15)
    assert opt.t == 3
    assert (opt.v[0] >= 0).all()


def test_adam_constant_gradient_step_approaches_lr():
    p = np.array([0.0])
    opt = Adam()
    g = np.array([0.5])
    for _ in range(10_000):
        before = p[0]
        opt.step([p], [g])
    assert abs(before - p[0]) == pytest.approx(opt.lr, rel=0.01)
    assert p[0] == pytest.approx(scalar_adam(0.0, [0.5] * 10_000), rel=1e-9)


@pytest.mark.parametrize("scale", [1e-4, 1.0, 1e3])
def test_adam_first_step_is_sign(scale):
    rng = np.random.default_rng(0)
    g = rng.normal(size=20) * scale
    p = np.zeros(20)
    Adam().step([p], [g])
    np.testing.assert_array_equal(np.sign(p), -np.sign(g))
    if scale >= 1:
        np.testing.assert_allclose(np.abs(p), 0.001, rtol=1e-3)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step([np.zeros(3)], [np.zeros(4)])


# ----------------------------------------------------------------------
# split


def fake_dataset(n):
    return Dataset(np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1), np.zeros(n, np.int64))


def test_split_sign_mnist_sizes():
    tr, va = split_train_val(fake_dataset(27455), 0.2, seed=0)
    assert (len(tr), len(va)) == (21964, 5491)


def test_split_disjoint_exhaustive():
    ds = fake_dataset(10)
    tr, va = split_train_val(ds, 0.5, seed=3)
    assert len(tr) == len(va) == 5
    ids = np.concatenate([tr.images.ravel(), va.images.ravel()])
    assert sorted(ids) == list(range(10))


def test_split_deterministic():
    a = split_train_val(fake_dataset(100), 0.2, seed=9)
    b = split_train_val(fake_dataset(100), 0.2, seed=9)
    c = split_train_val(fake_dataset(100), 0.2, seed=10)
    np.testing.assert_array_equal(a[1].images, b[1].images)
    assert not np.array_equal(a[1].images, c[1].images)


def test_split_errors():
    with pytest.raises(ValueError):
        split_train_val(fake_dataset(1), 0.2)
    with pytest.raises(ValueError):
        split_train_val(fake_dataset(10), 0.0)


# ----------------------------------------------------------------------
# early stopping


def run_stopper(losses, patience=5):
    es = EarlyStopping(patience)
    for i, v in enumerate(losses, start=1):
        if es.update(v):
            return i, es.best_epoch
    return None, es.best_epoch


def test_early_stop_example():
    assert run_stopper([0.5, 0.4, 0.45, 0.44, 0.43, 0.42, 0.41]) == (7, 2)


def test_early_stop_never_on_decreasing():
    assert run_stopper([1.0 / k for k in range(1, 31)]) == (None, 30)


def test_early_stop_plateau_is_not_improvement():
    assert run_stopper([0.3] * 6) == (6, 1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(validation_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    d = TrainConfig()
    assert (d.max_epochs, d.batch_size, d.validation_fraction, d.patience) == (30, 64, 0.2, 5)


# ----------------------------------------------------------------------
# training loop

TOY = TrainConfig(max_epochs=5, batch_size=4, seed=0)


def test_zero_epochs_returns_untrained():
    m = build_model(seed=1)
    before = m.get_weights()
    m2, hist = train(m, class_pattern_dataset(48), TrainConfig(max_epochs=0))
    assert len(hist) == 0 and hist.best_epoch is None
    for a, b in zip(before, m2.get_weights()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", [0, 1])
def test_toy_reaches_full_train_accuracy(seed):
    ds = class_pattern_dataset(200)
    cfg = TrainConfig(max_epochs=5, batch_size=4, seed=seed)
    m, hist = train(build_model(seed=seed), ds, cfg, val_set=ds)
    assert not m.training
    # validation set == training set, so val_accuracy is inference-mode train accuracy
    assert max(hist.column("val_accuracy")) == 1.0
    losses = hist.column("val_loss")
    increases = [b / a - 1 for a, b in zip(losses, losses[1:]) if b > a]
    assert len(increases) <= 1 and all(r < 0.05 for r in increases)


def test_epoch_is_bit_reproducible():
    ds = class_pattern_dataset(96, noise=0.1)
    cfg = TrainConfig(max_epochs=1, batch_size=16, seed=4)
    a, ha = train(build_model(seed=4), ds, cfg)
    b, hb = train(build_model(seed=4), ds, cfg)
    assert ha.records == hb.records
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.tobytes() == pb.tobytes()


def test_restores_best_epoch_weights():
    ds = class_pattern_dataset(96, noise=0.2)
    val = class_pattern_dataset(48, seed=5, noise=0.2)  # different patterns: val loss will rise
    snapshots = {}
    m = build_model(seed=2)

    def grab(record):
        snapshots[record.epoch] = m.get_weights()

    cfg = TrainConfig(max_epochs=12, batch_size=8, patience=2, seed=2)
    m, hist = train(m, ds, cfg, val_set=val, on_epoch=grab)
    assert hist.best_epoch == int(np.argmin(hist.column("val_loss"))) + 1
    assert hist.best_epoch < len(hist)  # a later epoch was worse, so restore matters
    for a, b in zip(snapshots[hist.best_epoch], m.get_weights()):
        assert a.tobytes() == b.tobytes()


def test_nonfinite_loss_aborts():
    ds = class_pattern_dataset(32)
    m = build_model(seed=0)
    m.layers[-1].params["weights"][:] = np.nan
    with pytest.raises(NumericError, match="epoch 1, batch 1"):
        train(m, ds, TrainConfig(max_epochs=2, batch_size=8), val_set=ds)


def test_optimizer_attached_after_training():
    from signcnn.model import count_parameters

    ds = class_pattern_dataset(32)
    m, _ = train(build_model(), ds, TrainConfig(max_epochs=1, batch_size=16), val_set=ds)
    assert count_parameters(m, include_optimizer_state=True) == 1182024

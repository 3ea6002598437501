import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafformer import autodiff as ad
from trafformer import models, training
from trafformer.data import Normalizer
from trafformer.errors import ContractError, DataError, TrainingError
from trafformer.trafformer import TrafFormerConfig

TINY = TrafFormerConfig(n_sensors=2, d_model=8, n_heads=2, ff_width=8)


# ---------------------------------------------------------------------------
# losses


def test_mae_loss_example():
    loss = training.mae_loss(ad.Tensor([[1.0, 2.0, 3.0]]), [[1.5, 2.0, 9.0]], [[True, True, False]])
    assert loss.item() == pytest.approx(0.25)


def test_mse_loss_example():
    loss = training.mse_loss(ad.Tensor([[1.0, 2.0, 3.0]]), [[2.0, 4.0, 9.0]], [[True, True, False]])
    assert loss.item() == pytest.approx(2.5)


def test_masked_entries_get_no_gradient():
    y_hat = ad.Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
    training.mae_loss(y_hat, [[0.0, 5.0, 0.0]], [[True, True, False]]).backward()
    np.testing.assert_array_equal(y_hat.grad, [[0.5, -0.5, 0.0]])


def test_loss_errors():
    with pytest.raises(DataError):
        training.mae_loss(ad.Tensor([1.0]), [1.0], [False])
    with pytest.raises(ContractError):
        training.mae_loss(ad.Tensor([1.0, 2.0]), [1.0], [True])


# ---------------------------------------------------------------------------
# schedule


@pytest.mark.parametrize("it, lr", [(0, 1.0), (50, 2.0), (100, 3.0), (200, 1.0), (300, 2.0), (400, 1.0), (500, 1.5)])
def test_triangular2_examples(it, lr):
    assert training.triangular2_lr(it, 1.0, 3.0, 100) == pytest.approx(lr, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 500))
def test_triangular2_invariants(it, step):
    lr = training.triangular2_lr(it, 1e-3, 6e-3, step)
    assert 1e-3 <= lr <= 6e-3 + 1e-15
    cycle = it // (2 * step)
    peak = 1e-3 + math.ldexp(5e-3, -cycle)
    assert lr <= peak + 1e-15
    assert training.triangular2_lr(2 * step * cycle, 1e-3, 6e-3, step) == pytest.approx(1e-3)


def test_triangular2_long_runs_decay_to_base():
    assert training.triangular2_lr(10**6 + 1, 1.0, 3.0, 1) == 1.0


def test_triangular2_errors():
    with pytest.raises(ContractError):
        training.triangular2_lr(-1, 1.0, 2.0, 10)
    with pytest.raises(ContractError):
        training.triangular2_lr(0, 1.0, 2.0, 0)


# ---------------------------------------------------------------------------
# optimizers


def _param(value, grad):
    p = ad.Tensor(np.array([value]), requires_grad=True)
    p.grad = np.array([grad])
    return p


def test_sgd_plain_step():
    p = _param(1.0, 2.0)
    training.sgd_momentum_step([p], 0.1, 0.0)
    assert p.data[0] == pytest.approx(0.8) and p.grad is None


def test_sgd_momentum_two_steps():
    p = _param(0.0, 1.0)
    v = training.sgd_momentum_step([p], 1.0, 0.9)
    assert p.data[0] == pytest.approx(-1.0)
    p.grad = np.array([1.0])
    training.sgd_momentum_step([p], 1.0, 0.9, v)
    assert p.data[0] == pytest.approx(-2.9)


def test_sgd_zero_lr_leaves_params():
    p = _param(3.0, 7.0)
    training.sgd_momentum_step([p], 0.0, 0.9)
    assert p.data[0] == 3.0


def test_missing_grad_is_contract_error():
    p = ad.Tensor(np.ones(2), requires_grad=True, name="w")
    with pytest.raises(ContractError, match="w"):
        training.sgd_momentum_step([p], 0.1, 0.9)
    with pytest.raises(ContractError):
        training.Adam([p]).step(0.1)


def test_adam_first_step_moves_by_lr():
    p = _param(1.0, 123.0)
    training.Adam([p]).step(0.01)
    assert p.data[0] == pytest.approx(0.99, abs=1e-9)


def test_clip_grad_norm():
    a, b = _param(0.0, 3.0), _param(0.0, 4.0)
    assert training.clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)


def test_train_config_validation():
    with pytest.raises(ContractError):
        training.TrainConfig(base_lr=1e-2, max_lr=1e-3)
    with pytest.raises(ContractError):
        training.TrainConfig(patience=0)
    with pytest.raises(ContractError):
        training.TrainConfig(loss="huber")


# ---------------------------------------------------------------------------
# training loop


@pytest.fixture(scope="module")
def few(small_split):
    _, norm, windows = small_split
    return windows["train"][:48], windows["val"][:16], norm


def test_early_stopping_restores_best_epoch(few):
    train_s, val_s, norm = few
    scripted = [5.0, 4.0, 4.1, 4.2, 1.0]
    states = {}

    def validate(params, epoch):
        states[epoch] = params.state()
        return scripted[epoch - 1]

    params, hist = training.train(
        TINY, train_s, val_s, training.TrainConfig(max_epochs=10, patience=2, batch_size=16), norm, validate=validate
    )
    assert hist.epochs == 4 and hist.best_epoch == 2
    assert hist.stop_reason == "early_stopping"
    for name, value in states[2].items():
        np.testing.assert_array_equal(params[name].data, value)
    assert not np.array_equal(params["head.w"].data, states[4]["head.w"])


def test_max_epochs_one(few):
    train_s, val_s, norm = few
    _, hist = training.train(TINY, train_s, val_s, training.TrainConfig(max_epochs=1, batch_size=16), norm)
    assert hist.epochs == 1 and hist.best_epoch == 1 and hist.stop_reason == "max_epochs"
    assert len(hist.lr) == len(hist.loss) == 3


def test_target_train_loss_stops_early(few):
    train_s, val_s, norm = few
    cfg = training.TrainConfig(max_epochs=5, batch_size=16, target_train_loss=1e9)
    _, hist = training.train(TINY, train_s, val_s, cfg, norm)
    assert hist.epochs == 1 and hist.stop_reason == "target_reached"


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_raises_training_error(few):
    train_s, val_s, _ = few
    tiny_std = Normalizer(0.0, 1e-160)
    cfg = training.TrainConfig(max_epochs=2, batch_size=16, loss="mse")
    with pytest.raises(TrainingError) as info:
        training.train(TINY, train_s, val_s, cfg, tiny_std)
    assert info.value.iteration == 0


def test_training_loss_decreases(few):
    train_s, val_s, norm = few
    cfg = training.TrainConfig(max_epochs=3, patience=3, batch_size=8, optimizer="adam", base_lr=1e-3, max_lr=1e-2)
    _, hist = training.train(TINY, train_s, val_s, cfg, norm)
    assert hist.train_loss[0] > hist.train_loss[1] > hist.train_loss[2]


def test_training_is_deterministic(few):
    train_s, val_s, norm = few
    cfg = training.TrainConfig(max_epochs=2, batch_size=16, seed=5)
    a, ha = training.train(TINY, train_s, val_s, cfg, norm)
    b, hb = training.train(TINY, train_s, val_s, cfg, norm)
    assert ha.to_json() == hb.to_json()
    for name in a.tensors:
        np.testing.assert_array_equal(a[name].data, b[name].data)


def test_history_document(few):
    train_s, val_s, norm = few
    _, hist = training.train(TINY, train_s, val_s, training.TrainConfig(max_epochs=2, batch_size=16), norm)
    doc = json.loads(hist.to_json())
    assert set(doc) == {"iterations", "epochs", "best_epoch", "stop_reason"}
    assert [e["epoch"] for e in doc["epochs"]] == [1, 2]
    assert hist.wall_time > 0


def test_untrainable_model_rejected(small_series, small_split):
    segs, norm, windows = small_split
    from trafformer.baselines import fit_historical_average

    params = fit_historical_average(small_series, segs["train"], norm)
    with pytest.raises(ContractError):
        training.train(params.config, windows["train"][:4], windows["val"][:4], training.TrainConfig(), norm,
                       init_params=params)


def test_empty_samples_rejected(few):
    _, val_s, norm = few
    with pytest.raises(DataError):
        training.train(TINY, [], val_s, training.TrainConfig(), norm)

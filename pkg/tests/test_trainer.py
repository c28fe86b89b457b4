import math

import numpy as np
import pytest

from sedmil import numerics as nx
from sedmil.data import Dataset, SyntheticSpec, generate
from sedmil.encoder import EncoderConfig
from sedmil.numerics import Graph, Tensor, grad_check
from sedmil.trainer import (
    Adam,
    EarlyStopping,
    TrainConfig,
    bce_loss,
    build_model,
    clip_macro_f1,
    history_csv,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
)


@pytest.fixture(scope="module")
def tiny():
    spec = SyntheticSpec(
        ["a", "b"],
        {"train": {"a": 12, "b": 12, "a;b": 6}, "validation": {"a": 4, "b": 4, "a;b": 2}},
        d=6,
        n_frames=40,
        durations={"a": (0.2, 0.05), "b": (0.3, 0.1)},
        seed=5,
    )
    return generate(spec)


def quick(**kw):
    base = dict(batch_size=8, max_epochs=4, encoder=EncoderConfig(kind="identity", n_bands=6))
    base.update(kw)
    return TrainConfig(**base)


def test_bce_examples():
    assert float(bce_loss(Tensor(np.array([[1.0, 0.0]])), [[1, 0]]).data) < 1e-6
    assert float(bce_loss(Tensor(np.full((2, 3), 0.5)), np.ones((2, 3))).data) == pytest.approx(math.log(2), abs=1e-12)
    loss = float(bce_loss(Tensor(np.array([[0.9, 0.2]])), [[1, 0]]).data)
    assert loss == pytest.approx((-math.log(0.9) - math.log(0.8)) / 2, abs=1e-12)
    assert loss == pytest.approx(0.164252, abs=5e-7)


def test_adam_examples():
    p = {"w": Tensor(np.array([0.5]))}
    Adam(0.001).step(p, {"w": np.zeros(1)})
    assert p["w"].data[0] == 0.5

    p = {"w": Tensor(np.array([0.0]))}
    Adam(0.001).step(p, {"w": np.ones(1)})
    assert p["w"].data[0] == pytest.approx(-0.001, rel=1e-6)

    p = {"w": Tensor(np.array([0.0]))}
    opt = Adam(0.01)
    prev = 0.0
    for _ in range(500):
        opt.step(p, {"w": np.array([3.0])})
        step, prev = p["w"].data[0] - prev, p["w"].data[0]
    assert abs(step) == pytest.approx(0.01, rel=1e-3)


def test_lr_schedule():
    cfg = quick(lr=1.0)
    assert [lr_at(cfg, e) for e in (1, 10, 11, 20, 21)] == pytest.approx([1, 1, 0.8, 0.8, 0.64])


def test_early_stopping_rule():
    stop = EarlyStopping(3)
    for epoch, score in enumerate([0.1, 0.2, 0.2, 0.15, 0.2], start=1):
        stop.update(epoch, score)
    assert stop.best_epoch == 2 and stop.should_stop


def test_runs_full_length_while_improving(tiny):
    result = train(quick(max_epochs=30, patience=10), tiny["train"], tiny["validation"], evaluate=lambda m, e: e / 100)
    assert len(result.history) == 30
    assert result.best_epoch == 30


def test_constant_score_stops_after_patience_plus_one(tiny):
    result = train(quick(max_epochs=50, patience=10), tiny["train"], tiny["validation"], evaluate=lambda m, e: 0.5)
    assert len(result.history) == 11
    assert result.best_epoch == 1


def test_returned_snapshot_is_the_best(tiny):
    result = train(quick(max_epochs=12, patience=3), tiny["train"], tiny["validation"])
    best = max(h.val_macro_f1 for h in result.history)
    assert result.best_score == best
    assert clip_macro_f1(result.model, tiny["validation"]) == best


def test_training_is_deterministic(tiny):
    cfg = quick(pooling="eatp", sds=True, df="dfw", encoder=EncoderConfig(kind="mlp", n_bands=6, hidden=(5,)))
    a = train(cfg, tiny["train"], tiny["validation"])
    b = train(cfg, tiny["train"], tiny["validation"])
    assert history_csv(a.history) == history_csv(b.history)
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k].data, b.model.params[k].data)


def test_loss_decreases_on_training_set(tiny):
    result = train(quick(max_epochs=8, patience=8), tiny["train"], tiny["validation"])
    assert result.history[-1].train_loss < result.history[0].train_loss


@pytest.mark.parametrize("kind", ["mlp", "cnn"])
def test_checkpoint_round_trip(tiny, tmp_path, kind):
    enc = EncoderConfig(kind=kind, n_bands=6, hidden=(4,), channels=(2,), freq_pool=(3,))
    result = train(quick(max_epochs=2, df="df1", encoder=enc), tiny["train"], tiny["validation"])
    save_checkpoint(tmp_path / "ck.txt", result)
    back = load_checkpoint(tmp_path / "ck.txt")
    x = tiny["validation"].features()
    a, b = result.model.forward(x), back.model.forward(x)
    np.testing.assert_array_equal(a.clip_probs.data, b.clip_probs.data)
    np.testing.assert_array_equal(a.frame_probs.data, b.frame_probs.data)
    assert back.model.alloc == result.model.alloc
    save_checkpoint(tmp_path / "ck2.txt", back)
    assert (tmp_path / "ck.txt").read_bytes() == (tmp_path / "ck2.txt").read_bytes()


def test_bad_checkpoint(tmp_path):
    (tmp_path / "x.txt").write_text("hello\n")
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "x.txt")


def test_config_validation(tiny):
    with pytest.raises(ValueError, match="SDS requires ATP"):
        TrainConfig(pooling="egmp", sds=True)
    with pytest.raises(ValueError, match="eatp"):
        TrainConfig(pooling="igap", df="df1")
    with pytest.raises(ValueError, match="empty"):
        train(quick(), Dataset(["a", "b"], [], 0.02), tiny["validation"])
    assert TrainConfig.from_dict(quick(df="dfw", m=0.25).to_dict()) == quick(df="dfw", m=0.25)


def test_zero_count_class_propagates(tiny):
    only_a = Dataset(["a", "b"], [c for c in tiny["train"].clips if c.labels == {"a"}] + [c for c in tiny["train"].clips if len(c.labels) == 2], 0.02)
    with pytest.raises(ValueError, match="m > 0"):
        build_model(quick(df="df1"), only_a)


@pytest.mark.parametrize("seed", range(3))
def test_loss_gradient_passes_check(tiny, seed):
    cfg = quick(pooling="egsp", encoder=EncoderConfig(kind="mlp", n_bands=6, hidden=(4,), activation="tanh"), seed=seed)
    model = build_model(cfg, tiny["train"])
    idx = np.random.default_rng(seed).choice(len(tiny["train"]), 3, replace=False)
    x, y = tiny["train"].features(idx)[:, :8], tiny["train"].targets(idx)
    g = Graph(lambda p, x: bce_loss(model.forward(x).clip_probs, y), model.params)
    assert grad_check(g, x).passed

import csv

import numpy as np
import pytest

from dabnet import data as D
from dabnet import netbuild as NB
from dabnet.layers import ALPHA_MIN, SIGMA_MIN
from dabnet.trainer import DivergenceError, TrainConfig, evaluate, project_params, train

from conftest import make_rng


def blobs(n=64, seed=0, size=12):
    """Two easily separable classes: bright top half vs bright bottom half."""
    rng = make_rng(seed)
    labels = np.arange(n) % 2
    x = rng.uniform(0, 0.2, size=(n, 1, size, size))
    for i, y in enumerate(labels):
        if y:
            x[i, 0, size // 2:] += 0.7
        else:
            x[i, 0, :size // 2] += 0.7
    return D.Dataset(x, labels.astype(np.int64), num_classes=2)


def small_graph(aa=True):
    g = NB.build_toy_cnn((1, 12, 12), 2, widths=(4, 6))
    return NB.rewrite_antialias(g) if aa else g


def test_lr_schedule():
    cfg = TrainConfig(epochs=20)
    assert cfg.lr_at(0) == 0.1 and cfg.lr_at(7) == 0.1
    assert cfg.lr_at(8) == pytest.approx(0.02)
    assert cfg.lr_at(14) == pytest.approx(0.004)
    assert cfg.lr_at(19) == pytest.approx(0.0008)


@pytest.mark.parametrize("kwargs", [
    {"lr": -0.1}, {"epochs": -1}, {"batch_size": 0},
    {"lr_drop_epochs": [5, 3]}, {"epochs": 4, "lr_drop_epochs": [8]},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_zero_epochs_returns_initial_model(tmp_path):
    m = NB.make_model(small_graph(), 0)
    before = {k: v.copy() for k, v in m.params.items()}
    log = train(m, blobs(), TrainConfig(epochs=0, lr_drop_epochs=[]))
    assert len(log) == 0
    assert all(np.array_equal(before[k], m.params[k]) for k in before)
    log.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("epoch,loss")


def test_training_learns_and_logs(tmp_path):
    ds = blobs()
    m = NB.make_model(small_graph(), 0)
    cfg = TrainConfig(epochs=4, batch_size=16, lr=0.05, lr_drop_epochs=[3])
    log = train(m, ds, cfg, test_set=blobs(seed=1))
    assert len(log) == 4
    assert log.rows[-1]["loss"] < log.rows[0]["loss"]
    assert evaluate(m, blobs(seed=2)) >= 0.9
    np.testing.assert_allclose(m.input_mean, D.channel_means(ds))
    log.write_csv(tmp_path / "log.csv")
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0][:4] == ["epoch", "loss", "train_acc", "test_acc"]
    assert rows[0][4:] == ["sigma_1", "sigma_2", "alpha_1", "alpha_2"]
    assert len(rows) == 5


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=2, batch_size=16, lr=0.05, lr_drop_epochs=[])
    a, b = NB.make_model(small_graph(), 3), NB.make_model(small_graph(), 3)
    train(a, blobs(), cfg)
    train(b, blobs(), cfg)
    assert NB.checkpoint_bytes(a) == NB.checkpoint_bytes(b)


def test_sigmas_stay_monotone_after_every_step():
    seen = []

    def hook(model, step):
        s = model.sigmas()
        seen.append(s)
        assert all(a < b for a, b in zip(s, s[1:]))
        assert min(s) >= SIGMA_MIN and min(model.alphas()) >= ALPHA_MIN

    cfg = TrainConfig(epochs=3, batch_size=8, lr=0.2, lr_drop_epochs=[])
    train(NB.make_model(small_graph(), 0), blobs(), cfg, step_hook=hook)
    assert len(seen) == 24


def test_projection_clamps():
    m = NB.make_model(small_graph(), 0)
    s1, s2 = m.sigma_names()
    m.params[s1], m.params[s2] = np.asarray(2.0), np.asarray(0.01)
    m.params[m.alpha_names()[0]] = np.asarray(0.1)
    project_params(m)
    assert m.sigmas() == pytest.approx([2.0, 2.01])
    assert m.alphas()[0] == ALPHA_MIN


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    cfg = TrainConfig(epochs=1, batch_size=8, lr=1e6, lr_drop_epochs=[])
    with pytest.raises(DivergenceError):
        train(NB.make_model(small_graph(aa=False), 0), blobs(), cfg)

"""Acceptance criteria 1-12.

Each test records one PASS/FAIL line, printed in the terminal summary.
Criteria 9-11 train three seeds each of a baseline and an anti-aliased toy
CNN on MNIST from ``$DABNET_MNIST`` (default /root/data/mnist); trained
checkpoints are cached under ``$DABNET_ACCEPTANCE_CACHE`` keyed by a hash of
the model, training config and data files.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from dabnet import attacks as A
from dabnet import cli
from dabnet import data as D
from dabnet import layers as L
from dabnet import netbuild as NB
from dabnet import robustness as R
from dabnet import spectra as S
from dabnet import tensor as T
from dabnet import transforms as TF
from dabnet.gradcheck import rel_error
from dabnet.tensor import Tensor
from dabnet.trainer import TrainConfig, evaluate, train

from conftest import fd_grads, make_rng, record, tape_grads

MNIST_DIR = Path(os.environ.get("DABNET_MNIST", "/root/data/mnist"))
CACHE_DIR = Path(os.environ.get("DABNET_ACCEPTANCE_CACHE",
                                Path(__file__).resolve().parent.parent / ".acceptance_cache"))
SEEDS = (0, 1, 2)
TREND_TRAIN = TrainConfig(epochs=10, batch_size=128, lr=0.03, lr_drop_epochs=[4, 7, 9], lr_drop_factor=0.2)

# pinned tolerances
GOLDEN_ABS = 1e-9
GOLDEN_PAPER_ABS = 0.01
GRAD_REL = 1e-6
KERNEL_SUM_ABS = 1e-12
C1_ABS = 1e-12
DFT_ROUND_TRIP = 1e-10
PARSEVAL_REL = 1e-9
FAST_VS_DIRECT = 1e-9
ACCURACY_SLACK = 0.005
HF_IMAGES = 500
ATTACK_IMAGES = 500


# ---------------------------------------------------------------- criterion 1

def test_c01_aa_relu_golden_vectors():
    t0 = time.perf_counter()
    x = np.array([-9.0, 3.0, 8.9, 9.0, 10.0, 43.3, 81.0])
    y = L.aa_relu_forward(x, 9.0)
    closed = np.array([0.0, 3.0, 8.9, 9.0, 9.0 * np.sin(np.log(10.0 / 9.0)) + 9.0, 18.0, 18.0])
    err = np.abs(y - closed).max()
    dt = time.perf_counter() - t0
    ok = err <= GOLDEN_ABS and abs(y[4] - 9.95) <= GOLDEN_PAPER_ABS and dt < 1.0
    record(1, ok, f"F = {np.round(y, 4).tolist()}, max err {err:.1e}, {dt * 1e3:.1f} ms")


# ---------------------------------------------------------------- criterion 2

def _grad_cases():
    rng = make_rng(2024)
    distinct = lambda shape: rng.permutation(np.arange(np.prod(shape))).reshape(shape) * 0.01  # noqa: E731
    img = rng.uniform(size=(2, 1, 7, 7))
    labels = np.array([0, 2, 1])
    return [
        ("conv2d", lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
         [rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]),
        ("dense", T.dense, [rng.normal(size=(3, 5)), rng.normal(size=(5, 4)), rng.normal(size=4)]),
        ("dense_max", lambda x: T.dense_max(x, 2), [distinct((1, 2, 5, 5))]),
        ("subsample", lambda x: T.subsample(x, 2), [rng.normal(size=(1, 2, 6, 6))]),
        ("dab_blur", lambda x, s: L.dab_blur(x, s), [rng.normal(size=(1, 2, 6, 6)), np.array(0.9)]),
        ("aa_relu", L.aa_relu, [np.array([[-1.0, 0.7, 1.6, 2.4, 5.0, 8.0, 11.0]]), np.array(2.0)]),
        ("softmax_xent", lambda z: T.softmax_xent(z, labels), [rng.normal(size=(3, 4))]),
        ("translate_warp", lambda t: TF.translate_warp(Tensor(img), t), [np.array([[0.3, -1.6], [2.45, 0.7]])]),
    ]


def test_c02_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for name, fn, arrays in _grad_cases():
        out = fn(*[Tensor(a) for a in arrays])
        dy = make_rng(7).normal(size=out.shape)
        errs = [rel_error(g, f) for g, f in zip(tape_grads(fn, arrays, dy), fd_grads(fn, arrays, dy))]
        worst[name] = max(errs)
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < GRAD_REL and dt < 60
    detail = ", ".join(f"{k} {v:.0e}" for k, v in worst.items())
    record(2, ok, f"max rel err per op: {detail}; {dt:.1f} s")


# ---------------------------------------------------------------- criterion 3

def test_c03_kernel_invariants():
    t0 = time.perf_counter()
    failures = []
    for m in (3, 5, 7):
        prev = np.inf
        for s in [0.25 * i for i in range(1, 21)]:
            k = L.gaussian_kernel(s, m)
            c = k[m // 2, m // 2]
            if abs(k.sum() - 1) > KERNEL_SUM_ABS:
                failures.append(f"sum m={m} s={s}")
            if not all(np.array_equal(k, g) for g in (k.T, k[::-1], k[:, ::-1], np.rot90(k))):
                failures.append(f"symmetry m={m} s={s}")
            if k.argmax() != k.size // 2 or not c < prev:
                failures.append(f"centre m={m} s={s}")
            prev = c
    dt = time.perf_counter() - t0
    record(3, not failures and dt < 1.0, f"60 kernels checked, failures {failures}, {dt * 1e3:.1f} ms")


# ---------------------------------------------------------------- criterion 4

def _mnist_or_skip():
    if not (MNIST_DIR / "train-images-idx3-ubyte").exists() and \
            not (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
        pytest.skip(f"MNIST not found in {MNIST_DIR}")
    return D.load_dataset("mnist", MNIST_DIR)


def test_c04_monotone_sigma():
    rng = make_rng(4)
    idem = all(L.project_monotone(p) == p for p in
               (L.project_monotone(rng.uniform(-1, 4, size=rng.integers(1, 8)).tolist()) for _ in range(1000)))
    train_set, _ = _mnist_or_skip()
    violations = []

    def hook(model, step):
        s = model.sigmas()
        if not all(a < b for a, b in zip(s, s[1:])):
            violations.append((step, s))

    cfg = TrainConfig(epochs=1, batch_size=32, lr=0.1, lr_drop_epochs=[])
    model = NB.make_model(NB.rewrite_antialias(NB.build_toy_cnn()), 0)
    train(model, train_set.take(np.arange(200 * 32)), cfg, step_hook=hook)
    record(4, idem and not violations,
           f"idempotent on 1000 lists: {idem}; 200 steps, violations {len(violations)}, "
           f"final sigma {np.round(model.sigmas(), 4).tolist()}")


# ---------------------------------------------------------------- criterion 5

def test_c05_aa_relu_properties():
    alphas = np.concatenate([[0.5, 9.0, 50.0], make_rng(5).uniform(0.5, 50.0, size=97)])
    worst_joint = worst_max = 0.0
    bounded = monotone = True
    for a in alphas:
        up = a * np.exp(np.pi / 2)
        roll = lambda x: a * np.sin(np.log(x / a)) + a  # noqa: E731
        droll = lambda x: a * np.cos(np.log(x / a)) / x  # noqa: E731
        f = L.aa_relu_forward(np.array([a, up]), a)
        worst_joint = max(worst_joint, abs(roll(a) - a) / a, abs(droll(a) - 1), abs(roll(up) - 2 * a) / a,
                          abs(droll(up)), abs(f[0] - a) / a, abs(f[1] - 2 * a) / a)
        x = np.linspace(-a, 3 * up, 5001)
        y = L.aa_relu_forward(x, a)
        bounded &= bool(y.min() >= 0 and y.max() <= 2 * a)
        monotone &= bool(np.all(np.diff(y) >= 0))
        x_star = x[np.argmax(y >= 2 * a)]
        worst_max = max(worst_max, abs(x_star - up) / up)
    ok = worst_joint <= C1_ABS and bounded and monotone and worst_max < 1e-3
    record(5, ok, f"{len(alphas)} alphas in [0.5, 50]: joint err {worst_joint:.1e}, bounded {bounded}, "
                  f"monotone {monotone}, argmax rel offset {worst_max:.1e}, F(9 e^(pi/2)) = "
                  f"{L.aa_relu_forward(np.array([9 * np.exp(np.pi / 2)]), 9.0)[0]:.12f}")


# ---------------------------------------------------------------- criterion 6

def test_c06_spectral_suite():
    t0 = time.perf_counter()
    rng = make_rng(6)
    x = rng.normal(size=(4, 3, 32, 32))
    X = S.dft2(x)
    rt = np.abs(S.idft2(X) - x).max()
    pars = abs((x ** 2).sum() - (np.abs(X) ** 2).sum() / 1024) / (x ** 2).sum()
    fast = 0.0
    for n in (8, 64, 256):
        z = rng.normal(size=(4, n)) + 1j * rng.normal(size=(4, n))
        fast = max(fast, np.abs(S._fft_radix2(z) - S._dft_direct(z)).max())
    y = rng.normal(size=(6, 10))
    naive = np.abs(S.dft2(y) - S.naive_dft2(y)).max()
    dc = np.zeros((28, 28))
    dc[14, 14] = 1.0
    flat_ratio, dc_ratio = S.hf_ratio(np.ones((28, 28))), S.hf_ratio(dc)
    dt = time.perf_counter() - t0
    ok = (rt < DFT_ROUND_TRIP and pars < PARSEVAL_REL and fast < FAST_VS_DIRECT and naive < FAST_VS_DIRECT
          and flat_ratio == 0.75 and dc_ratio == 0.0 and dt < 10)
    record(6, ok, f"round trip {rt:.1e}, Parseval {pars:.1e}, fast vs direct {fast:.1e}, "
                  f"vs naive {naive:.1e}, hf(flat) {flat_ratio}, hf(DC) {dc_ratio}, {dt:.2f} s")


# ---------------------------------------------------------------- criterion 7

def test_c07_metric_identities():
    rng = make_rng(7)
    ds = D.Dataset(rng.uniform(size=(20, 1, 28, 28)), np.arange(20) % 10)
    models = [NB.make_model(NB.build_toy_cnn(), 0), NB.make_model(NB.rewrite_antialias(NB.build_toy_cnn()), 1),
              NB.ConstantClassifier(3)]
    zero = [R.protocol_diagonal(m, ds, force_shift=0).consistency for m in models]
    const_fp = R.flip_probability_from_predictions([[5] * 31] * 10).fp
    alt_fp = R.flip_probability_from_predictions([[0, 1] * 15 + [0]] * 10).fp
    seqs = [[2] * 31 for _ in range(10)]
    seqs[6][30] = 4
    hand = R.flip_probability_from_predictions(seqs).fp
    ok = zero == [1.0] * 3 and const_fp == 0.0 and alt_fp == 1.0 and hand == 1 / 300
    record(7, ok, f"zero-shift consistency {zero}, FP const {const_fp}, alternating {alt_fp}, "
                  f"1 flip over 10x30 pairs {hand:.6f}")


# ---------------------------------------------------------------- criterion 8

def test_c08_attack_properties():
    model = NB.make_model(NB.build_toy_cnn((1, 16, 16), 10, widths=(4, 8)), 8)
    x = make_rng(8).uniform(size=(8, 1, 16, 16))
    y = model.predict(x)
    g1, g2 = A.attack_grid_search(model, x, y), A.attack_grid_search(model, x, y)
    grid_ok = g1 == g2 and all(e.queries == 121 for e in g1)
    accs = [A.post_attack_accuracy(A.attack_worst_of_k(model, x, y, A.AttackBudget(4.0, k=k, seed=1)))
            for k in (1, 2, 5, 10, 20)]
    wk_ok = all(b <= a for a, b in zip(accs, accs[1:]))
    _, trace = A.first_order_trace(model, x, y, A.AttackBudget(2.0, steps=30, step_size=0.4))
    fo_ok = np.abs(trace).max() <= 2.0
    warp_ok = all(np.array_equal(TF.translate_warp(Tensor(x), Tensor([float(tx), float(ty)])).data,
                                 TF.integer_shift(x, dx=tx, dy=ty)) for tx, ty in A.grid_offsets(5))
    record(8, grid_ok and wk_ok and fo_ok and warp_ok,
           f"grid 121 queries deterministic {grid_ok}; worst-of-k acc {accs}; "
           f"FO max |t| {np.abs(trace).max():.3f} <= 2; integer warp exact {warp_ok}")


# ---------------------------------------------------------------- criteria 9-11

def _variant_graph(variant):
    g = NB.build_toy_cnn()
    return g if variant == "baseline" else NB.rewrite_antialias(g, m=3, af="aa_relu", blur="dab")


def _data_digest():
    h = hashlib.sha256()
    for name in sorted(os.listdir(MNIST_DIR)):
        h.update(name.encode())
        h.update((MNIST_DIR / name).read_bytes())
    return h.hexdigest()[:16]


def trained_model(variant, seed, train_set, test_set, digest):
    cfg = TrainConfig(**{**TREND_TRAIN.__dict__, "seed": seed})
    key = hashlib.sha256(json.dumps({"graph": _variant_graph(variant).to_dict(), "train": cfg.__dict__,
                                     "seed": seed, "data": digest}, sort_keys=True).encode()).hexdigest()[:20]
    path = CACHE_DIR / f"{variant}_s{seed}_{key}.ckpt"
    if path.exists():
        return NB.load_checkpoint(path)[0]
    model = NB.make_model(_variant_graph(variant), seed)
    train(model, train_set, cfg)
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    NB.save_checkpoint(model, path, seed=seed, epoch=cfg.epochs)
    return model


@pytest.fixture(scope="session")
def trend_models():
    train_set, test_set = _mnist_or_skip()
    digest = _data_digest()
    t0 = time.perf_counter()
    models = {(v, s): trained_model(v, s, train_set, test_set, digest)
              for v in ("baseline", "antialias") for s in SEEDS}
    return models, test_set, time.perf_counter() - t0


def test_c09_consistency_trend(trend_models):
    models, test_set, train_time = trend_models
    t0 = time.perf_counter()
    cons, acc = {}, {}
    for (v, s), m in models.items():
        rep = R.protocol_diagonal(m, test_set, seed=100 + s)
        cons.setdefault(v, []).append(rep.consistency)
        acc.setdefault(v, []).append(rep.clean_accuracy)
    mean = lambda d, v: float(np.mean(d[v]))  # noqa: E731
    ok = (mean(cons, "antialias") > mean(cons, "baseline")
          and mean(acc, "antialias") >= mean(acc, "baseline") - ACCURACY_SLACK)
    record(9, ok, f"consistency baseline {np.round(cons['baseline'], 4).tolist()} mean "
                  f"{mean(cons, 'baseline'):.4f}, anti-aliased {np.round(cons['antialias'], 4).tolist()} mean "
                  f"{mean(cons, 'antialias'):.4f}; accuracy baseline {mean(acc, 'baseline'):.4f}, "
                  f"anti-aliased {mean(acc, 'antialias'):.4f}; "
                  f"{train_time + time.perf_counter() - t0:.0f} s incl. training/cache")


def test_c10_grid_attack_trend(trend_models):
    models, test_set, _ = trend_models
    sub = test_set.take(np.arange(ATTACK_IMAGES))
    post = {}
    for (v, s), m in models.items():
        post.setdefault(v, []).append(A.post_attack_accuracy(A.attack_grid_search(m, sub.images, sub.labels)))
    b, a = float(np.mean(post["baseline"])), float(np.mean(post["antialias"]))
    record(10, a >= b, f"post-attack accuracy on {ATTACK_IMAGES} images: baseline "
                       f"{np.round(post['baseline'], 4).tolist()} mean {b:.4f}, anti-aliased "
                       f"{np.round(post['antialias'], 4).tolist()} mean {a:.4f}")


def test_c11_spectral_trend(trend_models):
    models, test_set, _ = trend_models
    firsts, deepest = [], []
    for s in SEEDS:
        maps = S.energy_maps(models[("baseline", s)], test_set.images, n=HF_IMAGES)
        firsts.append(S.hf_ratio(maps[0]))
        deepest.append(S.hf_ratio(maps[-1]))
    ok = np.mean(deepest) > np.mean(firsts)
    record(11, ok, f"baseline hf_ratio over {HF_IMAGES} images, first level "
                   f"{np.round(firsts, 4).tolist()} mean {np.mean(firsts):.4f}, deepest "
                   f"{np.round(deepest, 4).tolist()} mean {np.mean(deepest):.4f}")


# ---------------------------------------------------------------- criterion 12

def test_c12_cli_determinism(tmp_path):
    from test_data import fake_mnist
    data = tmp_path / "data"
    data.mkdir()
    fake_mnist(data, n_train=60, n_test=30)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "dataset": {"name": "mnist", "train_n": 60, "test_n": 30},
        "model": {"variant": "antialias", "af": "aa_relu"},
        "train": {"epochs": 2, "batch_size": 16, "lr": 0.02, "lr_drop_epochs": [2]},
        "eval": {"protocols": ["diagonal", "rescale", "double_rescale"]},
        "seed": 5,
    }))
    out = tmp_path / "run"
    snaps = []
    for _ in range(2):
        codes = [cli.main([cmd, "--config", str(cfg), "--data-dir", str(data), "--out", str(out)])
                 for cmd in ("train", "eval")]
        snaps.append((codes, (out / "summary.json").read_bytes(), (out / "model.ckpt").read_bytes()))
    ok = snaps[0] == snaps[1] and snaps[0][0] == [0, 0]
    record(12, ok, f"exit codes {snaps[0][0]}, summary.json identical {snaps[0][1] == snaps[1][1]}, "
                   f"checkpoint identical {snaps[0][2] == snaps[1][2]} ({len(snaps[0][2])} bytes)")

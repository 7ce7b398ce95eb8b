"""Fast golden-vector and invariant checks, run by ``dabnet selftest``."""

import numpy as np

from . import layers as L
from . import spectra as S
from . import tensor as T
from . import transforms as TF
from .gradcheck import numeric_grad, rel_error


def _golden_aa_relu():
    x = np.array([-9.0, 3.0, 8.9, 9.0, 10.0, 43.3, 81.0])
    got = L.aa_relu_forward(x, 9.0)
    want = np.array([0.0, 3.0, 8.9, 9.0, 9.94649123, 18.0, 18.0])
    return np.allclose(got, want, atol=1e-8), f"max_err={np.abs(got - want).max():.2e}"


def _golden_gaussian():
    k = L.gaussian_kernel(1.0, 3)
    want = np.array([[0.0751136, 0.1238414, 0.0751136],
                     [0.1238414, 0.2041800, 0.1238414],
                     [0.0751136, 0.1238414, 0.0751136]])
    ok = np.allclose(k, want, atol=1e-6) and abs(k.sum() - 1) < 1e-12
    return ok, f"centre={k[1, 1]:.7f}"


def _conv_grad():
    rng = np.random.Generator(np.random.Philox(7))
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    dy = rng.normal(size=(2, 3, 3, 3))

    def f(xv):
        return float(np.vdot(T.conv2d(T.Tensor(xv), T.Tensor(w), stride=2, padding=1).data, dy))

    xt = T.Tensor(x, requires_grad=True)
    with T.Tape() as tape:
        y = T.conv2d(xt, T.Tensor(w), stride=2, padding=1)
    tape.backward(y, dy)
    err = rel_error(xt.grad, numeric_grad(f, x))
    return err < 1e-6, f"rel_err={err:.1e}"


def _sigma_grad():
    rng = np.random.Generator(np.random.Philox(8))
    x = rng.normal(size=(1, 2, 6, 6))
    dy = rng.normal(size=(1, 2, 3, 3))
    analytic = L.dsigma(x, dy, 0.8, m=3, stride=2)

    def f(s):
        return float(np.vdot(L.dab_pool(T.Tensor(x), float(s), stride=2).data, dy))

    err = rel_error(analytic, numeric_grad(f, np.array(0.8)))
    return err < 1e-6, f"rel_err={err:.1e}"


def _integer_translate():
    rng = np.random.Generator(np.random.Philox(9))
    img = rng.uniform(size=(1, 8, 8))
    a = TF.translate(img, 2.0, -1.0)
    b = TF.integer_shift(img, dx=2, dy=-1)
    return bool(np.array_equal(a, b)), "bit-exact"


def _dft():
    rng = np.random.Generator(np.random.Philox(10))
    x = rng.normal(size=(4, 6))
    err = np.abs(S.dft2(x) - S.naive_dft2(x)).max()
    return err < 1e-9, f"max_err={err:.1e}"


def _projection():
    got = L.project_monotone([0.05, 0.04, 2.0])
    return bool(np.allclose(got, [0.1, 0.11, 2.0])), str(np.round(got, 4).tolist())


CHECKS = [
    ("aa_relu_golden", _golden_aa_relu),
    ("gaussian_golden", _golden_gaussian),
    ("conv_input_grad", _conv_grad),
    ("dab_sigma_grad", _sigma_grad),
    ("integer_translate", _integer_translate),
    ("dft_vs_naive", _dft),
    ("sigma_projection", _projection),
]


def run_all():
    results = []
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # noqa: BLE001
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results

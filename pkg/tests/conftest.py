import numpy as np
import pytest

from dabnet.gradcheck import numeric_grad, rel_error
from dabnet.tensor import Tape, Tensor

GRAD_TOL = 1e-6


def make_rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def rng():
    return make_rng(1234)


def tape_grads(fn, arrays, dy):
    """Reverse-mode gradients of sum(dy * fn(*tensors)) w.r.t. every array."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*tensors)
    tape.backward(out, dy)
    return [t.grad for t in tensors]


def fd_grads(fn, arrays, dy, h=1e-6):
    grads = []
    for i, a in enumerate(arrays):
        def f(v, i=i):
            args = [Tensor(v if j == i else b) for j, b in enumerate(arrays)]
            return float(np.vdot(fn(*args).data, dy))
        grads.append(numeric_grad(f, a, h))
    return grads


def assert_grads_match(fn, arrays, dy, tol=GRAD_TOL):
    for got, want in zip(tape_grads(fn, arrays, dy), fd_grads(fn, arrays, dy)):
        assert rel_error(got, want) < tol


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = (bool(ok), detail)
    assert ok, f"criterion {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}")

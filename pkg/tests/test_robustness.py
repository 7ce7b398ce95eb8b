import numpy as np
import pytest

from dabnet import data as D
from dabnet import netbuild as NB
from dabnet import robustness as R

from conftest import make_rng


class SeqModel:
    """Returns a preset prediction per call, for flip-probability arithmetic."""

    def __init__(self, seqs):
        self.seqs = iter(seqs)

    def predict(self, images):
        return np.asarray(next(self.seqs))


@pytest.fixture(scope="module")
def digits():
    rng = make_rng(0)
    return D.Dataset(rng.uniform(size=(12, 1, 28, 28)), np.arange(12) % 10)


@pytest.fixture(scope="module")
def model():
    return NB.make_model(NB.rewrite_antialias(NB.build_toy_cnn()), 1)


def test_consistency_basic():
    assert R.consistency([1, 2, 3, 4], [1, 2, 0, 4]) == 0.75
    with pytest.raises(ValueError):
        R.consistency([], [])
    with pytest.raises(ValueError):
        R.consistency([1, 2], [1])


def test_zero_shift_consistency_is_one_for_any_model(digits, model):
    for m in (model, NB.make_model(NB.build_toy_cnn(), 5), NB.ConstantClassifier(3)):
        assert R.protocol_diagonal(m, digits, force_shift=0).consistency == 1.0


def test_constant_model_is_fully_consistent(digits):
    m = NB.constant_model(NB.build_toy_cnn(), 7)
    for name, proto in R.PROTOCOLS.items():
        assert proto(m, digits).consistency == 1.0, name


def test_diagonal_shifts_in_range_and_seeded():
    s = R.diagonal_shifts(1000, seed=3)
    assert s.min() == 1 and s.max() == 4
    np.testing.assert_array_equal(s, R.diagonal_shifts(1000, seed=3))


def test_protocols_report(digits, model):
    rep = R.protocol_diagonal(model, digits, seed=2)
    assert rep.n_images == 12 and 0 <= rep.consistency <= 1 and rep.protocol == "diagonal"
    assert R.protocol_rescale(model, digits).protocol == "rescale"
    assert R.protocol_double_rescale(model, digits).protocol == "double_rescale"


def test_rescaled_embedding_geometry():
    img = np.ones((1, 1, 28, 28))
    e = R.rescaled_embedding(img, 14)
    assert e.sum() == 14 * 14 and e[0, 0, 7:21, 7:21].min() == 1
    shifted = R.rescaled_embedding(img, 14, shift=1)
    assert shifted[0, 0, 8:22, 8:22].min() == 1
    grown = R.rescaled_embedding(img, 14, grow=1)
    assert grown.sum() == 15 * 15


def test_fp_constant_and_alternating():
    assert R.flip_probability_from_predictions([[3] * 31] * 4).fp == 0.0
    assert R.flip_probability_from_predictions([[0, 1] * 15 + [0]] * 3).fp == 1.0


def test_fp_hand_counted_example():
    seqs = [[0] * 31 for _ in range(10)]
    seqs[4][17] = 5  # one frame differs -> two flips
    rep = R.flip_probability_from_predictions(seqs)
    assert rep.flips == 2 and rep.k == 10 and rep.v == 31
    assert rep.fp == 2 / 300
    seqs = [[0] * 31 for _ in range(10)]
    seqs[0][30] = 1  # change on the last frame only -> one flip
    assert R.flip_probability_from_predictions(seqs).fp == 1 / 300


def test_fp_through_model_interface():
    rep = R.flip_probability(SeqModel([[1, 1, 2], [4, 4, 4]]), [None, None], "rotate")
    assert rep.fp == 1 / 4 and rep.kind == "rotate"


def test_fp_validation():
    with pytest.raises(ValueError):
        R.flip_probability_from_predictions([])
    with pytest.raises(ValueError):
        R.flip_probability_from_predictions([[1, 2], [1, 2, 3]])
    with pytest.raises(ValueError):
        R.flip_count([1])


def test_make_sequences_shapes(digits):
    seqs = R.make_sequences(digits.images[:2], "tilt", 7)
    assert len(seqs) == 2 and seqs[0].shape == (7, 1, 28, 28)


def test_corruption_error_constant_model(digits):
    m = NB.ConstantClassifier(0)
    rep = R.corruption_error(m, digits, kinds=("gauss_noise", "impulse_noise"), severities=(1, 5))
    expected = 1 - np.mean(digits.labels == 0)
    assert rep.errors == {"gauss_noise": [expected] * 2, "impulse_noise": [expected] * 2}
    assert rep.mce == pytest.approx(expected)


def test_corrupted_set_is_seeded_per_image(digits):
    a = R.corrupted_set(digits.images[:3], "shot_noise", 2, seed=1)
    b = R.corrupted_set(digits.images[:3], "shot_noise", 2, seed=1)
    np.testing.assert_array_equal(a, b)
    c = R.corrupted_set(digits.images[1:3], "shot_noise", 2, seed=1)
    assert not np.array_equal(a[1:], c)  # substreams are keyed by position

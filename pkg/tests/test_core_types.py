import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpl.core_types import (UNLABELED, GridError, Kind, TensorFormatError, argmax_labels,
                            check_image, check_labels, check_probs, decode_tensor,
                            encode_tensor, load_tensor, save_tensor, softmax)

from helpers import seeds


def test_softmax_zero_scores_uniform():
    p = softmax(np.zeros((2, 3, 4)))
    assert np.array_equal(p, np.full((2, 3, 4), 0.25))


def test_softmax_two_class_hand_value():
    p = softmax(np.array([[[2.0, 0.0]]]))[0, 0]
    e2 = math.exp(2.0)
    assert p == pytest.approx([e2 / (e2 + 1), 1 / (e2 + 1)], abs=1e-12)
    assert p == pytest.approx([0.8808, 0.1192], abs=1e-4)


def test_softmax_rejects_non_finite():
    with pytest.raises(GridError):
        softmax(np.array([[[0.0, np.nan]]]))
    with pytest.raises(GridError):
        softmax(np.array([[[np.inf, 0.0]]]))


@given(seeds, st.floats(-50, 50))
def test_softmax_rows_sum_to_one(seed, scale):
    s = scale * np.random.default_rng(seed).standard_normal((4, 5, 6))
    p = softmax(s)
    assert np.all(p >= 0)
    assert np.abs(p.sum(-1) - 1).max() < 1e-6


@given(seeds, st.integers(-2**20, 2**20))
def test_softmax_shift_invariance_bit_exact(seed, k):
    # scores on a dyadic grid and integer shifts keep every subtraction exact
    rng = np.random.default_rng(seed)
    s = rng.integers(-64, 64, size=(3, 3, 4)) / 8.0
    shift = k + rng.integers(-8, 8, size=(3, 3, 1)) / 4.0
    assert np.array_equal(softmax(s + shift), softmax(s))


def test_softmax_constant_shift_example():
    base = softmax(np.ones((1, 1, 3)))
    assert np.array_equal(softmax(np.ones((1, 1, 3)) + 7.0), base)


@pytest.mark.parametrize("pixel, expected", [
    ([0, 0, 1, 0], 2),
    ([1 / 3, 1 / 3, 1 / 3], 0),
    ([0.1, 0.6, 0.3], 1),
])
def test_argmax_examples(pixel, expected):
    assert argmax_labels(np.array([[pixel]]))[0, 0] == expected


def test_argmax_tie_breaks_low():
    p = np.array([[[0.2, 0.4, 0.4], [0.5, 0.5, 0.0]]])
    assert argmax_labels(p).tolist() == [[1, 0]]


@given(seeds)
def test_argmax_of_softmax_matches_scores(seed):
    s = np.random.default_rng(seed).standard_normal((5, 5, 4))
    assert np.array_equal(argmax_labels(softmax(s)), np.argmax(s, axis=-1))


# ---------------------------------------------------------------- container


def _payload(kind, rng):
    if kind == Kind.IMAGE:
        return rng.random((3, 4, 3)).astype(np.float32)
    if kind == Kind.LABEL:
        y = rng.integers(0, 4, (3, 4)).astype(np.uint8)
        y[0, 0] = UNLABELED
        return y
    return rng.standard_normal((3, 4, 5)).astype(np.float32)


@pytest.mark.parametrize("kind", list(Kind))
def test_round_trip_all_kinds(kind, tmp_path):
    x = _payload(kind, np.random.default_rng(int(kind)))
    save_tensor(tmp_path / "x.dplt", x, kind)
    y, k = load_tensor(tmp_path / "x.dplt")
    assert k == kind
    assert y.dtype == x.dtype and np.array_equal(y, x)


@given(seeds, st.integers(1, 7), st.integers(1, 7), st.integers(1, 5))
def test_round_trip_scores_bitwise(seed, h, w, c):
    x = np.random.default_rng(seed).standard_normal((h, w, c)).astype(np.float32)
    y, _ = decode_tensor(encode_tensor(x, Kind.SCORE))
    assert y.tobytes() == x.tobytes()


def test_header_layout():
    buf = encode_tensor(np.zeros((2, 3), np.uint8), Kind.LABEL)
    assert buf[:4] == b"DPLT" and buf[4] == 1 and buf[5] == 3
    assert buf[6:18] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little") + \
        (1).to_bytes(4, "little")
    assert len(buf) == 18 + 6
    buf = encode_tensor(np.full((1, 1, 3), 0.5, np.float32), Kind.IMAGE)
    assert buf[18:22] == np.float32(0.5).tobytes()


def _code(buf):
    with pytest.raises(TensorFormatError) as info:
        decode_tensor(buf)
    return info.value.code


def test_decode_errors_have_distinct_codes():
    good = encode_tensor(np.ones((2, 2, 3), np.float32), Kind.IMAGE)
    codes = {
        _code(b"XXXX" + good[4:]),
        _code(good[:4] + bytes([2]) + good[5:]),
        _code(good[:5] + bytes([9]) + good[6:]),
        _code(good[:6] + (1 << 20).to_bytes(4, "little") * 3),
        _code(good[:-1]),
        _code(good + b"\0"),
        _code(good[:10]),
    }
    assert TensorFormatError.BAD_MAGIC in codes
    assert TensorFormatError.BAD_VERSION in codes
    assert TensorFormatError.BAD_KIND in codes
    assert TensorFormatError.DIM_OVERFLOW in codes
    assert TensorFormatError.TRUNCATED in codes
    assert TensorFormatError.TRAILING in codes


def test_label_with_channels_is_overflow():
    buf = bytearray(encode_tensor(np.zeros((1, 1), np.uint8), Kind.LABEL))
    buf[14:18] = (2).to_bytes(4, "little")
    assert _code(bytes(buf) + b"\0") == TensorFormatError.DIM_OVERFLOW


def test_validators():
    check_image(np.zeros((1, 1, 3)))
    with pytest.raises(GridError):
        check_image(np.full((1, 1, 3), 1.5))
    with pytest.raises(GridError):
        check_probs(np.array([[[0.5, 0.6]]]))
    check_labels(np.array([[0, 3, UNLABELED]], np.uint8), 4)
    with pytest.raises(GridError):
        check_labels(np.array([[4]], np.uint8), 4)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskfuse.errors import ParseError, ValidationError
from maskfuse.pnm import (
    decode_pnm,
    encode_pnm,
    from_unit_range,
    read_image,
    read_mask,
    to_unit_range,
    write_image,
    write_mask,
)


def test_decode_handwritten_files():
    gray = decode_pnm(b"P5\n# a comment\n3 2\n255\n" + bytes([0, 1, 2, 3, 4, 255]))
    np.testing.assert_array_equal(gray, [[0, 1, 2], [3, 4, 255]])
    rgb = decode_pnm(b"P6 1 2 255 " + bytes([10, 20, 30, 40, 50, 60]))
    assert rgb.shape == (2, 1, 3)
    np.testing.assert_array_equal(rgb[1, 0], [40, 50, 60])
    # maxval 1 rescales to the full byte range
    np.testing.assert_array_equal(decode_pnm(b"P5 2 1 1\n" + bytes([0, 1])), [[0, 255]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.booleans(), st.integers(0, 2**32 - 1))
def test_round_trip(h, w, color, seed):
    shape = (h, w, 3) if color else (h, w)
    px = np.random.default_rng(seed).integers(0, 256, size=shape, dtype=np.uint8)
    np.testing.assert_array_equal(decode_pnm(encode_pnm(px)), px)


@pytest.mark.parametrize(
    "data,offset",
    [
        (b"P3\n1 1\n255\n", 0),
        (b"P5\n1 1\n", 7),
        (b"P5\nx 1\n255\n\0", 3),
        (b"P5\n2 2\n255\n\0\0\0", 14),
        (b"P5\n1 1\n0\n\0", 7),
        (b"P5\n1 1\n300\n\0\0", 7),
        (b"P5\n1 1\n10\n\x0b", 10),
        (b"P", 0),
    ],
)
def test_parse_errors_carry_offsets(data, offset):
    with pytest.raises(ParseError) as info:
        decode_pnm(data)
    assert info.value.offset == offset
    assert f"byte offset {offset}" in str(info.value)


def test_encode_rejects_bad_arrays():
    with pytest.raises(ValidationError):
        encode_pnm(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ValidationError):
        encode_pnm(np.zeros((2, 2, 4), dtype=np.uint8))


def test_image_and_mask_files(tmp_path):
    img = np.random.default_rng(0).uniform(-1, 1, size=(4, 5, 3))
    write_image(tmp_path / "a.ppm", img)
    back = read_image(tmp_path / "a.ppm")
    assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-12
    mask = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    write_mask(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.pgm"), mask)
    assert (tmp_path / "m.pgm").read_bytes().endswith(bytes([0, 255, 255, 0]))


def test_unit_range_endpoints():
    np.testing.assert_array_equal(to_unit_range(np.array([0, 255], dtype=np.uint8)), [-1.0, 1.0])
    np.testing.assert_array_equal(from_unit_range(np.array([-2.0, -1.0, 0.0, 1.0, 3.0])), [0, 0, 128, 255, 255])

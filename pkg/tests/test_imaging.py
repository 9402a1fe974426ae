import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rltransport.errors import ContractError
from rltransport.imaging import (
    difference_image, false_color_light_index, palette, read_pfm, read_ppm, rmse, srgb_encode, write_image,
)


def test_rmse_examples(rng):
    a = rng.random((4, 5, 3))
    assert rmse(a, a) == 0.0 and rmse(a, a, relative=True) == 0.0
    b = a.copy()
    b[2, 3, 1] += 0.3
    assert rmse(b, a) == pytest.approx(0.3 / math.sqrt(3 * 4 * 5))
    with pytest.raises(ContractError):
        rmse(a, a[:3])


def test_rmse_relative_formula(rng):
    a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    expected = math.sqrt(np.mean((a - b) ** 2 / (b**2 + 1e-4)))
    assert rmse(a, b, relative=True) == pytest.approx(expected, rel=1e-12)
    # black reference pixels stay finite thanks to the regularizer
    assert math.isfinite(rmse(np.ones((2, 2, 3)), np.zeros((2, 2, 3)), relative=True))


def test_difference_image_examples():
    a = np.full((3, 3, 3), 0.4)
    assert np.all(difference_image(a, a) == 0)
    assert difference_image(a + 0.1, a, gain=10)[0, 0, 0] == pytest.approx(0.1)
    assert np.all(difference_image(a + 5, a) == 1.0)
    with pytest.raises(ContractError):
        difference_image(a, a[:2])


def test_false_color_examples():
    img = false_color_light_index(np.zeros((4, 4), int), 8)
    assert np.all(img == img[0, 0]) and np.all(img[0, 0] == palette(8)[0])
    pal = palette(8)
    dists = [np.linalg.norm(pal[i] - pal[j]) for i in range(8) for j in range(i + 1, 8)]
    assert len({tuple(p) for p in pal}) == 8 and min(dists) > 0.2
    idx = np.array([[0, 7], [-1, 3]])
    img = false_color_light_index(idx, 8)
    assert np.all(img[1, 0] == 0)
    assert np.array_equal(img, false_color_light_index(idx, 8))
    with pytest.raises(ContractError):
        false_color_light_index(idx, 4)


def test_ppm_examples(tmp_path):
    for value, byte in ((0.0, 0), (1.0, 255), (7.0, 255)):
        path = tmp_path / "px.ppm"
        write_image(np.full((1, 1, 3), value), path, "ppm")
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n1 1\n255\n")
        assert raw[-3:] == bytes([byte] * 3)
    assert np.all(read_ppm(path) == 255)


def test_srgb_transfer_function():
    # standard piecewise curve: linear toe below 0.0031308, 1/2.4 power above
    assert srgb_encode(0.002) == pytest.approx(0.002 * 12.92)
    assert srgb_encode(0.5) == pytest.approx(1.055 * 0.5 ** (1 / 2.4) - 0.055)
    # the two pieces meet at the breakpoint
    assert srgb_encode(0.0031308) == pytest.approx(1.055 * 0.0031308 ** (1 / 2.4) - 0.055, abs=1e-6)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
              elements=st.floats(0, 1e6, width=32)))
@settings(max_examples=50, deadline=None)
def test_pfm_roundtrip_bit_exact(tmp_path_factory, image):
    path = tmp_path_factory.mktemp("pfm") / "img.pfm"
    write_image(image, path)
    back = read_pfm(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, image.astype(np.float32))


def test_pfm_header_and_orientation(tmp_path):
    img = np.zeros((2, 3, 3))
    img[0, 0] = (1, 2, 3)  # top-left
    path = tmp_path / "o.pfm"
    write_image(img, path)
    raw = path.read_bytes()
    assert raw.startswith(b"PF\n3 2\n-1.0\n")
    # first stored scanline is the bottom row
    body = np.frombuffer(raw[len(b"PF\n3 2\n-1.0\n"):], "<f4").reshape(2, 3, 3)
    assert np.all(body[1, 0] == (1, 2, 3))


def test_write_image_errors(tmp_path):
    with pytest.raises(OSError) as err:
        write_image(np.zeros((1, 1, 3)), tmp_path / "missing" / "x.pfm")
    assert "missing" in str(err.value.filename)
    with pytest.raises(ContractError):
        write_image(np.zeros((1, 1, 3)), tmp_path / "x.exr")
    with pytest.raises(ContractError):
        write_image(np.full((1, 1, 3), np.nan), tmp_path / "x.pfm")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fluidrefine import io_reports as io
from fluidrefine.fields import FlowField, GridError, ScalarField
from fluidrefine.synth import OseenSpec, oseen_flow


def test_read_8bit_pgm(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
    s = io.read_image(p)
    assert np.array_equal(s.data, [[0, 1], [0, 1]])


def test_read_16bit_pgm(tmp_path):
    p = tmp_path / "b.pgm"
    p.write_bytes(b"P5\n2 1\n65535\n" + np.array([0, 65535], dtype=">u2").tobytes())
    assert np.allclose(io.read_image(p).data, [[0, 1]])


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
@pytest.mark.parametrize("bits", [8, 16])
def test_image_round_trip(tmp_path, rng, suffix, bits):
    s = ScalarField(rng.random((9, 13)))
    p = tmp_path / f"img{suffix}"
    io.write_image(p, s, bits)
    back = io.read_image(p)
    assert back.shape == s.shape
    assert np.max(np.abs(back.data - s.data)) <= 1.0 / (2 ** bits - 1)


def test_image_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n2 2\n")
    with pytest.raises(io.ImageFormatError):
        io.read_image(bad)
    noise = tmp_path / "noise.png"
    noise.write_bytes(b"not an image at all")
    with pytest.raises(io.ImageFormatError):
        io.read_image(noise)
    with pytest.raises(io.ImageFormatError):
        io.write_image(tmp_path / "x.jpg", ScalarField(np.zeros((2, 2))))
    from PIL import Image
    Image.new("RGB", (3, 3)).save(tmp_path / "rgb.png")
    with pytest.raises(io.ImageFormatError):
        io.read_image(tmp_path / "rgb.png")


def test_flo_known_layout(tmp_path):
    w = FlowField.from_arrays(np.array([[1.5]]), np.array([[-2.0]]))
    p = tmp_path / "one.flo"
    io.write_flo(p, w)
    raw = p.read_bytes()
    assert len(raw) == 20
    assert raw.hex() == "50494548" "01000000" "01000000" "0000c03f" "000000c0"


def test_flo_errors(tmp_path):
    p = tmp_path / "x.flo"
    p.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(io.FlowFormatError):
        io.read_flo(p)
    p.write_bytes(b"PIEH" + (3).to_bytes(4, "little") + (3).to_bytes(4, "little") + bytes(10))
    with pytest.raises(io.FlowFormatError):
        io.read_flo(p)
    p.write_bytes(b"PIE")
    with pytest.raises(io.FlowFormatError):
        io.read_flo(p)


finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, (5, 7), elements=finite32), arrays(np.float32, (5, 7), elements=finite32))
def test_flo_round_trip_bit_exact(tmp_path_factory, u, v):
    w = FlowField.from_arrays(u.astype(np.float64), v.astype(np.float64))
    p = tmp_path_factory.mktemp("flo") / "w.flo"
    io.write_flo(p, w)
    back = io.read_flo(p)
    assert np.array_equal(back.u.data, w.u.data) and np.array_equal(back.v.data, w.v.data)
    assert io.flo_bytes(back) == p.read_bytes()


def test_endpoint_error():
    t = FlowField.from_arrays(np.random.default_rng(0).random((8, 8)), np.zeros((8, 8)))
    assert io.endpoint_error(t, t) == 0.0
    shifted = FlowField.from_arrays(t.u.data + 1.0, t.v.data)
    assert io.endpoint_error(shifted, t) == pytest.approx(1.0)
    with pytest.raises(GridError):
        io.endpoint_error(t, FlowField.from_arrays(np.zeros((7, 8)), np.zeros((7, 8))))


def test_hs_worse_than_refined(oseen_half, hs_half, bca_half):
    assert io.endpoint_error(hs_half, oseen_half.truth) > io.endpoint_error(bca_half[0], oseen_half.truth)


def test_extract_profile():
    z = FlowField.from_arrays(np.zeros((6, 9)), np.zeros((6, 9)))
    prof = io.extract_profile(z, 3)
    assert len(prof) == 9 and all(v == 0 for _, v in prof)
    with pytest.raises(IndexError):
        io.extract_profile(z, 6)
    truth = oseen_flow(OseenSpec())
    prof = dict(io.extract_profile(truth, 250))
    assert abs(prof[167]) < 1e-9 and abs(prof[333]) < 1e-9


def test_magnitude_raster(tmp_path):
    z = FlowField.from_arrays(np.zeros((6, 9)), np.zeros((6, 9)))
    io.magnitude_raster(z, tmp_path / "z.png")
    img = io.read_image(tmp_path / "z.png")
    assert img.shape == (6, 9) and np.all(img.data == 0)
    spec = OseenSpec(centers=[(50.0, 50.0)], strengths=[7000.0], core_radius=15.0, width=101, height=101)
    mag = io.magnitude_image(oseen_flow(spec)).data
    y, x = np.unravel_index(np.argmax(mag), mag.shape)
    # the ring of peak speed sits at r = 1.12 r0
    assert np.hypot(x - 50, y - 50) == pytest.approx(1.12 * 15, abs=1.0)


def test_writers_deterministic(tmp_path, rng):
    w = FlowField.from_arrays(rng.random((8, 8)), rng.random((8, 8)))
    for name in ("a", "b"):
        io.write_flo(tmp_path / f"{name}.flo", w)
        io.magnitude_raster(w, tmp_path / f"{name}.png")
        io.write_profile_csv(tmp_path / f"{name}.csv", io.extract_profile(w, 2))
    for ext in ("flo", "png", "csv"):
        assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()


def test_csv_format(tmp_path):
    io.write_profile_csv(tmp_path / "p.csv", [(0.0, 1 / 3), (1.0, 2e-12)])
    header, rows = io.read_csv(tmp_path / "p.csv")
    assert header == ["x", "u"]
    assert rows == [["0", "0.333333333"], ["1", "2e-12"]]


def test_flow_report():
    w = FlowField.from_arrays(np.zeros((6, 6)), np.zeros((6, 6)))
    rep = io.flow_report(w, w, energy_trace=[3.0, 2.0])
    assert rep.aee == 0 and rep.div_stats == (0.0, 0.0) and rep.energy_trace == [3.0, 2.0]
    with pytest.raises(ValueError):
        io.FlowReport(aee=-1.0, profile=[], div_stats=(0, 0), curl_stats=(0, 0))
    with pytest.raises(ValueError):
        io.FlowReport(aee=0.0, profile=[(1, 0), (0, 0)], div_stats=(0, 0), curl_stats=(0, 0))

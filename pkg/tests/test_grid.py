import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fbfrac.grid import ImageGrid, PgmError, l2_distance, load_pgm, mean, save_pgm


def test_p2_transcription(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 10\n20 255\n")
    g = load_pgm(path)
    np.testing.assert_array_equal(g.data, [[0, 10], [20, 255]])
    assert g.h == 1.0


def test_p5_constant(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n3 3\n255\n" + bytes([128] * 9))
    g = load_pgm(path)
    np.testing.assert_array_equal(g.data, np.full((3, 3), 128.0))


def test_header_comments_tolerated(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P2\n# made by hand\n2 # width\n2\n255\n1 2 3 4\n")
    np.testing.assert_array_equal(load_pgm(path).data, [[1, 2], [3, 4]])


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(15))
    with pytest.raises(PgmError, match="truncated"):
        load_pgm(path)


def test_wrong_depth(tmp_path):
    path = tmp_path / "d.pgm"
    path.write_bytes(b"P5\n2 2\n100\n" + bytes(4))
    with pytest.raises(PgmError, match="depth"):
        load_pgm(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(PgmError, match="magic"):
        load_pgm(path)


def test_malformed_header(tmp_path):
    path = tmp_path / "h.pgm"
    path.write_bytes(b"P2\ntwo 2\n255\n1 2 3 4\n")
    with pytest.raises(PgmError, match="header"):
        load_pgm(path)


@pytest.mark.parametrize(
    "value,expected", [(255.7, 255), (-3.2, 0), (100.5, 101), (99.4999, 99)]
)
def test_save_clamp_and_round(tmp_path, value, expected):
    g = ImageGrid(np.full((2, 2), value))
    path = tmp_path / "q.pgm"
    save_pgm(g, path)
    assert load_pgm(path).data[0, 0] == expected


@settings(max_examples=25, deadline=None)
@given(arrays(np.int64, (5, 7), elements=st.integers(0, 255)), st.booleans())
def test_pgm_roundtrip_integers(tmp_path_factory, data, binary):
    path = tmp_path_factory.mktemp("pgm") / "r.pgm"
    g = ImageGrid(data.astype(np.float64))
    save_pgm(g, path, binary=binary)
    np.testing.assert_array_equal(load_pgm(path).data, g.data)


def test_mean_examples(rng):
    assert mean(ImageGrid(np.full((4, 4), 7.0))) == 7.0
    assert mean(ImageGrid(np.array([[0.0, 10.0], [20.0, 30.0]]))) == 15.0
    data = rng.uniform(0, 255, (32, 32))
    acc = 0.0
    for i in range(32):
        for j in range(32):
            acc += data[i, j]
    assert abs(mean(ImageGrid(data)) - acc / 1024) < 1e-12


def test_l2_distance(rng):
    a = ImageGrid(rng.uniform(0, 255, (6, 5)))
    assert l2_distance(a, a) == 0.0
    bumped = a.data.copy()
    bumped[2, 3] += 1.0
    assert l2_distance(a, ImageGrid(bumped)) == pytest.approx(1.0, abs=1e-12)
    b = ImageGrid(rng.uniform(0, 255, (6, 5)), h=0.5)
    a2 = ImageGrid(a.data, h=0.5)
    acc = 0.0
    for i in range(6):
        for j in range(5):
            acc += (a2.data[i, j] - b.data[i, j]) ** 2
    assert l2_distance(a2, b) == pytest.approx(0.5 * np.sqrt(acc), abs=1e-12)
    with pytest.raises(ValueError, match="mismatch"):
        l2_distance(a, ImageGrid(np.zeros((5, 6))))


def test_oracle_agreement_64(rng):
    data = rng.uniform(0, 255, (64, 64))
    g = ImageGrid(data)
    brute = sum(data[i, j] for i in range(64) for j in range(64))
    assert abs(mean(g) - brute / 64 / 64) < 1e-12


def test_grid_validation():
    with pytest.raises(ValueError):
        ImageGrid(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        ImageGrid(np.zeros((1, 5)))
    with pytest.raises(ValueError):
        ImageGrid(np.zeros(4))
    with pytest.raises(ValueError):
        ImageGrid(np.zeros((3, 3)), h=0.0)


def test_grid_data_readonly():
    g = ImageGrid(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        g.data[0, 0] = 1.0

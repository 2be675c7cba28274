import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cgvae.errors import ParseError
from cgvae.xyzio import format_xyz, parse_xyz, read_xyz, write_xyz

GOLDEN = """2
frame=0
C 0.000000000 0.000000000 0.000000000
H 1.090000000 0.000000000 0.000000000
"""


def test_golden_two_atom_frame():
    assert format_xyz(("C", "H"), [[[0, 0, 0], [1.09, 0, 0]]]) == GOLDEN
    elements, frames = parse_xyz(GOLDEN)
    assert elements == ("C", "H")
    np.testing.assert_array_equal(frames, [[[0, 0, 0], [1.09, 0, 0]]])


@given(arrays(np.float64, (3, 4, 3), elements=st.floats(-1e3, 1e3)))
def test_round_trip(frames):
    elements, back = parse_xyz(format_xyz(("C", "O", "H", "N"), frames))
    assert elements == ("C", "O", "H", "N")
    np.testing.assert_allclose(back, frames, atol=1e-9)


def test_file_round_trip_and_comments(tmp_path, rng):
    frames = rng.normal(size=(2, 3, 3))
    path = tmp_path / "a.xyz"
    write_xyz(path, ("C", "C", "H"), frames, comments=["first", "second"])
    assert path.read_text().splitlines()[1] == "first"
    _, back = read_xyz(path)
    np.testing.assert_allclose(back, frames, atol=1e-9)


def test_empty_text():
    elements, frames = parse_xyz("")
    assert elements == () and frames.shape[0] == 0
    assert format_xyz(("C",), np.zeros((0, 1, 3))) == ""


@pytest.mark.parametrize("text, line", [
    ("x\n", 1),
    ("0\n\n", 1),
    ("2\nc\nC 0 0 0\n", 4),
    ("1\nc\nC 0 0\n", 3),
    ("1\nc\nXx 0 0 0\n", 3),
    ("1\nc\nC 0 a 0\n", 3),
    ("1\nc\nC 0 0 0\n1\nc\nH 0 0 0\n", 4),
])
def test_parse_errors_name_the_line(text, line):
    with pytest.raises(ParseError, match=f"line {line}:"):
        parse_xyz(text)

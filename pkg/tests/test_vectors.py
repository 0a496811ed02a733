import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from placededup.vectors import FormatError, read_vectors, write_vectors

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@pytest.mark.invariant
@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(1, 5)), elements=finite))
def test_round_trip_is_bit_exact(tmp_path_factory, X):
    path = tmp_path_factory.mktemp("v") / "x.txt"
    keys = [f"k{i}" for i in range(len(X))]
    write_vectors(path, keys, X)
    back_keys, back = read_vectors(path)
    assert back_keys == keys
    assert back.shape == X.shape and back.tobytes() == X.tobytes()


@pytest.mark.parametrize(
    "text",
    ["3 2\na 1 2\nb 3 4\n", "2 2\na 1 2\nb 3\n", "2 2\na 1 2\nb 3 nan\n", "x y\n", "1 2\na 1 2 3\n"],
)
def test_malformed_files(tmp_path, text):
    (tmp_path / "v.txt").write_text(text)
    with pytest.raises(FormatError):
        read_vectors(tmp_path / "v.txt")


def test_keys_with_spaces_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_vectors(tmp_path / "v.txt", ["a b"], np.zeros((1, 2)))

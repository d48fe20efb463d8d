import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxstream.morton import (
    morton2_encode,
    morton2_encode_array,
    morton2_decode,
    morton3_encode,
    morton3_encode_array,
    morton3_decode,
)


def interleave3_oracle(x: int, y: int, z: int) -> int:
    code = 0
    for i in range(21):
        code |= ((x >> i) & 1) << (3 * i)
        code |= ((y >> i) & 1) << (3 * i + 1)
        code |= ((z >> i) & 1) << (3 * i + 2)
    return code


def interleave2_oracle(u: int, v: int) -> int:
    code = 0
    for i in range(32):
        code |= ((u >> i) & 1) << (2 * i)
        code |= ((v >> i) & 1) << (2 * i + 1)
    return code


def test_known_values_3d():
    assert morton3_encode(0, 0, 0) == 0
    assert morton3_encode(1, 1, 1) == 7
    assert morton3_encode(3, 5, 1) == 143


def test_known_values_2d():
    assert morton2_encode(0, 0) == 0
    assert morton2_encode(1, 0) == 1
    assert morton2_encode(0, 1) == 2
    assert morton2_encode(3, 2) == 13


@given(st.integers(0, 2**21 - 1), st.integers(0, 2**21 - 1), st.integers(0, 2**21 - 1))
def test_encode3_matches_oracle_and_roundtrips(x, y, z):
    code = morton3_encode(x, y, z)
    assert code == interleave3_oracle(x, y, z)
    assert morton3_decode(code) == (x, y, z)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_encode2_matches_oracle_and_roundtrips(u, v):
    code = morton2_encode(u, v)
    assert code == interleave2_oracle(u, v)
    assert morton2_decode(code) == (u, v)


@given(st.integers(0, 2**21 - 2), st.integers(0, 2**21 - 1), st.integers(0, 2**21 - 1))
def test_monotone_in_each_coordinate(x, y, z):
    assert morton3_encode(x, y, z) < morton3_encode(x + 1, y, z)
    assert morton3_encode(y % (2**21 - 1), x, z) < morton3_encode(y % (2**21 - 1), x + 1, z)
    assert morton3_encode(y, z, x) < morton3_encode(y, z, x + 1)


def test_coordinate_overflow_rejected():
    with pytest.raises(ValueError):
        morton3_encode(2**21, 0, 0)
    with pytest.raises(ValueError):
        morton2_encode(2**32, 0)


def test_array_encoders_match_scalars():
    rng = np.random.default_rng(0)
    x, y, z = (rng.integers(0, 2**21, 64, dtype=np.uint64) for _ in range(3))
    codes = morton3_encode_array(x, y, z)
    for i in range(64):
        assert int(codes[i]) == morton3_encode(int(x[i]), int(y[i]), int(z[i]))
    u, v = (rng.integers(0, 2**16, 64, dtype=np.uint64) for _ in range(2))
    codes2 = morton2_encode_array(u, v)
    for i in range(64):
        assert int(codes2[i]) == morton2_encode(int(u[i]), int(v[i]))

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catcast.core import build_table, fit_vocabulary
from catcast.encoders import (
    EncodingScheme,
    binary_encode,
    binary_width,
    code_table,
    encode_indices,
    encode_table,
    fnv1a_64,
    hash_encode,
    hash_vector,
    integer_encode,
    one_hot,
)
from catcast.errors import EncodeError

TYPE = fit_vocabulary(["food", "feed", "fcm"])

# Published FNV-1a 64-bit test vectors
FNV_VECTORS = {
    b"": 0xCBF29CE484222325,
    b"a": 0xAF63DC4C8601EC8C,
    b"foobar": 0x85944171F73967E8,
}


def test_integer_table():
    assert [integer_encode(TYPE.lookup(s), 3) for s in ("food", "feed", "fcm")] == [1.0, 2.0, 3.0]
    assert integer_encode(0, 3) == 0.0
    with pytest.raises(EncodeError):
        integer_encode(4, 3)
    codes = [integer_encode(i, 1024) for i in range(1025)]
    assert len(set(codes)) == 1025


def test_binary_widths():
    assert binary_width(3) == 2
    assert binary_width(1) == 1
    assert binary_width(38) == 6
    with pytest.raises(EncodeError):
        binary_width(0)


def test_binary_table():
    got = {s: binary_encode(TYPE.lookup(s), 2).tolist() for s in ("food", "feed", "fcm")}
    assert got == {"food": [0, 1], "feed": [1, 0], "fcm": [1, 1]}
    assert binary_encode(0, 2).tolist() == [0, 0]
    with pytest.raises(EncodeError):
        binary_encode(4, 2)


@pytest.mark.parametrize("n", [1, 3, 38, 200, 1024])
def test_binary_reads_back(n):
    w = binary_width(n)
    # smallest w with 2**w >= n + 1
    assert 2 ** w >= n + 1 and 2 ** (w - 1) < n + 1
    for i in range(n + 1):
        bits = binary_encode(i, w)
        assert int("".join(str(int(b)) for b in bits), 2) == i


def test_one_hot_table():
    got = {s: one_hot(TYPE.lookup(s), 3).tolist() for s in ("food", "feed", "fcm")}
    assert got["food"] == [0, 1, 0, 0]
    # dropping the UNK slot leaves the identity pattern of the worked example
    assert [got[s][1:] for s in ("food", "feed", "fcm")] == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    assert one_hot(1, 1).tolist() == [0, 1]
    with pytest.raises(EncodeError):
        one_hot(-1, 3)


@pytest.mark.parametrize("n", [1, 2, 17, 500])
def test_one_hot_sums_and_injective(n):
    vecs = np.stack([one_hot(i, n) for i in range(n + 1)])
    assert np.all(vecs.sum(axis=1) == 1.0)
    # pairwise orthogonal, so distinct
    assert np.array_equal(vecs @ vecs.T, np.eye(n + 1))


def test_fnv_reference_digests():
    for data, digest in FNV_VECTORS.items():
        assert fnv1a_64(data) == digest


def test_hash_deterministic_across_processes():
    code = "from catcast.encoders import hash_encode; print(hash_encode('food', 1000))"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert int(out.stdout) == hash_encode("food", 1000) == fnv1a_64(b"food") % 1000


@given(st.text(max_size=30), st.integers(2, 5000))
def test_hash_range(value, buckets):
    h = hash_encode(value, buckets)
    assert 0 <= h < buckets
    assert hash_vector(value, buckets).sum() == 1.0


def test_hash_range_bulk():
    rng = np.random.default_rng(0)
    values = ["".join(map(chr, rng.integers(97, 123, size=8))) for _ in range(100_000)]
    hashes = np.array([hash_encode(v, 97) for v in values])
    assert hashes.min() >= 0 and hashes.max() < 97


def test_hash_collision_rate():
    n, m = 10_000, 2 ** 16
    values = [f"category-{i}" for i in range(n)]
    collisions = n - len({hash_encode(v, m) for v in values})
    birthday = n * (n - 1) / (2 * m)
    assert collisions <= 3 * birthday


def test_hash_needs_two_buckets():
    with pytest.raises(EncodeError):
        hash_encode("x", 1)
    with pytest.raises(EncodeError):
        EncodingScheme("hashing", 1)


def test_scheme_widths():
    assert EncodingScheme("integer").width(38) == 1
    assert EncodingScheme("binary").width(38) == 6
    assert EncodingScheme("hashing", 64).width(38) == 64
    assert EncodingScheme("one-hot").width(38) == 39
    with pytest.raises(EncodeError):
        EncodingScheme("target")


def test_encode_table_layout():
    t = build_table({"TYPE": ["food", "feed", "fcm"], "RISK_DECISION": ["serious"] * 3}, [2010] * 3)
    m = encode_table(t.subset([0]), EncodingScheme("one_hot"), ["TYPE"])
    assert m.values.shape == (1, 4)
    assert m.column_names == ["TYPE-0", "TYPE-1", "TYPE-2", "TYPE-3"]

    t = build_table({"TYPE": ["food", "feed", "fcm"], "X": ["a", "b", "a"]}, [2010] * 3)
    m = encode_table(t, EncodingScheme("binary"), ["X", "TYPE"])
    assert m.values.shape == (3, 4)
    # schema order, not argument order
    assert m.column_names == ["TYPE-0", "TYPE-1", "X-0", "X-1"]
    assert m.values[2].tolist() == [1, 1, 0, 1]


@pytest.mark.parametrize("kind", ["integer", "binary", "hashing", "one_hot"])
def test_encoding_is_row_wise(kind, rng):
    vocabs = [fit_vocabulary([str(i) for i in range(7)]), fit_vocabulary([str(i) for i in range(3)])]
    scheme = EncodingScheme(kind, 16)
    rows = np.stack([rng.integers(0, 8, 30), rng.integers(0, 4, 30)], axis=1)
    whole = encode_indices(rows, vocabs, scheme)
    for i in range(rows.shape[0]):
        assert np.array_equal(encode_indices(rows[i:i + 1], vocabs, scheme)[0], whole[i])
    assert np.isfinite(whole).all()


def test_code_table_unk_row():
    assert code_table(TYPE, EncodingScheme("one_hot"))[0].tolist() == [1, 0, 0, 0]
    assert code_table(TYPE, EncodingScheme("binary"))[0].tolist() == [0, 0]
    with pytest.raises(EncodeError):
        encode_indices(np.array([[4]]), [TYPE], EncodingScheme("binary"))

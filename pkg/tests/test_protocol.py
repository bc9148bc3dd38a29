import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from swarmlink.protocol import (
    FieldCountError, MalformedHeaderError, NonFiniteValueError, NumberFormatError, Snapshot,
    decode_snapshot, encode_snapshot, split_frames,
)


def bits(s: Snapshot):
    return [v.hex() for g in (s.xs, s.ys, s.vxs, s.vys) for v in g] + [s.send_timestamp.hex()]


def random_snapshot(rng, n):
    def val():
        # mix of ordinary and awkward doubles
        return rng.choice([rng.uniform(-1e3, 1e3), rng.gauss(0, 1e-12), -0.0, 0.1, 1e308, 5e-324])
    return Snapshot(rng.randint(0, 1), rng.randint(0, 2**63 - 1), rng.uniform(1.6e9, 1.8e9),
                    tuple(val() for _ in range(n)), tuple(val() for _ in range(n)),
                    tuple(val() for _ in range(n)), tuple(val() for _ in range(n)))


def test_empty_snapshot():
    s = Snapshot(0, 1, 1700000000.25)
    assert encode_snapshot(s) == b"SNAP 0 1 1700000000.25 0\n"
    assert decode_snapshot(encode_snapshot(s)) == s


def test_field_order():
    s = Snapshot(1, 3, 0.5, (1.0, 2.0), (3.0, 4.0), (5.0, 6.0), (7.0, 8.0))
    line = encode_snapshot(s)
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    assert line.split()[5:] == [b"1.0", b"2.0", b"3.0", b"4.0", b"5.0", b"6.0", b"7.0", b"8.0"]


def test_value_position_is_group_major():
    n = 4
    s = Snapshot(0, 0, 0.0, *[tuple(float(10 * g + k) for k in range(n)) for g in range(4)])
    vals = [float(t) for t in encode_snapshot(s).split()[5:]]
    for g in range(4):
        for k in range(n):
            assert vals[g * n + k] == 10 * g + k


def test_round_trip_random():
    rng = random.Random(1)
    for _ in range(1000):
        s = random_snapshot(rng, rng.randint(0, 50))
        d = decode_snapshot(encode_snapshot(s))
        assert d == s and bits(d) == bits(s)


def test_round_trip_large():
    s = random_snapshot(random.Random(2), 1000)
    assert bits(decode_snapshot(encode_snapshot(s))) == bits(s)


def test_wrong_field_count():
    with pytest.raises(FieldCountError):
        decode_snapshot(b"SNAP 0 1 0.0 3 " + b" ".join([b"1.0"] * 11) + b"\n")


def test_unparseable_number():
    with pytest.raises(NumberFormatError):
        decode_snapshot(b"SNAP 0 1 0.0 1 a b c d\n")


@pytest.mark.parametrize("line", [b"SNAQ 0 1 0.0 0\n", b"SNAP 0 1\n", b"SNAP x 1 0.0 0\n",
                                  b"SNAP 0 1 0.0 -2\n", b"SNAP 0 1 0.0 0", b"SNAP 0 1 zz 0\n"])
def test_malformed_header(line):
    with pytest.raises(MalformedHeaderError):
        decode_snapshot(line)


def test_non_finite():
    with pytest.raises(NonFiniteValueError):
        encode_snapshot(Snapshot(0, 0, 0.0, (math.nan,), (0.0,), (0.0,), (0.0,)))
    with pytest.raises(NonFiniteValueError):
        decode_snapshot(b"SNAP 0 0 0.0 1 inf 0 0 0\n")


def test_snapshot_lengths_checked():
    with pytest.raises(ValueError):
        Snapshot(0, 0, 0.0, (1.0,), (), (), ())


def test_split_frames_examples():
    assert split_frames(b"A\nB\nC") == ([b"A\n", b"B\n"], b"C")
    assert split_frames(b"") == ([], b"")
    assert split_frames(b"only part") == ([], b"only part")


@given(st.lists(st.binary(max_size=20).map(lambda b: b.replace(b"\n", b"")), max_size=20),
       st.lists(st.integers(0, 400), max_size=30))
@settings(max_examples=200)
def test_rechunking_never_changes_frames(lines, cuts):
    stream = b"".join(l + b"\n" for l in lines)
    cuts = sorted({c for c in cuts if c <= len(stream)})
    chunks = [stream[a:b] for a, b in zip([0] + cuts, cuts + [len(stream)])]
    out, buf = [], b""
    for c in chunks:
        got, buf = split_frames(buf + c)
        out.extend(got)
    assert out == [l + b"\n" for l in lines]
    assert buf == b""


@given(st.binary(max_size=200))
def test_split_conserves_bytes(data):
    lines, rest = split_frames(data)
    assert b"".join(lines) + rest == data
    assert all(l.endswith(b"\n") and l.count(b"\n") == 1 for l in lines)

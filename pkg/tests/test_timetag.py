import struct
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pecs.errors import (ChannelError, DomainError, EmptyRecordWarning, FormatError, ParseError,
                         TruncationError, UnsortedInputWarning)
from pecs.timetag import (EVENT_DTYPE, HEADER, AcquisitionRecord, PhotonTimeSeries, export_binary,
                          export_csv, import_binary, import_csv)


def write_ttag(path, events, resolution=1e-9, total_time=10.0, n_events=None, magic=b"TTAG", version=1):
    arr = np.array(events, dtype=EVENT_DTYPE)
    n = len(arr) if n_events is None else n_events
    path.write_bytes(HEADER.pack(magic, version, resolution, total_time, n) + arr.tobytes())
    return path


def test_binary_two_events(tmp_path):
    rec = import_binary(write_ttag(tmp_path / "a.ttag1", [(0, 5), (1, 7)]))
    assert (rec.counts_a, rec.counts_b) == (1, 1)
    assert rec.total_time == 10.0 and rec.time_source == "header"
    assert rec.channel_a.timestamps.tolist() == [5]
    assert rec.channel_b.timestamps.tolist() == [7]


def test_binary_empty_is_flagged(tmp_path):
    with pytest.warns(EmptyRecordWarning):
        rec = import_binary(write_ttag(tmp_path / "e.ttag1", []))
    assert rec.counts_a == rec.counts_b == 0
    assert "empty" in rec.flags


def test_binary_out_of_order_sorted_with_warning(tmp_path):
    with pytest.warns(UnsortedInputWarning):
        rec = import_binary(write_ttag(tmp_path / "u.ttag1", [(0, 9), (0, 3)]))
    assert rec.channel_a.timestamps.tolist() == sorted([9, 3])
    assert "unsorted" in rec.flags


def test_binary_errors(tmp_path):
    with pytest.raises(FormatError):
        import_binary(write_ttag(tmp_path / "m.ttag1", [(0, 1)], magic=b"NOPE"))
    with pytest.raises(FormatError):
        import_binary(write_ttag(tmp_path / "v.ttag1", [(0, 1)], version=2))
    (tmp_path / "short").write_bytes(b"TTAG")
    with pytest.raises(FormatError):
        import_binary(tmp_path / "short")
    with pytest.raises(ChannelError):
        import_binary(write_ttag(tmp_path / "c.ttag1", [(0, 1), (3, 2)]))


def test_truncation_reports_byte_offset(tmp_path):
    path = write_ttag(tmp_path / "t.ttag1", [(0, 1), (1, 2)], n_events=3)
    with pytest.raises(TruncationError) as info:
        import_binary(path)
    assert info.value.offset == HEADER.size + 2 * EVENT_DTYPE.itemsize
    data = path.read_bytes()[:-4]
    path.write_bytes(data)
    with pytest.raises(TruncationError) as info:
        import_binary(path)
    assert info.value.offset == HEADER.size + EVENT_DTYPE.itemsize


def test_header_layout_is_little_endian():
    assert HEADER.format == "<4sHddQ" and HEADER.size == 30
    assert EVENT_DTYPE.itemsize == 9
    assert struct.pack("<H", 1) == HEADER.pack(b"TTAG", 1, 1.0, 1.0, 0)[4:6]


def test_total_time_from_max_timestamp_when_missing(tmp_path):
    rec = import_binary(write_ttag(tmp_path / "z.ttag1", [(0, 5), (1, 70)], total_time=0.0))
    assert rec.time_source == "max-timestamp"
    assert rec.total_time == pytest.approx(70e-9)
    assert rec.header_time is None


def test_csv_example(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("0,100\n1,250\n0,300\n")
    rec = import_csv(p, 1e-9)
    assert (rec.counts_a, rec.counts_b) == (2, 1)


def test_csv_header_only_warns(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("channel,timestamp_ticks\n")
    with pytest.warns(EmptyRecordWarning):
        rec = import_csv(p, 1e-9)
    assert rec.is_empty


def test_csv_parse_errors_carry_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("channel,timestamp_ticks\n0,10\n1,abc\n")
    with pytest.raises(ParseError) as info:
        import_csv(p, 1e-9)
    assert info.value.line == 3
    p.write_text("0,10\n1,-4\n")
    with pytest.raises(DomainError):
        import_csv(p, 1e-9)


def test_csv_lenient_counts_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,10\n1,abc\n1,20\n7,30\n0,2.5\n")
    rec = import_csv(p, 1e-9, strict=False)
    assert rec.rejected_lines == 3
    assert rec.counts_a + rec.counts_b == 5 - rec.rejected_lines


def test_cross_format_oracle(tmp_path, rng):
    ch = rng.integers(0, 2, 10_000)
    t = np.sort(rng.integers(0, 10**9, 10_000))
    lines = "\n".join(f"{c},{x}" for c, x in zip(ch, t))
    (tmp_path / "big.csv").write_text("# total_time=2.0\n" + lines + "\n")
    write_ttag(tmp_path / "big.ttag1", list(zip(ch.tolist(), t.tolist())), resolution=1e-9, total_time=2.0)
    assert import_csv(tmp_path / "big.csv", 1e-9) == import_binary(tmp_path / "big.ttag1")


def test_series_invariants():
    with pytest.raises(DomainError):
        PhotonTimeSeries([3, 1], 1e-9)
    with pytest.raises(DomainError):
        PhotonTimeSeries([-1, 1], 1e-9)
    with pytest.raises(DomainError):
        PhotonTimeSeries([1], 0.0)
    s = PhotonTimeSeries([1, 1, 2], 1e-9)  # duplicates are separate photons
    assert len(s) == 3
    with pytest.raises(ValueError):
        s.timestamps[0] = 5


def test_record_rejects_short_total_time():
    a = PhotonTimeSeries([10], 1.0)
    b = PhotonTimeSeries([], 1.0, 1)
    with pytest.raises(DomainError):
        AcquisitionRecord(a, b, 5.0)


ticks = st.lists(st.integers(0, 2**40), max_size=60)


@given(ticks, ticks, st.sampled_from([1e-12, 1e-9, 2.5e-10]))
def test_round_trip_both_formats(tmp_path_factory, a, b, res):
    d = tmp_path_factory.mktemp("rt")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rec = AcquisitionRecord.from_ticks(a, b, res, (max(a + b + [0]) + 5) * res)
        export_binary(rec, d / "r.ttag1")
        export_csv(rec, d / "r.csv")
        back_bin = import_binary(d / "r.ttag1")
        back_csv = import_csv(d / "r.csv", res)
    assert back_bin == rec
    assert back_csv == rec
    for r in (back_bin, back_csv):
        assert np.all(np.diff(list(r.channel_a)) >= 0)
        assert r.counts_a == len(a) and r.counts_b == len(b)

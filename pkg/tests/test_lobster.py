"""LOBSTER parsing, serialization and bundle loading."""

import numpy as np
import pytest

from lobeval.errors import DataError, ParseError, ValidationError
from lobeval.lobster import (ASK_ABSENT, BID_ABSENT, DEFAULT_TICK, BookArray,
                             BookSnapshot, EventType, MessageArray, Role,
                             SequencePair, conditioning_seed, format_time_ns,
                             load_bundle, parse_book_file, parse_message_file,
                             serialize_books, serialize_messages,
                             write_pair_files)

MSG_CSV = ("34200.000000001,1,101,50,1000100,1\n"
           "34200.500000000,3,101,50,1000100,1\n")
BOOK_CSV = ("1000200,10,1000100,50,9999999999,0,-9999999999,0\n"
            "1000200,10,-9999999999,0,9999999999,0,-9999999999,0\n")


def test_parse_message_file_basic(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(MSG_CSV)
    m = parse_message_file(p)
    assert len(m) == 2
    assert m.time_ns[0] == 34_200_000_000_001
    assert m.event_type.tolist() == [1, 3]
    assert m.price.tolist() == [1000100, 1000100]
    assert m.direction.tolist() == [1, 1]


def test_parse_book_file_sentinels(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text(BOOK_CSV)
    b = parse_book_file(p)
    assert b.n_levels == 2
    # second row: bid side empty after the delete
    assert b.data[1, 2] == BID_ABSENT
    assert b.data[1, 3] == 0
    assert b.data[0, 0] == 1000200


def test_message_roundtrip_bytes(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(MSG_CSV)
    m = parse_message_file(p)
    assert serialize_messages(m) == MSG_CSV


def test_book_roundtrip_bytes(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text(BOOK_CSV)
    b = parse_book_file(p)
    assert serialize_books(b) == BOOK_CSV


def test_format_time_ns_nine_decimals():
    assert format_time_ns(34_200_000_000_001) == "34200.000000001"
    assert format_time_ns(57_600 * 10**9) == "57600.000000000"


def test_parse_rejects_wrong_column_count(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("34200.0,1,101,50,1000100\n")
    with pytest.raises(ParseError):
        parse_message_file(p)


def test_parse_rejects_non_numeric_with_row_number(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(MSG_CSV + "bogus,1,2,3,4,5\n")
    with pytest.raises(ParseError, match="3"):
        parse_message_file(p)


def test_parse_rejects_bad_event_type(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("34200.0,9,101,50,1000100,1\n")
    with pytest.raises((ParseError, ValidationError)):
        parse_message_file(p)


def test_parse_rejects_crossed_book(tmp_path):
    p = tmp_path / "b.csv"
    # best bid above best ask on row 2
    p.write_text("1000200,10,1000100,50\n1000200,10,1000300,50\n")
    with pytest.raises(ValidationError, match="2"):
        parse_book_file(p)


def test_event_type_enum_matches_format():
    assert EventType.NEW_LIMIT == 1
    assert EventType.PARTIAL_CANCEL == 2
    assert EventType.DELETE == 3
    assert EventType.EXECUTE_VISIBLE == 4
    assert EventType.EXECUTE_HIDDEN == 5
    assert EventType.CROSS == 6
    assert EventType.HALT == 7


def test_snapshot_row_roundtrip():
    snap = BookSnapshot(((1000150, 5), None), ((1000050, 7), (1000000, 3)))
    row = snap.to_row()
    assert row == [1000150, 5, 1000050, 7, ASK_ABSENT, 0, 1000000, 3]
    back = BookSnapshot.from_row(row)
    assert back == snap
    assert back.mid == 1000100.0


def test_sequence_pair_length_mismatch_rejected():
    m = MessageArray(np.array([1], dtype=np.int64),
                     np.array([1], dtype=np.int64),
                     np.array([1], dtype=np.int64),
                     np.array([1], dtype=np.int64),
                     np.array([1000100], dtype=np.int64),
                     np.array([1], dtype=np.int64))
    books = BookArray(np.zeros((2, 4), dtype=np.int64), 1)
    with pytest.raises(ValueError):
        SequencePair(m, books, Role.REAL, "x")


def test_write_and_load_bundle(bundle_dir):
    bundle = load_bundle(bundle_dir)
    assert len(bundle.real) == 1
    assert len(bundle.generated) == 1
    assert bundle.n_levels == 10
    assert bundle.real[0].role is Role.REAL
    assert bundle.generated[0].role is Role.GENERATED


def test_load_bundle_missing_root(tmp_path):
    with pytest.raises(DataError):
        load_bundle(tmp_path / "nope")


def test_load_bundle_unpaired_files(tmp_path):
    (tmp_path / "real").mkdir()
    (tmp_path / "real" / "a_message.csv").write_text(MSG_CSV)
    with pytest.raises(DataError, match="unpaired"):
        load_bundle(tmp_path)


def test_write_pair_files_names(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(MSG_CSV)
    b = tmp_path / "b.csv"
    b.write_text(BOOK_CSV)
    mpath, bpath = write_pair_files(parse_message_file(p),
                                    parse_book_file(b), tmp_path, "seq01")
    assert mpath.name == "seq01_message.csv"
    assert bpath.name == "seq01_orderbook.csv"
    assert mpath.read_text() == MSG_CSV


def test_conditioning_seed_strips_sample_suffix():
    assert conditioning_seed("seed3__2") == "seed3"
    assert conditioning_seed("seed3") == "seed3"


def test_simulated_output_roundtrips(small_sims, tmp_path):
    real, _ = small_sims
    mpath, bpath = write_pair_files(real.pair.messages, real.pair.books,
                                    tmp_path, "sim")
    m = parse_message_file(mpath)
    b = parse_book_file(bpath)
    assert np.array_equal(m.time_ns, real.pair.messages.time_ns)
    assert np.array_equal(m.price, real.pair.messages.price)
    assert np.array_equal(b.data, real.pair.books.data)
    assert DEFAULT_TICK == 100

from zipfile import ZipFile

import pytest

from intersnap_archive.util import pack_fields, unpack_fields, unpack_int, canonical_json, canonical_bytes, \
    content_hash, b64encode, b64decode, get_error, archive_write_csv, archive_read_text, write_error_log, \
    lookup_username


def test_pack_fields():

    data = pack_fields(b"\x00\x01", "N1", 7)
    assert data == b"\x00\x00\x00\x02\x00\x01" + b"\x00\x00\x00\x02N1" + b"\x00\x00\x00\x08" + (7).to_bytes(8, "big")

    fields = unpack_fields(data)
    assert fields == [b"\x00\x01", b"N1", (7).to_bytes(8, "big")]
    assert unpack_int(fields[2]) == 7
    assert unpack_int(pack_fields(-1)[4:]) == -1

    # Field boundaries are unambiguous
    assert pack_fields("ab", "c") != pack_fields("a", "bc")

    with pytest.raises(TypeError):
        pack_fields(True)
    with pytest.raises(TypeError):
        pack_fields(1.5)
    with pytest.raises(ValueError):
        unpack_fields(data[:-1])
    with pytest.raises(ValueError):
        unpack_fields(b"\x00\x00")
    with pytest.raises(ValueError):
        unpack_int(b"\x00")


def test_canonical_json():

    assert canonical_json({"b": 1, "a": [1, {"d": 2, "c": 3}]}) == '{"a":[1,{"c":3,"d":2}],"b":1}'
    assert canonical_bytes({"x": "é"}) == b'{"x":"\\u00e9"}'
    assert content_hash("abc") == content_hash(b"abc") == \
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert b64decode(b64encode(b"\x00\xff")) == b"\x00\xff"


def test_get_error():

    try:
        raise ValueError("Test error")
    except ValueError as e:
        error_message = get_error(e)

    assert error_message.startswith("ValueError in stack:")
    assert "Test error" in error_message


def test_archive_write_csv(tmp_path):

    # Directory output, nested file name
    archive_write_csv(tmp_path / "out", "metrics/stage_counts.csv", "stage,attempts\narchive,3\n")
    assert (tmp_path / "out" / "metrics" / "stage_counts.csv").read_text() == "stage,attempts\narchive,3\n"
    assert archive_read_text(tmp_path / "out", "metrics/stage_counts.csv") == "stage,attempts\narchive,3\n"

    # Zip output unzips to a folder named after the archive
    zipped = tmp_path / "run.zip"
    archive_write_csv(zipped, "summary.json", "{}\n")
    archive_write_csv(str(zipped), "verdicts.csv", "tick\n")
    with ZipFile(zipped) as z:
        assert sorted(z.namelist()) == ["run/summary.json", "run/verdicts.csv"]
    assert archive_read_text(zipped, "verdicts.csv") == "tick\n"

    with pytest.raises(FileNotFoundError):
        archive_read_text(zipped, "missing.csv")
    with pytest.raises(FileNotFoundError):
        archive_read_text(tmp_path / "none.zip", "summary.json")


def test_write_error_log(tmp_path):

    write_error_log(tmp_path, [])
    assert not (tmp_path / "error_log.txt").exists()

    write_error_log(tmp_path, ["tick 3, archive stage for N1: boom"], header="Run attempted on 2024-01-01")
    write_error_log(tmp_path, ["second"])
    lines = (tmp_path / "error_log.txt").read_text().splitlines()
    assert lines == ["Run attempted on 2024-01-01", "tick 3, archive stage for N1: boom", "second"]


def test_lookup_username():

    user = lookup_username()
    assert isinstance(user, str)
    assert user

import math

import numpy as np
import pytest
import simplejson

from csrobust.core.artifacts import ArtifactWriter, decode_pgm, dumps_json, encode_pgm, read_csv
from csrobust.core.errors import ShapeMismatchError, VolumeParseError


def test_csv_has_exact_header_even_when_empty(tmp_path):
    writer = ArtifactWriter(str(tmp_path))
    path = writer.write_csv("empty.csv", [], ["method", "epsilon"])
    assert path.read_text(encoding="utf-8") == "method,epsilon\n"


def test_csv_columns_follow_the_given_order(tmp_path):
    writer = ArtifactWriter(str(tmp_path))
    rows = [{"b": 2, "a": 0.1 + 0.2}, {"a": 1.0, "b": 3}]
    path = writer.write_csv("rows.csv", rows, ["a", "b"])

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "a,b"
    assert lines[1] == "0.3,2"
    frame = read_csv(path)
    assert list(frame.columns) == ["a", "b"]


def test_writes_are_atomic_and_tracked(tmp_path):
    writer = ArtifactWriter(str(tmp_path / "out"))
    writer.write_json("nested/run.json", {"k": 1})
    writer.write_pgm("image.pgm", np.zeros((2, 2)))

    assert [p.name for p in writer.written] == ["run.json", "image.pgm"]
    assert not list((tmp_path / "out").rglob("*.tmp"))


def test_json_is_sorted_and_nan_safe():
    text = dumps_json({"b": np.float64(1.5), "a": np.array([1, 2]), "c": math.nan})
    assert simplejson.loads(text) == {"a": [1, 2], "b": 1.5, "c": None}
    assert text.index('"a"') < text.index('"b"')


def test_pgm_round_trip():
    image = np.array([[0.0, 0.5], [1.0, 2.0]])
    data = encode_pgm(image)
    assert data.startswith(b"P5\n2 2\n255\n")
    np.testing.assert_array_equal(decode_pgm(data), [[0, 128], [255, 255]])


def test_pgm_needs_2d():
    with pytest.raises(ShapeMismatchError):
        encode_pgm(np.zeros((2, 2, 2)))


@pytest.mark.parametrize(
    "data",
    [b"P6\n2 2\n255\n\x00\x00\x00\x00", b"P5\ntwo 2\n255\n\x00\x00", b"P5\n2 2\n65535\n\x00", b"P5\n2 2\n255\n\x00"],
)
def test_malformed_pgm_is_a_parse_error(data):
    with pytest.raises(VolumeParseError) as excinfo:
        decode_pgm(data)
    assert excinfo.value.code == "PARSE_ERROR"
    assert excinfo.value.exit_code == 3

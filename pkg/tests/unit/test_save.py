#
# Tests for writing frames and JSON documents
#
import json

import numpy as np
import pandas as pd
import pytest

from lengthlab import save


@pytest.fixture
def frame():
    return pd.DataFrame({"step": [0, 1, 2], "mean_len": [4.0, 5.5, 7.25]})


class TestSaveFrame():
    @pytest.mark.parametrize("file_type, reader", [
        ("csv", pd.read_csv),
        ("parquet", pd.read_parquet),
        ("pickle", pd.read_pickle),
        ("feather", pd.read_feather),
    ])
    def test_formats(self, tmp_path, frame, file_type, reader):
        path = save.save_frame(frame, file_type, tmp_path / "out", "log")
        assert path == tmp_path / "out" / f"log{save.FRAME_SUFFIXES[file_type]}"
        pd.testing.assert_frame_equal(reader(path), frame)

    def test_unsupported(self, tmp_path, frame):
        with pytest.raises(ValueError):
            save.save_frame(frame, "xlsx", tmp_path, "log")

    def test_no_temporary_files_left(self, tmp_path, frame):
        save.save_frame(frame, "csv", tmp_path, "log")
        save.save_frame(frame, "csv", tmp_path, "log")
        assert [p.name for p in tmp_path.iterdir()] == ["log.csv"]


class TestSaveJson():
    def test_sorted_and_plain(self, tmp_path):
        document = {"b": np.float64(0.5), "a": [np.int64(3), float("nan")],
                    "c": {"inf": float("inf"), "flag": np.bool_(True)},
                    "v": np.array([1.0, 2.0])}
        path = save.save_json(document, tmp_path, "summary")
        text = path.read_text()
        assert list(json.loads(text)) == ["a", "b", "c", "v"]
        assert json.loads(text) == {"a": [3, None], "b": 0.5,
                                    "c": {"flag": True, "inf": None},
                                    "v": [1.0, 2.0]}

    def test_byte_identical(self, tmp_path):
        document = {"z": 1, "a": {"y": [1.5, 2.5]}}
        first = save.save_json(document, tmp_path / "one", "doc").read_bytes()
        second = save.save_json(dict(reversed(list(document.items()))),
                                tmp_path / "two", "doc").read_bytes()
        assert first == second

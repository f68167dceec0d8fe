import json
from collections import Counter

import pytest

from reqvec import corpus as corpus_io
from reqvec.errors import ClassTooSmall, InvalidOption, IoError, SchemaError
from reqvec.request_parser import decode_bytes
from reqvec.schemas import Corpus, HttpRequestDoc, NormalizationProfile


def make_corpus(labels, split="inference"):
    return Corpus(
        docs=[
            HttpRequestDoc(id=f"doc-{i:03d}", label=label, lines=[f"GET /p{i} HTTP/1.1", "Host: a"])
            for i, label in enumerate(labels)
        ],
        split=split,
    )


DUMP = (
    "GET http://localhost:8080/tienda1/index.jsp HTTP/1.1\r\n"
    "Host: localhost:8080\r\n"
    "\r\n"
    "\r\n"
    "POST http://localhost:8080/tienda1/publico/anadir.jsp HTTP/1.1\r\n"
    "Content-Type: application/x-www-form-urlencoded\r\n"
    "Content-Length: 12\r\n"
    "\r\n"
    "id=2&precio=85\r\n"
    "\r\n"
    "\r\n"
    "GET http://localhost:8080/tienda1/imagenes/3.gif HTTP/1.1\r\n"
    "Host: localhost:8080\r\n"
)


class TestJsonl:
    def test_save_load_roundtrip(self, tmp_path):
        corpus = make_corpus(["normal", "anomaly", "unlabeled"])
        path = tmp_path / "corpus" / "inference.jsonl"
        corpus_io.save_corpus(corpus, path, meta={"seed": 4})
        loaded = corpus_io.load_corpus(path)
        assert loaded == corpus

        header = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        assert header["_meta"]["split"] == "inference"
        assert header["_meta"]["seed"] == 4

    def test_split_survives(self, tmp_path):
        path = tmp_path / "train.jsonl"
        corpus_io.save_corpus(make_corpus(["normal", "normal"], split="train"), path)
        assert corpus_io.load_corpus(path).split == "train"

    def test_raw_bytes_survive(self, tmp_path):
        line = decode_bytes(b"GET /\xff\xfe HTTP/1.1")
        corpus = Corpus(docs=[HttpRequestDoc(id="b", lines=[line])])
        path = tmp_path / "c.jsonl"
        corpus_io.save_corpus(corpus, path)
        assert corpus_io.load_corpus(path).docs[0].lines[0] == line

    def test_missing_meta_means_inference(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps({"id": "a", "label": "normal", "lines": ["GET / HTTP/1.1"]}) + "\n")
        loaded = corpus_io.load_corpus(path)
        assert loaded.split == "inference"
        assert loaded.ids == ["a"]

    @pytest.mark.parametrize(
        "record",
        [
            "{not json",
            json.dumps({"id": "a", "lines": ["x"]}),
            json.dumps({"id": "a", "label": "weird", "lines": ["x"]}),
            json.dumps({"id": "a", "label": "normal", "lines": []}),
            json.dumps(["a"]),
            json.dumps({"_meta": "train"}),
            json.dumps({"_meta": {"split": "holdout"}}),
        ],
    )
    def test_schema_errors(self, tmp_path, record):
        path = tmp_path / "c.jsonl"
        path.write_text(record + "\n")
        with pytest.raises(SchemaError):
            corpus_io.load_corpus(path)

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / "c.jsonl"
        rec = json.dumps({"id": "a", "label": "normal", "lines": ["x"]})
        path.write_text(rec + "\n" + rec + "\n")
        with pytest.raises(SchemaError):
            corpus_io.load_corpus(path)

    def test_missing_path(self, tmp_path):
        with pytest.raises(IoError):
            corpus_io.load_corpus(tmp_path / "absent.jsonl")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(SchemaError):
            corpus_io.load_corpus(tmp_path, "parquet")


class TestRawDumps:
    def test_segmentation_attaches_bodies(self):
        segments = corpus_io.segment_raw_dump(DUMP)
        assert len(segments) == 3
        assert segments[1].endswith("\r\n\r\nid=2&precio=85")

    def test_import_raw_dump(self, tmp_path):
        path = tmp_path / "normalTrafficTest.txt"
        path.write_bytes(DUMP.encode("utf-8"))
        docs = corpus_io.import_raw_dump(path)
        assert [d.label for d in docs] == ["normal"] * 3
        assert docs[0].id == "normalTrafficTest-000000"
        assert docs[1].lines[-2:] == ["", "id=2&precio=85"]

    def test_rawdir_labels_from_file_names(self, tmp_path):
        (tmp_path / "normalTraffic.txt").write_bytes(DUMP.encode("utf-8"))
        (tmp_path / "anomalousTraffic.txt").write_bytes(DUMP.encode("utf-8"))
        loaded = corpus_io.load_corpus(tmp_path, "rawdir")
        assert Counter(loaded.labels) == {"normal": 3, "anomaly": 3}

        train = corpus_io.load_corpus(tmp_path, "rawdir", split="train")
        assert set(train.labels) == {"normal"}

    def test_malformed_segments_skipped(self, tmp_path):
        path = tmp_path / "other.txt"
        path.write_text("garbage first\n\nGET / HTTP/1.1\nHost: a\n")
        docs = corpus_io.import_raw_dump(path)
        assert len(docs) == 1
        assert docs[0].label == "unlabeled"

    def test_unknown_parse_mode_is_not_skipped(self, tmp_path):
        path = tmp_path / "normal.txt"
        path.write_bytes(DUMP.encode("utf-8"))
        with pytest.raises(InvalidOption):
            corpus_io.import_raw_dump(path, mode="headers")


def test_normalize_corpus_filters_binary_payloads():
    docs = [
        HttpRequestDoc(id="a", lines=["POST / HTTP/1.1", "Content-Type: image/png", "", "PNG"]),
        HttpRequestDoc(id="b", lines=["POST / HTTP/1.1", "Content-Type: text/plain", "", "x"]),
        HttpRequestDoc(id="c", lines=["GET / HTTP/1.1", "Host: h"]),
    ]
    profile = NormalizationProfile(name="ids2018", host_pool=("h1",), require_text_payload=True)
    out = corpus_io.normalize_corpus(Corpus(docs=docs), profile)
    assert out.ids == ["b", "c"]
    assert out.docs[1].lines[1] == "Host: h1"


def test_corpus_stats():
    stats = corpus_io.corpus_stats(make_corpus(["normal", "normal", "anomaly"]))
    assert stats["docs"] == 3
    assert stats["normal"] == 2
    assert stats["anomaly"] == 1
    assert stats["mean_lines"] == pytest.approx(2.0)


class TestStratifiedFolds:
    def test_every_doc_in_exactly_one_fold(self):
        labels = ["normal"] * 23 + ["anomaly"] * 12
        ids = [f"d{i}" for i in range(len(labels))]
        folds = corpus_io.split_stratified_kfold(labels, k=5, seed=1, ids=ids)
        assert set(folds.assignment) == set(ids)
        assert sorted(i for k in range(5) for i in folds.test_ids(k)) == sorted(ids)

    def test_class_balance(self):
        labels = ["normal"] * 23 + ["anomaly"] * 12
        ids = [f"d{i}" for i in range(len(labels))]
        folds = corpus_io.split_stratified_kfold(labels, k=5, seed=1, ids=ids)
        by_id = dict(zip(ids, labels))
        for cls in ("normal", "anomaly"):
            sizes = [sum(by_id[i] == cls for i in folds.test_ids(k)) for k in range(5)]
            assert max(sizes) - min(sizes) <= 1

    def test_train_and_test_disjoint(self):
        labels = ["normal"] * 10 + ["anomaly"] * 10
        folds = corpus_io.split_stratified_kfold(labels, k=5, seed=0)
        for k in range(5):
            assert not set(folds.test_ids(k)) & set(folds.train_ids(k))

    def test_deterministic(self):
        labels = ["normal"] * 10 + ["anomaly"] * 10
        a = corpus_io.split_stratified_kfold(labels, k=5, seed=7)
        b = corpus_io.split_stratified_kfold(labels, k=5, seed=7)
        assert a == b

    def test_class_too_small(self):
        with pytest.raises(ClassTooSmall):
            corpus_io.split_stratified_kfold(["normal"] * 10 + ["anomaly"] * 4, k=5)

    def test_bad_options(self):
        with pytest.raises(InvalidOption):
            corpus_io.split_stratified_kfold(["normal", "anomaly"] * 5, k=1)
        with pytest.raises(InvalidOption):
            corpus_io.split_stratified_kfold(["normal", "anomaly"] * 5, k=2, ids=["a"])

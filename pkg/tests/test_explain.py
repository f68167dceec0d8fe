import re

import numpy as np
import pytest

from reqvec import explain
from reqvec.classify import train_logreg
from reqvec.embedder import EmbeddingMatrix, embed_corpus, embed_token_lines, fingerprint
from reqvec.encoder import init_encoder
from reqvec.errors import (
    DegenerateScale,
    FingerprintMismatch,
    MismatchedReport,
    ModelMismatch,
    NTooLarge,
    UnknownDocId,
)
from reqvec.schemas import (
    AttributionEntry,
    AttributionReport,
    Corpus,
    DecisionTreeModel,
    EncoderConfig,
    ForestModel,
    HttpRequestDoc,
    LinearModel,
    SyntheticSpec,
)
from reqvec.synthetic import generate_synthetic_corpus
from reqvec.tokenizer import encode, train_bbpe

PLANTED = "DROPME"
ANSI = re.compile(r"\x1b\[[0-9;]*m")


@pytest.fixture(scope="module")
def planted_vocab(train_corpus):
    # Enough repetitions that the planted word becomes a single token.
    filler = Corpus(docs=[HttpRequestDoc(id="planted", label="normal", lines=[PLANTED] * 5000)])
    return train_bbpe([train_corpus, filler], vocab_size=420, seed=0)


@pytest.fixture(scope="module")
def planted_docs(train_corpus):
    normal = train_corpus.docs[:30]
    anomalies = [
        HttpRequestDoc(id=f"anom-{i:02d}", label="anomaly", lines=[*doc.lines, PLANTED])
        for i, doc in enumerate(normal)
    ]
    return normal, anomalies


@pytest.fixture(scope="module")
def planted_encoder(planted_vocab, tiny_config):
    from reqvec.encoder import init_encoder

    return init_encoder(tiny_config.model_copy(update={"vocab_size": planted_vocab.size}))


def request_vector(params, vocab, doc):
    return embed_token_lines(params, [encode(vocab, line) for line in doc.lines if line])


@pytest.fixture(scope="module")
def centroid_model(planted_vocab, planted_docs, planted_encoder):
    """Hyperplane halfway between the class means, normal to their difference."""
    normal, anomalies = planted_docs
    mu_n = np.mean([request_vector(planted_encoder, planted_vocab, d) for d in normal], axis=0)
    mu_a = np.mean([request_vector(planted_encoder, planted_vocab, d) for d in anomalies], axis=0)
    w = mu_a - mu_n
    return LinearModel(
        kind="logreg",
        weights=w.tolist(),
        bias=float(-w @ (mu_a + mu_n) / 2.0),
        fingerprint=fingerprint(planted_vocab, planted_encoder),
    )


def make_report(doc_id, scores, token_ids=None):
    token_ids = token_ids or {}
    return AttributionReport(
        doc_id=doc_id,
        model_kind="logreg",
        base_distance=0.0,
        entries=[
            AttributionEntry(
                token=t,
                token_id=token_ids.get(t, 300 + ord(t[0])),
                occurrences=1,
                distance=0.0,
                scaled=0.0,
                score=s,
            )
            for t, s in scores.items()
        ],
    )


class TestAblation:
    def test_planted_word_is_one_token(self, planted_vocab):
        assert len(encode(planted_vocab, PLANTED)) == 1

    def test_scores_sum_to_zero(self, planted_vocab, planted_docs, planted_encoder, centroid_model):
        _, anomalies = planted_docs
        report = explain.token_ablation_scores(anomalies[0], planted_vocab, planted_encoder, centroid_model)
        assert abs(sum(e.score for e in report.entries)) < 1e-9
        assert min(e.scaled for e in report.entries) == 0.0
        assert max(e.scaled for e in report.entries) == 1.0
        scores = [e.score for e in report.entries]
        assert scores == sorted(scores, reverse=True)

    def test_invariant_to_weight_scale(self, planted_vocab, planted_docs, planted_encoder, centroid_model):
        doc = planted_docs[1][2]
        a = explain.token_ablation_scores(doc, planted_vocab, planted_encoder, centroid_model)
        b = explain.token_ablation_scores(doc, planted_vocab, planted_encoder, centroid_model.scaled(3.0))
        np.testing.assert_allclose([e.score for e in a.entries], [e.score for e in b.entries], atol=1e-9)
        assert a.base_distance == pytest.approx(b.base_distance)

    def test_workers_do_not_change_scores(self, planted_vocab, planted_docs, planted_encoder, centroid_model):
        doc = planted_docs[1][0]
        serial = explain.token_ablation_scores(doc, planted_vocab, planted_encoder, centroid_model)
        threaded = explain.token_ablation_scores(
            doc, planted_vocab, planted_encoder, centroid_model, workers=3
        )
        assert [e.token_id for e in serial.entries] == [e.token_id for e in threaded.entries]
        np.testing.assert_allclose(
            [e.score for e in serial.entries], [e.score for e in threaded.entries], atol=1e-9
        )

    def test_occurrences_counted(self, planted_vocab, planted_encoder, centroid_model):
        doc = HttpRequestDoc(id="x", lines=["GET /a HTTP/1.1", PLANTED, PLANTED])
        report = explain.token_ablation_scores(doc, planted_vocab, planted_encoder, centroid_model)
        planted = [e for e in report.entries if e.token == PLANTED]
        assert planted and planted[0].occurrences == 2

    def test_degenerate_scale(self, planted_vocab, planted_encoder, centroid_model):
        doc = HttpRequestDoc(id="one", lines=["a"])
        report = explain.token_ablation_scores(doc, planted_vocab, planted_encoder, centroid_model)
        assert report.degenerate
        assert [e.score for e in report.entries] == [0.0]
        with pytest.raises(DegenerateScale):
            explain.token_ablation_scores(doc, planted_vocab, planted_encoder, centroid_model, strict=True)

    def test_forest_rejected(self, planted_vocab, planted_encoder, planted_docs):
        leaf = DecisionTreeModel(feature=[-1], threshold=[0.0], left=[-1], right=[-1], value=[(1.0, 0.0)])
        forest = ForestModel(trees=[leaf], num_features=4 * planted_encoder.hidden_size, max_features=1)
        with pytest.raises(ModelMismatch):
            explain.token_ablation_scores(planted_docs[1][0], planted_vocab, planted_encoder, forest)

    def test_fingerprint_checked(self, planted_vocab, planted_encoder, planted_docs, centroid_model):
        stale = centroid_model.model_copy(update={"fingerprint": "0" * 64})
        with pytest.raises(FingerprintMismatch):
            explain.token_ablation_scores(planted_docs[1][0], planted_vocab, planted_encoder, stale)


class TestPlantedTokenRecovery:
    """Anomalies are normal requests plus one byte never seen in normal traffic."""

    MARK = "~"

    @pytest.fixture(scope="class")
    def shop_vocab(self):
        normal = generate_synthetic_corpus(SyntheticSpec(normal=300, split="train", seed=40))
        return train_bbpe(normal, vocab_size=1500, seed=0)

    def recovered(self, vocab, seed):
        corpus = generate_synthetic_corpus(
            SyntheticSpec(normal=100, anomaly=100, seed=500 + seed, planted_token=self.MARK)
        )
        config = EncoderConfig(
            num_layers=2,
            num_heads=2,
            hidden_size=16,
            max_seq_len=192,
            vocab_size=vocab.size,
            dropout=0.0,
            seed=seed,
        )
        params = init_encoder(config)
        matrix = embed_corpus(params, vocab, corpus, workers=1)
        model = train_logreg(matrix.values, matrix.labels, fingerprint=fingerprint(vocab, params))

        anomalies = [doc for doc in corpus.docs if doc.label == "anomaly"][:20]
        reports = [explain.token_ablation_scores(doc, vocab, params, model) for doc in anomalies]
        for report in reports:
            assert abs(sum(e.score for e in report.entries)) < 1e-9
        aggregate = explain.aggregate_scores(reports, top_k=24)
        return aggregate.tokens[0].token_id == encode(vocab, self.MARK)[0]

    def test_mark_is_a_single_token(self, shop_vocab):
        assert len(encode(shop_vocab, self.MARK)) == 1

    @pytest.mark.slow
    def test_mark_ranks_first_in_nearly_every_run(self, shop_vocab):
        hits = sum(self.recovered(shop_vocab, seed) for seed in range(20))
        assert hits >= 19


class TestAggregate:
    def test_equal_weight_sum(self):
        reports = [make_report("a", {"x": 0.5, "y": -0.5}), make_report("b", {"y": 0.25, "z": -0.25})]
        aggregate = explain.aggregate_scores(reports)
        assert [(e.token, e.score) for e in aggregate.tokens] == [("x", 0.5), ("y", -0.25), ("z", -0.25)]
        assert aggregate.weighting == "equal"

    def test_ties_broken_by_token(self):
        aggregate = explain.aggregate_scores([make_report("a", {"b": 0.0, "a": 0.0})])
        assert [e.token for e in aggregate.tokens] == ["a", "b"]

    def test_top_k(self):
        aggregate = explain.aggregate_scores([make_report("a", {"x": 1.0, "y": 0.0, "z": -1.0})], top_k=2)
        assert [e.token for e in aggregate.tokens] == ["x", "y"]
        assert aggregate.top_k == 2

    def test_tokens_sharing_a_display_string_stay_apart(self):
        # Raw byte 0x1b and a merged token spelling the text "\\x1b" render alike.
        raw_byte = make_report("a", {"\\x1b": 0.5, "q": -0.5}, token_ids={"\\x1b": 27})
        literal = make_report("b", {"\\x1b": -0.25, "q": 0.25}, token_ids={"\\x1b": 400})
        aggregate = explain.aggregate_scores([raw_byte, literal])
        assert [(e.token_id, e.score) for e in aggregate.tokens] == [
            (27, 0.5),
            (400, -0.25),
            (300 + ord("q"), -0.25),
        ]

    def test_empty(self):
        with pytest.raises(ValueError):
            explain.aggregate_scores([])


class TestNeighbors:
    @pytest.fixture(scope="class")
    def matrix(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(200, 3072)).astype(np.float32)
        values[10:14] = values[5]
        values[20] = values[7]
        ids = [f"doc-{i:03d}" for i in range(200)]
        labels = ["anomaly" if i % 3 == 0 else "normal" for i in range(200)]
        return EmbeddingMatrix(ids=ids, labels=labels, values=values)

    def brute_force(self, matrix, q, n):
        X = matrix.values.astype(np.float64)
        d = np.sqrt(((X - X[q]) ** 2).sum(axis=1))
        order = sorted((i for i in range(len(matrix)) if i != q), key=lambda i: (d[i], matrix.ids[i]))
        return [matrix.ids[i] for i in order[:n]], [d[i] for i in order[:n]]

    @pytest.mark.parametrize("q", [0, 5, 7, 13, 199])
    def test_matches_brute_force(self, matrix, q):
        result = explain.nearest_neighbors(matrix, matrix.ids[q], 25)
        ids, distances = self.brute_force(matrix, q, 25)
        assert [nb.doc_id for nb in result.neighbors] == ids
        np.testing.assert_allclose([nb.distance for nb in result.neighbors], distances, rtol=1e-9)

    def test_ties_ordered_by_id(self, matrix):
        result = explain.nearest_neighbors(matrix, "doc-012", 4)
        assert [nb.doc_id for nb in result.neighbors] == ["doc-005", "doc-010", "doc-011", "doc-013"]
        assert all(nb.distance == 0.0 for nb in result.neighbors)

    def test_include_self(self, matrix):
        result = explain.nearest_neighbors(matrix, "doc-007", 2, include_self=True)
        assert [nb.doc_id for nb in result.neighbors] == ["doc-007", "doc-020", result.neighbors[2].doc_id]
        assert result.neighbors[0].distance == 0.0
        assert explain.neighborhood_ids(matrix, "doc-007", 1) == ["doc-007", "doc-020"]

    def test_labels_carried(self, matrix):
        result = explain.nearest_neighbors(matrix, "doc-005", 1)
        assert result.neighbors[0].label == matrix.labels[10]

    def test_all_others(self, matrix):
        assert len(explain.nearest_neighbors(matrix, "doc-000", 199).neighbors) == 199
        with pytest.raises(NTooLarge):
            explain.nearest_neighbors(matrix, "doc-000", 200)

    def test_unknown_id(self, matrix):
        with pytest.raises(UnknownDocId):
            explain.nearest_neighbors(matrix, "nope", 1)


class TestSampling:
    def test_sample_anomalies(self):
        ids = [f"d{i}" for i in range(20)]
        labels = ["anomaly" if i % 2 else "normal" for i in range(20)]
        picked = explain.sample_anomaly_ids(ids, labels, 4, seed=1)
        assert picked == explain.sample_anomaly_ids(ids, labels, 4, seed=1)
        assert len(set(picked)) == 4
        assert all(labels[ids.index(i)] == "anomaly" for i in picked)
        with pytest.raises(NTooLarge):
            explain.sample_anomaly_ids(ids, labels, 11)


class TestRendering:
    @pytest.fixture()
    def scored(self, planted_vocab, planted_encoder, centroid_model):
        doc = HttpRequestDoc(id="r<1>", lines=["GET /a?q=1 HTTP/1.1", PLANTED])
        return doc, explain.token_ablation_scores(doc, planted_vocab, planted_encoder, centroid_model)

    def test_ansi_text_is_preserved(self, scored, planted_vocab):
        doc, report = scored
        rendered = explain.render_highlight(doc, report, planted_vocab, "ansi")
        assert ANSI.sub("", rendered) == "\n".join(doc.lines)
        assert "\x1b[48;2;" in rendered

    def test_html(self, scored, planted_vocab):
        doc, report = scored
        rendered = explain.render_highlight(doc, report, planted_vocab, "html")
        assert rendered.startswith('<pre class="reqvec-highlight" data-doc-id="r&lt;1&gt;">')
        assert "<span style=\"background-color: rgba(214, 39, 40, 1.000)\"" in rendered
        page = explain.html_page(rendered, "r<1>")
        assert "<title>r&lt;1&gt;</title>" in page

    def test_control_bytes_are_escaped(self, planted_vocab):
        doc = HttpRequestDoc(id="c", lines=["a\x1bb"])
        ids = encode(planted_vocab, doc.lines[0])
        report = AttributionReport(
            doc_id="c",
            model_kind="logreg",
            base_distance=0.0,
            entries=[
                AttributionEntry(token=str(t), token_id=t, occurrences=1, distance=0.0, scaled=0.0, score=0.0)
                for t in set(ids)
            ],
        )
        assert explain.render_highlight(doc, report, planted_vocab) == "a\\x1bb"

    def test_mismatched_doc(self, scored, planted_vocab):
        doc, report = scored
        with pytest.raises(MismatchedReport):
            explain.render_highlight(doc.model_copy(update={"id": "other"}), report, planted_vocab)
        with pytest.raises(MismatchedReport):
            explain.render_highlight(doc.with_lines(["zzz ~~~ |||"]), report, planted_vocab)

    def test_unknown_format(self, scored, planted_vocab):
        doc, report = scored
        with pytest.raises(ValueError):
            explain.render_highlight(doc, report, planted_vocab, "pdf")

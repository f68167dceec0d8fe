import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from pydantic import ValidationError
from sklearn.metrics import silhouette_score

from reqvec import project
from reqvec.embedder import EmbeddingMatrix
from reqvec.errors import DegenerateInput, PerplexityTooLarge
from reqvec.schemas import ProjectionConfig, ProjectionPoint

SVG = "{http://www.w3.org/2000/svg}"


def three_clusters(per=50, dim=64, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.zeros((3, dim))
    for k in range(3):
        centers[k, k] = 10.0
    X = np.vstack([rng.normal(size=(per, dim)) + c for c in centers])
    y = np.repeat(np.arange(3), per)
    return X, y


@pytest.fixture(scope="module")
def cluster_run():
    X, y = three_clusters()
    ids = [f"doc-{i:03d}" for i in range(len(X))]
    points, trace = project.tsne(X, ProjectionConfig(seed=1), doc_ids=ids)
    return X, y, ids, points, trace


class TestAffinities:
    def test_joint_probabilities(self):
        X = np.random.default_rng(0).normal(size=(120, 10))
        P = project.joint_probabilities(X, 30.0)
        np.testing.assert_allclose(P, P.T, atol=1e-15)
        assert abs(P.sum() - 1.0) < 1e-8
        assert (P >= 0).all()
        assert np.all(np.diag(P) == 0.0)

    def test_row_entropy_matches_perplexity(self):
        X = np.random.default_rng(1).normal(size=(100, 8))
        P, betas = project.binary_search_perplexity(project.squared_distances(X), 30.0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        for row in P:
            p = row[row > 0]
            assert abs(-(p * np.log(p)).sum() - np.log(30.0)) < 1e-4
        assert (betas > 0).all()

    def test_kl_of_identical_distributions_is_zero(self):
        P = np.full((3, 3), 1.0 / 6.0)
        np.fill_diagonal(P, 0.0)
        assert project.kl_divergence(P, P) == pytest.approx(0.0)


def test_initial_map_is_keyed_by_id():
    a = project.initial_map(["x", "y", "z"], seed=3, std=1e-4)
    b = project.initial_map(["z", "x"], seed=3, std=1e-4)
    np.testing.assert_array_equal(a[0], b[1])
    np.testing.assert_array_equal(a[2], b[0])
    assert np.abs(a).max() < 1e-3
    assert not np.array_equal(a, project.initial_map(["x", "y", "z"], seed=4, std=1e-4))


class TestTsne:
    def test_clusters_stay_apart(self, cluster_run):
        _, y, ids, points, _ = cluster_run
        assert [p.doc_id for p in points] == ids
        Y = np.asarray([[p.x, p.y] for p in points])
        assert silhouette_score(Y, y) > 0.5

    def test_deterministic(self, cluster_run):
        X, _, ids, points, trace = cluster_run
        again, trace_again = project.tsne(X, ProjectionConfig(seed=1), doc_ids=ids)
        assert again == points
        assert trace_again == trace

    def test_kl_drops_after_exaggeration(self, cluster_run):
        *_, trace = cluster_run
        config = ProjectionConfig()
        assert len(trace) == config.iterations
        assert trace[-1] < trace[config.exaggeration_iters - 1]
        assert all(np.isfinite(trace))

    def test_map_is_centered(self, cluster_run):
        *_, points, _ = cluster_run
        Y = np.asarray([[p.x, p.y] for p in points])
        np.testing.assert_allclose(Y.mean(axis=0), 0.0, atol=1e-8)

    def test_row_order_does_not_matter(self):
        X, _ = three_clusters(per=12, dim=6, seed=2)
        ids = [f"d{i}" for i in range(len(X))]
        config = ProjectionConfig(perplexity=5.0, iterations=60, pca_predim=None)
        points, _ = project.tsne(X, config, doc_ids=ids)
        perm = np.random.default_rng(0).permutation(len(X))
        shuffled, _ = project.tsne(X[perm], config, doc_ids=[ids[i] for i in perm])
        by_id = {p.doc_id: (p.x, p.y) for p in shuffled}
        for p in points:
            np.testing.assert_allclose((p.x, p.y), by_id[p.doc_id], atol=1e-6)

    def test_labels_carried(self):
        X, _ = three_clusters(per=6, dim=4)
        labels = ["anomaly"] * 6 + ["normal"] * 6 + [None] * 6
        points, _ = project.tsne(X, ProjectionConfig(perplexity=3.0, iterations=5), labels=labels)
        assert [p.label for p in points] == labels
        assert points[0].doc_id == "0"

    def test_perplexity_too_large(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        with pytest.raises(PerplexityTooLarge):
            project.tsne(X, ProjectionConfig(perplexity=3.0))
        with pytest.raises(PerplexityTooLarge):
            project.tsne(X[:3], ProjectionConfig(perplexity=1.5))

    def test_identical_rows(self):
        with pytest.raises(DegenerateInput):
            project.tsne(np.ones((20, 4)), ProjectionConfig(perplexity=5.0))

    def test_mismatched_ids(self):
        with pytest.raises(ValueError):
            project.tsne(np.eye(20), ProjectionConfig(perplexity=5.0), doc_ids=["a"])

    def test_perplexity_must_exceed_one(self):
        with pytest.raises(ValidationError):
            ProjectionConfig(perplexity=1.0)

    def test_project_embeddings(self):
        X, _ = three_clusters(per=10, dim=8)
        matrix = EmbeddingMatrix(
            ids=[f"r{i}" for i in range(30)], labels=["normal"] * 30, values=X
        )
        points, trace = project.project_embeddings(matrix, ProjectionConfig(perplexity=5.0, iterations=20))
        assert [p.doc_id for p in points] == matrix.ids
        assert len(trace) == 20


class TestOutput:
    def points(self):
        return [
            ProjectionPoint(doc_id="a", x=0.0, y=1.5, label="anomaly"),
            ProjectionPoint(doc_id="b", x=-2.0, y=0.25, label="normal"),
            ProjectionPoint(doc_id="c<", x=3.0, y=-1.0, label=None),
        ]

    def test_csv(self, tmp_path):
        path = tmp_path / "project" / "points.csv"
        project.emit_scatter(self.points(), path)
        with path.open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["id"] for r in rows] == ["a", "b", "c<"]
        assert float(rows[1]["x"]) == -2.0
        assert [r["label"] for r in rows] == ["anomaly", "normal", ""]

    def test_svg_parses(self, tmp_path):
        path = tmp_path / "points.svg"
        project.emit_scatter(self.points(), path, "svg", title="demo")
        root = ET.parse(path).getroot()
        assert root.tag == f"{SVG}svg"
        assert root.find(f"{SVG}title").text == "demo"
        dots = root.findall(f".//{SVG}g[@class='points']/{SVG}circle")
        assert [d.get("data-id") for d in dots] == ["a", "b", "c<"]
        assert [d.get("fill") for d in dots] == ["#d62728", "#1f77b4", "#7f7f7f"]
        for d in dots:
            assert 0.0 <= float(d.get("cx")) <= 640.0
            assert 0.0 <= float(d.get("cy")) <= 480.0
        legend = [t.text for t in root.findall(f".//{SVG}g[@class='legend']/{SVG}text")]
        assert legend == ["anomaly", "normal", "unlabeled"]

    def test_legend_lists_present_labels_only(self, tmp_path):
        path = tmp_path / "points.svg"
        project.emit_scatter(self.points()[1:2] * 1, path, "svg")
        root = ET.parse(path).getroot()
        legend = [t.text for t in root.findall(f".//{SVG}g[@class='legend']/{SVG}text")]
        assert legend == ["normal"]

    def test_rejects_bad_input(self, tmp_path):
        with pytest.raises(ValueError):
            project.emit_scatter([], tmp_path / "x.csv")
        with pytest.raises(ValueError):
            project.emit_scatter(self.points(), tmp_path / "x.png", "png")

    def test_kl_trace(self, tmp_path):
        path = tmp_path / "kl.csv"
        config = ProjectionConfig(exaggeration_iters=2)
        project.write_kl_trace([3.0, 2.0, 1.5], config, path)
        with path.open(encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["phase"] for r in rows] == ["exaggeration", "exaggeration", "free"]
        assert float(rows[2]["kl"]) == 1.5

    def test_meta(self, tmp_path):
        path = tmp_path / "meta.json"
        project.write_projection_meta(
            path, ProjectionConfig(), points=3, input_dim=64, final_kl=0.5, extra={"fingerprint": "f"}
        )
        meta = json.loads(path.read_text(encoding="utf-8"))
        assert meta["config"]["perplexity"] == 30.0
        assert meta["points"] == 3 and meta["input_dim"] == 64
        assert meta["fingerprint"] == "f"

"""
Exact t-SNE reduction of request embeddings to 2D, plus scatter output.

High-dimensional affinities are Gaussian with a per-point bandwidth found by
bisection on the target perplexity; low-dimensional affinities follow a
Student-t with one degree of freedom. The map is optimised by gradient
descent with momentum and per-coordinate gains on KL(P || Q).
"""

import csv
import hashlib
import json
import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.decomposition import PCA

from .embedder import EmbeddingMatrix
from .errors import DegenerateInput, IoError, PerplexityTooLarge
from .schemas import ProjectionConfig, ProjectionPoint

log = logging.getLogger("reqvec.project")

LABEL_COLORS = {"anomaly": "#d62728", "normal": "#1f77b4", None: "#7f7f7f"}
LABEL_NAMES = {"anomaly": "anomaly", "normal": "normal", None: "unlabeled"}

ENTROPY_TOL = 1e-5
BISECTION_STEPS = 50


def squared_distances(X: np.ndarray) -> np.ndarray:
    return squareform(pdist(X, metric="sqeuclidean"))


def binary_search_perplexity(
    distances: np.ndarray,
    perplexity: float,
    *,
    tol: float = ENTROPY_TOL,
    max_iter: int = BISECTION_STEPS,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Conditional affinities P(j|i) from squared distances, one Gaussian
    precision per row chosen so that the row entropy (natural log) equals
    log(perplexity). Returns (P, precisions); rows sum to 1, diagonal is 0.
    """
    n = distances.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    unconverged = 0

    for i in range(n):
        d = np.delete(distances[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_iter):
            p = np.exp(-d * beta)
            total = p.sum()
            entropy = np.log(total) + beta * np.dot(d, p) / total
            diff = entropy - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        else:
            unconverged += 1
        P[i, np.arange(n) != i] = p / total
        betas[i] = beta

    if unconverged:
        log.warning("Perplexity search did not converge for %d of %d points", unconverged, n)
    return P, betas


def joint_probabilities(X: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrised affinities (P(j|i) + P(i|j)) / 2n; sums to 1."""
    conditional, _ = binary_search_perplexity(squared_distances(X), perplexity)
    n = conditional.shape[0]
    return (conditional + conditional.T) / (2.0 * n)


def initial_map(doc_ids: Sequence[str], seed: int, std: float) -> np.ndarray:
    """One independent N(0, std^2) draw per document, keyed by seed and id."""
    Y = np.empty((len(doc_ids), 2))
    for row, doc_id in enumerate(doc_ids):
        key = hashlib.sha256(f"{seed}:{doc_id}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(key[:8], "little"))
        Y[row] = rng.normal(0.0, std, size=2)
    return Y


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def _student_t(Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num, num / num.sum()


def _prereduce(X: np.ndarray, config: ProjectionConfig) -> np.ndarray:
    n, dim = X.shape
    if config.pca_predim is None or dim <= config.pca_predim or n <= config.pca_predim:
        return X
    log.debug("PCA pre-reduction %d -> %d dims", dim, config.pca_predim)
    return PCA(n_components=config.pca_predim, svd_solver="full").fit_transform(X)


def tsne(
    X,
    config: Optional[ProjectionConfig] = None,
    doc_ids: Optional[Sequence[str]] = None,
    labels: Optional[Sequence[Optional[str]]] = None,
) -> Tuple[List[ProjectionPoint], List[float]]:
    """
    Embed the rows of X in 2D. Returns one point per row (input order) and
    the KL divergence measured against the unexaggerated P at every
    iteration.
    """
    config = config or ProjectionConfig()
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    doc_ids = [str(i) for i in range(n)] if doc_ids is None else list(doc_ids)
    labels = [None] * n if labels is None else list(labels)
    if len(doc_ids) != n or len(labels) != n:
        raise ValueError("doc_ids and labels must match the rows of X")

    if n < 4 or config.perplexity >= (n - 1) / 3.0:
        raise PerplexityTooLarge(
            f"perplexity {config.perplexity} needs more than {3 * config.perplexity + 1:.0f} "
            f"points, got {n}"
        )
    if np.all(X == X[0]):
        raise DegenerateInput("all input rows are identical")

    P = joint_probabilities(_prereduce(X, config), config.perplexity)
    Y = initial_map(doc_ids, config.seed, config.init_std)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace: List[float] = []

    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iters
        P_eff = P * config.early_exaggeration if exaggerate else P
        num, Q = _student_t(Y)
        trace.append(kl_divergence(P, Q))

        W = (P_eff - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)

        momentum = (
            config.initial_momentum if it < config.momentum_switch_iter else config.final_momentum
        )
        same_sign = (grad > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, config.min_gain, out=gains)
        update = momentum * update - config.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)

        if (it + 1) % 100 == 0:
            log.debug("t-SNE iteration %d: KL %.5f", it + 1, trace[-1])

    if not np.all(np.isfinite(Y)):
        raise DegenerateInput("t-SNE diverged to non-finite coordinates")
    log.info("t-SNE on %d points finished, KL %.4f", n, trace[-1])
    points = [
        ProjectionPoint(doc_id=doc_ids[i], x=float(Y[i, 0]), y=float(Y[i, 1]), label=labels[i])
        for i in range(n)
    ]
    return points, trace


def project_embeddings(
    matrix: EmbeddingMatrix, config: Optional[ProjectionConfig] = None
) -> Tuple[List[ProjectionPoint], List[float]]:
    return tsne(matrix.values, config, doc_ids=matrix.ids, labels=matrix.labels)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _write_csv(points: Sequence[ProjectionPoint], path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "x", "y", "label"])
        for p in points:
            writer.writerow([p.doc_id, repr(p.x), repr(p.y), p.label or ""])


def _svg_tree(points: Sequence[ProjectionPoint], title: str) -> ET.ElementTree:
    width, height, margin = 640, 480, 50
    xs = np.asarray([p.x for p in points])
    ys = np.asarray([p.y for p in points])
    x0, y0 = float(xs.min()), float(ys.min())
    xspan = float(xs.max()) - x0 or 1.0
    yspan = float(ys.max()) - y0 or 1.0
    plot_w, plot_h = width - 2 * margin, height - 2 * margin

    def sx(v: float) -> str:
        return f"{margin + (v - x0) / xspan * plot_w:.3f}"

    def sy(v: float) -> str:
        return f"{height - margin - (v - y0) / yspan * plot_h:.3f}"

    root = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )
    ET.SubElement(root, "title").text = title
    ET.SubElement(root, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")

    axes = ET.SubElement(root, "g", {"class": "axes", "stroke": "black", "stroke-width": "1"})
    bottom, left = str(height - margin), str(margin)
    ET.SubElement(axes, "line", x1=left, y1=bottom, x2=str(width - margin), y2=bottom)
    ET.SubElement(axes, "line", x1=left, y1=bottom, x2=left, y2=str(margin))
    ticks = ET.SubElement(root, "g", {"class": "ticks", "font-size": "10", "font-family": "sans-serif"})
    for value, anchor, x, y in (
        (x0, "start", margin, height - margin + 15),
        (x0 + xspan, "end", width - margin, height - margin + 15),
        (y0, "end", margin - 5, height - margin),
        (y0 + yspan, "end", margin - 5, margin + 4),
    ):
        ET.SubElement(ticks, "text", {"x": str(x), "y": str(y), "text-anchor": anchor}).text = f"{value:.2f}"

    dots = ET.SubElement(root, "g", {"class": "points", "fill-opacity": "0.8"})
    for p in points:
        ET.SubElement(
            dots,
            "circle",
            {"cx": sx(p.x), "cy": sy(p.y), "r": "3", "fill": LABEL_COLORS.get(p.label, LABEL_COLORS[None])},
            **{"data-id": p.doc_id},
        )

    legend = ET.SubElement(root, "g", {"class": "legend", "font-size": "12", "font-family": "sans-serif"})
    present = [k for k in ("anomaly", "normal", None) if any(p.label == k for p in points)]
    for row, key in enumerate(present):
        y = margin + 15 * row
        ET.SubElement(legend, "circle", cx=str(width - margin - 80), cy=str(y), r="4", fill=LABEL_COLORS[key])
        ET.SubElement(legend, "text", x=str(width - margin - 70), y=str(y + 4)).text = LABEL_NAMES[key]
    return ET.ElementTree(root)


def emit_scatter(
    points: Sequence[ProjectionPoint],
    path: Union[str, Path],
    format: str = "csv",
    *,
    title: str = "t-SNE projection",
) -> None:
    """Write points as CSV (id,x,y,label) or as an SVG scatter plot."""
    if not points:
        raise ValueError("no points to emit")
    if format not in ("csv", "svg"):
        raise ValueError(f"unknown format {format!r}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if format == "csv":
            _write_csv(points, path)
        else:
            _svg_tree(points, title).write(path, encoding="utf-8", xml_declaration=True)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_kl_trace(trace: Sequence[float], config: ProjectionConfig, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "kl", "phase"])
            for it, kl in enumerate(trace):
                phase = "exaggeration" if it < config.exaggeration_iters else "free"
                writer.writerow([it, repr(kl), phase])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_projection_meta(
    path: Union[str, Path],
    config: ProjectionConfig,
    *,
    points: int,
    input_dim: int,
    final_kl: float,
    extra: Optional[dict] = None,
) -> None:
    """Every setting that shaped the projection, next to its CSV/SVG."""
    meta = {
        "config": config.model_dump(),
        "points": points,
        "input_dim": input_dim,
        "final_kl": final_kl,
        "gradient": "exact",
        **(extra or {}),
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc

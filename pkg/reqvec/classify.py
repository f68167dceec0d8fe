"""
Classifiers over request embeddings: logistic regression, linear SVM and
random forest, plus scoring and JSON persistence.

Positive decision scores mean "anomaly" for every model kind.
"""

import json
import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.special import expit
from sklearn.preprocessing import StandardScaler

from .errors import DimensionMismatch, FormatError, IoError, SingleClass
from .schemas import (
    DecisionTreeModel,
    ForestConfig,
    ForestModel,
    LinearModel,
    LogRegConfig,
    PipelineConfig,
    Standardizer,
    SvmConfig,
)

log = logging.getLogger("reqvec.classify")

Model = Union[LinearModel, ForestModel]


def binary_labels(labels: Sequence) -> np.ndarray:
    """1 for anomaly, 0 otherwise; accepts label strings or 0/1 values."""
    values = list(labels)
    if values and isinstance(values[0], str):
        return np.array([1 if v == "anomaly" else 0 for v in values], dtype=np.int64)
    return np.asarray(values, dtype=np.int64)


def _check_training_data(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = binary_labels(y)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} samples but {y.shape[0]} labels")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise SingleClass("training data must contain both classes")
    return X, y


def _fit_scaler(X: np.ndarray, standardize: bool) -> Tuple[np.ndarray, Optional[Standardizer]]:
    if not standardize:
        return X, None
    scaler = StandardScaler().fit(X)
    return scaler.transform(X), Standardizer(
        mean=scaler.mean_.tolist(), scale=scaler.scale_.tolist()
    )


def train_logreg(
    X, y, config: Optional[LogRegConfig] = None, *, fingerprint: Optional[str] = None
) -> LinearModel:
    """
    Full-batch gradient descent on the mean logistic loss plus (l2/2)*|w|^2.
    Stops after max_iter steps or once the gradient norm drops below tol.
    """
    config = config or LogRegConfig()
    X, y = _check_training_data(X, y)
    Z, scaler = _fit_scaler(X, config.standardize)
    n, d = Z.shape

    w = np.zeros(d)
    b = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        residual = expit(Z @ w + b) - y
        grad_w = Z.T @ residual / n + config.l2 * w
        grad_b = float(residual.mean())
        if math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b) < config.tol:
            converged = True
            break
        w -= config.learning_rate * grad_w
        b -= config.learning_rate * grad_b

    if not converged:
        log.warning("Logistic regression stopped at max_iter=%d before tol", config.max_iter)
    log.info("Trained logreg on %d x %d (iterations=%d)", n, d, iterations)
    return LinearModel(
        kind="logreg",
        weights=w.tolist(),
        bias=b,
        scaler=scaler,
        iterations=iterations,
        converged=converged,
        config=config.model_dump(),
        fingerprint=fingerprint,
    )


def train_linear_svm(
    X, y, config: Optional[SvmConfig] = None, *, fingerprint: Optional[str] = None
) -> LinearModel:
    """
    Pegasos-style stochastic subgradient descent on
    lambda/2 |w|^2 + mean hinge loss, lambda = 1 / (C n).

    The bias is learned as the weight of a constant feature; sample order is a
    seeded permutation per epoch.
    """
    config = config or SvmConfig()
    X, y01 = _check_training_data(X, y)
    Z, scaler = _fit_scaler(X, config.standardize)
    n, d = Z.shape
    Za = np.hstack([Z, np.ones((n, 1))])
    ys = np.where(y01 == 1, 1.0, -1.0)
    lam = 1.0 / (config.C * n)
    radius = 1.0 / math.sqrt(lam)

    rng = np.random.default_rng(config.seed)
    w = np.zeros(d + 1)
    t = 0
    for _ in range(config.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violated = ys[i] * (Za[i] @ w) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * ys[i] * Za[i]
            norm = float(np.linalg.norm(w))
            if norm > radius:
                w *= radius / norm

    margins = ys * (Za @ w)
    hinge = float(np.maximum(0.0, 1.0 - margins).mean())
    log.info("Trained linear SVM on %d x %d (mean hinge %.4f)", n, d, hinge)
    return LinearModel(
        kind="linear_svm",
        weights=w[:d].tolist(),
        bias=float(w[d]),
        scaler=scaler,
        iterations=t,
        converged=True,
        config=config.model_dump(),
        fingerprint=fingerprint,
    )


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


def _resolve_max_features(max_features, d: int) -> int:
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    if max_features == "all":
        return d
    return max(1, min(int(max_features), d))


def _best_split(xs: np.ndarray, ys: np.ndarray) -> Tuple[float, float]:
    """(weighted gini, threshold) of the best cut on one feature; inf if none."""
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]
    n = xs.size
    cuts = np.nonzero(xs[:-1] < xs[1:])[0]
    if cuts.size == 0:
        return math.inf, 0.0
    pos_left = np.cumsum(ys)[cuts]
    n_left = cuts + 1.0
    n_right = n - n_left
    pos_right = ys.sum() - pos_left
    p_left = pos_left / n_left
    p_right = pos_right / n_right
    gini = (
        n_left * 2.0 * p_left * (1.0 - p_left) + n_right * 2.0 * p_right * (1.0 - p_right)
    ) / n
    best = int(np.argmin(gini))
    cut = cuts[best]
    threshold = (xs[cut] + xs[cut + 1]) / 2.0
    if threshold >= xs[cut + 1]:
        threshold = xs[cut]
    return float(gini[best]), float(threshold)


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    max_features: int,
    config: ForestConfig,
    rng: np.random.Generator,
) -> DecisionTreeModel:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[Tuple[float, float]] = []

    def new_node(idx: np.ndarray) -> int:
        pos = float(y[idx].mean())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append((1.0 - pos, pos))
        return len(feature) - 1

    stack = [(new_node(rows), rows, 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        pos = value[node][1]
        if (
            pos in (0.0, 1.0)
            or idx.size < config.min_samples_split
            or (config.max_depth is not None and depth >= config.max_depth)
        ):
            continue

        candidates = rng.choice(d, size=max_features, replace=False)
        best = (math.inf, 0, 0.0)
        for f in candidates:
            score, cut = _best_split(X[idx, f], y[idx])
            if score < best[0]:
                best = (score, int(f), cut)
        if not math.isfinite(best[0]):
            continue

        _, f, cut = best
        goes_left = X[idx, f] <= cut
        left_idx, right_idx = idx[goes_left], idx[~goes_left]
        feature[node] = f
        threshold[node] = cut
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        stack.append((right[node], right_idx, depth + 1))
        stack.append((left[node], left_idx, depth + 1))

    return DecisionTreeModel(
        feature=feature, threshold=threshold, left=left, right=right, value=value
    )


def _tree_proba(tree: DecisionTreeModel, X: np.ndarray) -> np.ndarray:
    """Anomaly-class leaf frequency for every row of X."""
    feature = np.asarray(tree.feature)
    threshold = np.asarray(tree.threshold)
    left = np.asarray(tree.left)
    right = np.asarray(tree.right)
    pos = np.asarray([v[1] for v in tree.value])

    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.nonzero(feature[node] >= 0)[0]
    while active.size:
        cur = node[active]
        go_left = X[active, feature[cur]] <= threshold[cur]
        node[active] = np.where(go_left, left[cur], right[cur])
        active = active[feature[node[active]] >= 0]
    return pos[node]


def train_random_forest(
    X, y, config: Optional[ForestConfig] = None, *, fingerprint: Optional[str] = None
) -> ForestModel:
    """Bootstrap-sampled Gini trees with per-split feature subsampling."""
    config = config or ForestConfig()
    X, y = _check_training_data(X, y)
    n, d = X.shape
    max_features = _resolve_max_features(config.max_features, d)
    rng = np.random.default_rng(config.seed)

    trees = []
    oob_sum = np.zeros(n)
    oob_count = np.zeros(n)
    for _ in range(config.num_trees):
        if config.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        tree = _grow_tree(X, y, rows, max_features, config, rng)
        trees.append(tree)
        if config.bootstrap:
            out = np.setdiff1d(np.arange(n), rows)
            if out.size:
                oob_sum[out] += _tree_proba(tree, X[out])
                oob_count[out] += 1

    oob_score = None
    seen = oob_count > 0
    if seen.any():
        predicted = (oob_sum[seen] / oob_count[seen]) > 0.5
        oob_score = float((predicted == (y[seen] == 1)).mean())
    log.info(
        "Trained forest of %d trees on %d x %d (max_features=%d, oob=%s)",
        config.num_trees,
        n,
        d,
        max_features,
        f"{oob_score:.4f}" if oob_score is not None else "n/a",
    )
    return ForestModel(
        trees=trees,
        num_features=d,
        max_features=max_features,
        oob_score=oob_score,
        config=config.model_dump(),
        fingerprint=fingerprint,
    )


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def standardize(model: LinearModel, X: np.ndarray) -> np.ndarray:
    if model.scaler is None:
        return X
    return (X - np.asarray(model.scaler.mean)) / np.asarray(model.scaler.scale)


def decision_scores(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"model expects dimension {model.dim}, got {X.shape[1]}")
    if isinstance(model, ForestModel):
        proba = np.mean([_tree_proba(tree, X) for tree in model.trees], axis=0)
        return proba - 0.5
    return standardize(model, X) @ np.asarray(model.weights) + model.bias


def decision_score(model: Model, x) -> float:
    """w.z + b for linear models, P(anomaly) - 0.5 for forests."""
    return float(decision_scores(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def predict(model: Model, X) -> np.ndarray:
    return (decision_scores(model, X) > 0).astype(np.int64)


TRAINERS: Dict[str, Callable[..., Model]] = {
    "logreg": train_logreg,
    "svm": train_linear_svm,
    "forest": train_random_forest,
}


def trainer_for(kind: str, pipeline: Optional[PipelineConfig] = None) -> Callable[..., Model]:
    """Trainer bound to the matching stage config of the pipeline."""
    pipeline = pipeline or PipelineConfig()
    configs = {"logreg": pipeline.logreg, "svm": pipeline.svm, "forest": pipeline.forest}
    if kind not in TRAINERS:
        raise ValueError(f"unknown model kind {kind!r}")
    fn = TRAINERS[kind]
    stage = configs[kind]

    def train(X, y, **kwargs) -> Model:
        return fn(X, y, stage, **kwargs)

    train.__name__ = f"train_{kind}"
    return train


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(model: Model, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(model.model_dump(), sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write model {path}: {exc}") from exc
    log.info("Saved %s model to %s", model.kind, path)


def load_model(path: Union[str, Path]) -> Model:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: invalid JSON") from exc
    try:
        if data.get("kind") == "forest":
            return ForestModel.model_validate(data)
        return LinearModel.model_validate(data)
    except (ValidationError, AttributeError) as exc:
        raise FormatError(f"{path}: not a classifier model ({exc})") from exc

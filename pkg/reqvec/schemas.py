#!/usr/bin/env python3
"""
Pydantic models for corpora, stage configurations and persisted reports.

Numeric containers that wrap numpy arrays (encoder parameters, embedding
matrices) live next to the code that owns them as dataclasses.
"""

from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import InvalidConfig

Label = Literal["normal", "anomaly", "unlabeled"]
Split = Literal["train", "inference"]


# ---------------------------------------------------------------------------
# Corpus models
# ---------------------------------------------------------------------------


class HttpRequestDoc(BaseModel):
    """One HTTP request as text lines: request line, headers, optional body."""

    id: str = Field(min_length=1)
    label: Label = "unlabeled"
    lines: List[str] = Field(min_length=1)
    source: str = ""

    model_config = ConfigDict(frozen=True, extra="forbid")

    @property
    def request_line(self) -> str:
        return self.lines[0]

    def with_lines(self, lines: List[str], source: Optional[str] = None) -> "HttpRequestDoc":
        return self.model_copy(
            update={"lines": list(lines), "source": self.source if source is None else source}
        )


class Corpus(BaseModel):
    docs: List[HttpRequestDoc] = Field(default_factory=list)
    split: Split = "inference"

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_invariants(self) -> "Corpus":
        seen = set()
        for doc in self.docs:
            if doc.id in seen:
                raise ValueError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)
            if self.split == "train" and doc.label == "anomaly":
                raise ValueError(
                    f"train split holds normal traffic only; {doc.id!r} is labelled anomaly"
                )
        return self

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def ids(self) -> List[str]:
        return [doc.id for doc in self.docs]

    @property
    def labels(self) -> List[str]:
        return [doc.label for doc in self.docs]

    def by_id(self) -> Dict[str, HttpRequestDoc]:
        return {doc.id: doc for doc in self.docs}


class NormalizationProfile(BaseModel):
    """Named, deterministic request transform plus its options."""

    name: str = "identity"
    host_pool: Tuple[str, ...] = ()
    seed: int = 0
    drop_headers: Tuple[str, ...] = ()
    require_text_payload: bool = False
    text_content_types: Tuple[str, ...] = (
        "application/json",
        "application/x-www-form-urlencoded",
        "application/xml",
        "text/",
    )

    model_config = ConfigDict(frozen=True)


class FoldAssignment(BaseModel):
    k: int = Field(ge=2)
    assignment: Dict[str, int]
    seed: int = 0

    @model_validator(mode="after")
    def _check_range(self) -> "FoldAssignment":
        for doc_id, fold in self.assignment.items():
            if not 0 <= fold < self.k:
                raise ValueError(f"fold {fold} of {doc_id!r} outside [0, {self.k})")
        return self

    def test_ids(self, fold: int) -> List[str]:
        return [doc_id for doc_id, f in self.assignment.items() if f == fold]

    def train_ids(self, fold: int) -> List[str]:
        return [doc_id for doc_id, f in self.assignment.items() if f != fold]


class SyntheticSpec(BaseModel):
    normal: int = Field(default=100, ge=0)
    anomaly: int = Field(default=0, ge=0)
    seed: int = 0
    split: Split = "inference"
    id_prefix: str = "syn"
    # When set, anomalies are normal requests carrying only this token.
    planted_token: Optional[str] = None
    families: Tuple[str, ...] = ("sqli", "xss", "traversal", "ssi", "crlf")

    @model_validator(mode="after")
    def _check_sizes(self) -> "SyntheticSpec":
        if self.normal + self.anomaly <= 0:
            raise ValueError("synthetic corpus needs at least one document")
        if self.split == "train" and self.anomaly:
            raise ValueError("train split cannot contain anomalies")
        return self


# ---------------------------------------------------------------------------
# Stage configurations
# ---------------------------------------------------------------------------


class TokenizerConfig(BaseModel):
    vocab_size: int = 5000
    train_only: bool = False
    seed: int = 0


class EncoderConfig(BaseModel):
    """Transformer encoder hyperparameters (defaults: 6 layers, 12 heads, H=768)."""

    num_layers: int = 6
    num_heads: int = 12
    hidden_size: int = 768
    ffn_size: Optional[int] = None
    max_seq_len: int = 512
    vocab_size: int = 5000
    dropout: float = 0.1
    mask_rate: float = 0.15
    tie_head: bool = True
    layer_norm_eps: float = 1e-12
    seed: int = 0

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check(self) -> "EncoderConfig":
        if self.num_layers < 1 or self.num_heads < 1 or self.hidden_size < 1:
            raise InvalidConfig("layers, heads and hidden size must be positive")
        if self.hidden_size % self.num_heads:
            raise InvalidConfig(
                f"hidden size {self.hidden_size} not divisible by {self.num_heads} heads"
            )
        if self.max_seq_len < 2:
            raise InvalidConfig("max_seq_len must be at least 2 (BOS + EOS)")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout {self.dropout} outside [0, 1)")
        if not 0.0 < self.mask_rate < 1.0:
            raise InvalidConfig(f"mask_rate {self.mask_rate} outside (0, 1)")
        if self.ffn_size is not None and self.ffn_size < 1:
            raise InvalidConfig("ffn_size must be positive")
        if self.vocab_size < 5:
            raise InvalidConfig("vocab_size too small")
        return self

    @property
    def ffn(self) -> int:
        return self.ffn_size or 4 * self.hidden_size

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


class TrainConfig(BaseModel):
    """MLM training schedule (defaults: 10 epochs, batch 32)."""

    epochs: int = Field(default=10, ge=0)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-4, gt=0)
    warmup_fraction: float = Field(default=0.06, ge=0, le=1)
    weight_decay: float = Field(default=0.01, ge=0)
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-6
    dynamic_masking: bool = True
    seed: int = 0


class LossTrace(BaseModel):
    step_losses: List[float] = Field(default_factory=list)
    epoch_perplexity: List[float] = Field(default_factory=list)
    initial_perplexity: Optional[float] = None


class LogRegConfig(BaseModel):
    max_iter: int = Field(default=500, ge=1)
    learning_rate: float = Field(default=0.5, gt=0)
    l2: float = Field(default=1e-4, ge=0)
    tol: float = Field(default=1e-6, ge=0)
    standardize: bool = True


class SvmConfig(BaseModel):
    C: float = Field(default=1.0, gt=0)
    epochs: int = Field(default=30, ge=1)
    seed: int = 0
    standardize: bool = True


class ForestConfig(BaseModel):
    num_trees: int = Field(default=100, ge=1)
    max_features: Union[Literal["sqrt", "all"], int] = "sqrt"
    max_depth: Optional[int] = Field(default=None, ge=1)
    min_samples_split: int = Field(default=2, ge=2)
    bootstrap: bool = True
    seed: int = 0


class ProjectionConfig(BaseModel):
    perplexity: float = 30.0
    iterations: int = Field(default=1000, ge=1)
    early_exaggeration: float = Field(default=12.0, gt=0)
    exaggeration_iters: int = Field(default=250, ge=0)
    learning_rate: float = Field(default=200.0, gt=0)
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    min_gain: float = 0.01
    init_std: float = 1e-4
    pca_predim: Optional[int] = Field(default=50, ge=2)
    seed: int = 0

    @field_validator("perplexity")
    @classmethod
    def _check_perplexity(cls, value: float) -> float:
        if value <= 1.0:
            raise ValueError("perplexity must exceed 1")
        return value


class PipelineConfig(BaseModel):
    """All stage configs plus the global seed; loadable from a JSON file."""

    seed: int = 0
    tokenizer: TokenizerConfig = Field(default_factory=TokenizerConfig)
    encoder: Dict[str, Any] = Field(default_factory=dict)
    train: TrainConfig = Field(default_factory=TrainConfig)
    logreg: LogRegConfig = Field(default_factory=LogRegConfig)
    svm: SvmConfig = Field(default_factory=SvmConfig)
    forest: ForestConfig = Field(default_factory=ForestConfig)
    projection: ProjectionConfig = Field(default_factory=ProjectionConfig)

    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Classifier models and evaluation reports
# ---------------------------------------------------------------------------


class Standardizer(BaseModel):
    mean: List[float]
    scale: List[float]


class LinearModel(BaseModel):
    kind: Literal["logreg", "linear_svm"]
    weights: List[float]
    bias: float
    scaler: Optional[Standardizer] = None
    iterations: int = 0
    converged: bool = False
    config: Dict[str, Any] = Field(default_factory=dict)
    fingerprint: Optional[str] = None

    @property
    def dim(self) -> int:
        return len(self.weights)

    def scaled(self, factor: float) -> "LinearModel":
        return self.model_copy(
            update={"weights": [w * factor for w in self.weights], "bias": self.bias * factor}
        )


class DecisionTreeModel(BaseModel):
    """Flat array encoding; leaves have feature == -1 and left == right == -1."""

    feature: List[int]
    threshold: List[float]
    left: List[int]
    right: List[int]
    value: List[Tuple[float, float]]

    @model_validator(mode="after")
    def _check_nodes(self) -> "DecisionTreeModel":
        n = len(self.feature)
        if not (len(self.threshold) == len(self.left) == len(self.right) == len(self.value) == n):
            raise ValueError("tree arrays differ in length")
        for i in range(n):
            if (self.left[i] == -1) != (self.right[i] == -1):
                raise ValueError(f"node {i} has exactly one child")
        return self


class ForestModel(BaseModel):
    kind: Literal["forest"] = "forest"
    trees: List[DecisionTreeModel]
    num_features: int
    max_features: int
    oob_score: Optional[float] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    fingerprint: Optional[str] = None

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @property
    def dim(self) -> int:
        return self.num_features


class RocPoint(BaseModel):
    fpr: float
    tpr: float
    threshold: float


class FoldMetrics(BaseModel):
    fold: int = 0
    fpr90: float
    fpr99: float
    f1: float
    mcc: float
    roc_auc: float
    threshold: float
    roc: List[RocPoint] = Field(default_factory=list)

    @field_validator("mcc")
    @classmethod
    def _check_mcc(cls, value: float) -> float:
        if not -1.0 - 1e-12 <= value <= 1.0 + 1e-12:
            raise ValueError(f"mcc {value} outside [-1, 1]")
        return value


class MetricSummary(BaseModel):
    mean: float
    std: float


class EvalReport(BaseModel):
    model: str = ""
    folds: List[FoldMetrics]
    fpr90: MetricSummary
    fpr99: MetricSummary
    f1: MetricSummary
    mcc: MetricSummary
    roc_auc: MetricSummary
    threshold_note: str = ""
    mean_roc: List[Tuple[float, float]] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)

    @property
    def roc(self) -> List[RocPoint]:
        return self.folds[0].roc if len(self.folds) == 1 else []


# ---------------------------------------------------------------------------
# Explanation / neighbour / projection outputs
# ---------------------------------------------------------------------------


class AttributionEntry(BaseModel):
    token: str
    token_id: int
    occurrences: int
    distance: float
    scaled: float
    score: float


class AttributionReport(BaseModel):
    doc_id: str
    model_kind: str
    base_distance: float
    entries: List[AttributionEntry]
    degenerate: bool = False


class AggregateEntry(BaseModel):
    token: str
    token_id: int
    score: float


class AggregateReport(BaseModel):
    doc_ids: List[str]
    weighting: Literal["equal"] = "equal"
    top_k: Optional[int] = None
    tokens: List[AggregateEntry]


class Neighbor(BaseModel):
    doc_id: str
    distance: float
    label: Optional[str] = None


class NeighborList(BaseModel):
    query_id: str
    include_self: bool = False
    neighbors: List[Neighbor]


class ProjectionPoint(BaseModel):
    doc_id: str
    x: float
    y: float
    label: Optional[str] = None

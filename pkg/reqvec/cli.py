"""
Command-line orchestration of the reqvec pipeline.

Every stage is a subcommand reading and writing artifacts under the artifact
directory:

- import / synth: corpus/{train,inference}.jsonl
- train-tokenizer: tokenizer.vocab
- train-lm: encoder.bin, encoder-trace.json
- embed: embeddings-<split>.bin
- train-clf: clf-<model>.json
- eval: eval/report.txt, eval/report.json, eval/roc.csv
- explain / neighbors / project: explain/, neighbors/, project/
- status: configuration and artifact inventory
"""

import functools
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
from pydantic import BaseModel, ValidationError

from . import classify, embedder, encoder, explain, metrics, project, tokenizer
from . import config as config_module
from . import corpus as corpus_io
from .config import Settings
from .errors import FormatError, IoError, ReqvecError, UnknownDocId
from .schemas import (
    Corpus,
    EncoderConfig,
    HttpRequestDoc,
    NormalizationProfile,
    PipelineConfig,
    SyntheticSpec,
    TokenizerConfig,
)
from .synthetic import generate_synthetic_corpus

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
log = logging.getLogger("reqvec.cli")

SPLITS = ("train", "inference")
MODEL_KINDS = ("logreg", "svm", "forest")


class CommandError(click.ClickException):
    """A library error reported with the exit code of its family."""

    def __init__(self, error: ReqvecError) -> None:
        super().__init__(str(error))
        self.exit_code = error.exit_code


@dataclass
class Workspace:
    artifact_dir: Path
    pipeline: PipelineConfig
    seed: int
    debug: bool = False

    def path(self, *parts: str) -> Path:
        return self.artifact_dir.joinpath(*parts)

    def corpus_path(self, split: str) -> Path:
        return self.path("corpus", f"{split}.jsonl")

    @property
    def vocab_path(self) -> Path:
        return self.path("tokenizer.vocab")

    @property
    def encoder_path(self) -> Path:
        return self.path("encoder.bin")

    def embeddings_path(self, split: str) -> Path:
        return self.path(f"embeddings-{split}.bin")

    def model_path(self, kind: str) -> Path:
        return self.path(f"clf-{kind}.json")

    def stamp(self, **extra: Any) -> Dict[str, Any]:
        """Provenance carried by every artifact a command writes."""
        return {"seed": self.seed, **extra}

    def seeded_pipeline(self) -> PipelineConfig:
        p = self.pipeline
        return p.model_copy(
            update={
                "seed": self.seed,
                "svm": p.svm.model_copy(update={"seed": self.seed}),
                "forest": p.forest.model_copy(update={"seed": self.seed}),
                "projection": p.projection.model_copy(update={"seed": self.seed}),
            }
        )


def load_pipeline_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read pipeline config {path}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: invalid JSON") from exc
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise FormatError(f"{path}: invalid pipeline config: {exc}") from exc


def _override(model: BaseModel, **values: Any) -> Any:
    """Re-validated copy of a stage config with the given non-None flag values."""
    merged = {**model.model_dump(), **{k: v for k, v in values.items() if v is not None}}
    return type(model).model_validate(merged)


def _safe_name(doc_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", doc_id)


def _write_json(path: Path, data: Any) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _as_split(docs: Sequence[HttpRequestDoc], split: str) -> Corpus:
    if split == "train":
        kept = [doc for doc in docs if doc.label != "anomaly"]
        if len(kept) < len(docs):
            log.info("Train split keeps normal traffic only: dropped %d anomalies", len(docs) - len(kept))
        docs = kept
    return Corpus(docs=list(docs), split=split)


def reports_errors(fn):
    """Turn library errors into click exceptions with family exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ReqvecError as exc:
            log.debug("Command failed", exc_info=True)
            raise CommandError(exc) from exc
        except ValidationError as exc:
            raise click.UsageError(f"invalid configuration: {exc}") from exc

    return wrapper


def seed_option(fn):
    return click.option(
        "--seed",
        "seed_override",
        type=int,
        default=None,
        help="Seed for this command (overrides the global --seed)",
    )(fn)


def split_option(default: str = "inference"):
    return click.option(
        "--split", type=click.Choice(SPLITS), default=default, show_default=True, help="Corpus split"
    )


def _workspace(ctx: click.Context, seed_override: Optional[int]) -> Workspace:
    ws: Workspace = ctx.obj
    if seed_override is not None:
        ws = Workspace(ws.artifact_dir, ws.pipeline, seed_override, ws.debug)
    return ws


# ---------------------------------------------------------------------------
# Group
# ---------------------------------------------------------------------------


@click.group()
@click.option(
    "--config-file",
    type=click.Path(exists=True, dir_okay=False),
    help="Path to environment file with REQVEC_* settings",
)
@click.option(
    "--pipeline-config",
    type=click.Path(exists=True, dir_okay=False),
    help="JSON file with stage configurations; command flags override it",
)
@click.option(
    "--artifact-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Artifact directory (overrides REQVEC_ARTIFACT_DIR)",
)
@click.option("--seed", type=int, default=None, help="Global seed")
@click.option("--debug", is_flag=True, help="Enable debug logging")
@click.pass_context
def cli(
    ctx: click.Context,
    config_file: Optional[str],
    pipeline_config: Optional[str],
    artifact_dir: Optional[str],
    seed: Optional[int],
    debug: bool,
) -> None:
    """HTTP request embeddings, anomaly classifiers and their explanations."""
    if debug:
        logging.getLogger().setLevel(logging.DEBUG)
        log.debug("Debug mode enabled")

    if config_file:
        log.info("Loading configuration from: %s", config_file)
        from pydantic_settings import SettingsConfigDict

        class LocalSettings(Settings):
            model_config = SettingsConfigDict(
                env_file=config_file,
                env_file_encoding="utf-8",
                extra="ignore",
            )

        config_module.settings = LocalSettings()
        log.debug("Configuration loaded from custom file")

    settings = config_module.settings
    if not debug:
        logging.getLogger().setLevel(settings.log_level.upper())

    try:
        pipeline = (
            load_pipeline_config(pipeline_config)
            if pipeline_config
            else PipelineConfig(tokenizer=TokenizerConfig(vocab_size=settings.vocab_size))
        )
    except ReqvecError as exc:
        raise CommandError(exc) from exc

    if seed is None:
        seed = pipeline.seed if pipeline_config else settings.seed
    ctx.obj = Workspace(
        artifact_dir=Path(artifact_dir) if artifact_dir else settings.artifact_dir,
        pipeline=pipeline,
        seed=seed,
        debug=debug,
    )
    log.debug("Artifact dir %s, seed %d", ctx.obj.artifact_dir, seed)


# ---------------------------------------------------------------------------
# Corpus stages
# ---------------------------------------------------------------------------


def _echo_stats(corpus: Corpus, path: Path) -> None:
    stats = corpus_io.corpus_stats(corpus)
    click.echo(
        f"{path}: {stats['docs']} docs ({stats['normal']} normal, {stats['anomaly']} anomaly, "
        f"{stats['unlabeled']} unlabeled), {stats['mean_lines']:.2f} lines/doc"
    )


@cli.command(name="import")
@click.argument("source", type=click.Path(exists=True))
@click.option(
    "--format",
    "source_format",
    type=click.Choice(["rawdir", "rawfile", "jsonl"]),
    default="rawdir",
    show_default=True,
    help="Directory of raw dumps, a single raw dump, or a JSONL corpus",
)
@click.option(
    "--profile",
    type=click.Choice(["csic", "ids2018", "ump", "identity"]),
    default="identity",
    show_default=True,
)
@split_option()
@click.option("--label", type=click.Choice(["normal", "anomaly"]), default=None, help="Label for a raw dump")
@click.option("--mode", type=click.Choice(["full", "lines"]), default="full", show_default=True)
@click.option("--require-text-payload", is_flag=True, help="ids2018: drop bodies without a text Content-Type")
@seed_option
@click.pass_context
@reports_errors
def import_cmd(
    ctx: click.Context,
    source: str,
    source_format: str,
    profile: str,
    split: str,
    label: Optional[str],
    mode: str,
    require_text_payload: bool,
    seed_override: Optional[int],
) -> None:
    """Import raw requests into a normalized JSONL corpus."""
    ws = _workspace(ctx, seed_override)
    if source_format == "rawfile":
        docs = corpus_io.import_raw_dump(source, label, mode=mode)
    elif source_format == "rawdir":
        docs = corpus_io.load_corpus(source, "rawdir", mode=mode).docs
    else:
        docs = corpus_io.load_corpus(source, "jsonl").docs

    normalization = NormalizationProfile(
        name=profile,
        host_pool=config_module.settings.ids2018_host_pool,
        seed=ws.seed,
        require_text_payload=require_text_payload,
    )
    normalized = corpus_io.normalize_corpus(_as_split(docs, split), normalization)
    path = ws.corpus_path(split)
    corpus_io.save_corpus(
        normalized, path, meta=ws.stamp(profile=profile, source=Path(source).name, mode=mode)
    )
    _echo_stats(normalized, path)


@cli.command()
@split_option()
@click.option("--normal", type=click.IntRange(min=0), default=500, show_default=True)
@click.option("--anomaly", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--planted-token", default=None, help="Anomalies differ from normal traffic by this token only")
@click.option("--families", default=None, help="Comma-separated payload families")
@seed_option
@click.pass_context
@reports_errors
def synth(
    ctx: click.Context,
    split: str,
    normal: int,
    anomaly: int,
    planted_token: Optional[str],
    families: Optional[str],
    seed_override: Optional[int],
) -> None:
    """Generate a synthetic CSIC-like corpus."""
    ws = _workspace(ctx, seed_override)
    values: Dict[str, Any] = {
        "normal": normal,
        "anomaly": anomaly,
        # train and inference draws must not repeat each other
        "seed": ws.seed * 2 + (split == "inference"),
        "split": split,
        "planted_token": planted_token,
    }
    if families:
        values["families"] = tuple(f.strip() for f in families.split(",") if f.strip())
    spec = SyntheticSpec(**values)
    try:
        generated = generate_synthetic_corpus(spec)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--families") from exc
    path = ws.corpus_path(split)
    corpus_io.save_corpus(generated, path, meta=ws.stamp(synthetic=spec.model_dump()))
    _echo_stats(generated, path)


# ---------------------------------------------------------------------------
# Tokenizer and language model
# ---------------------------------------------------------------------------


def _load_split(ws: Workspace, split: str) -> Corpus:
    return corpus_io.load_corpus(ws.corpus_path(split))


@cli.command(name="train-tokenizer")
@click.option("--vocab-size", type=click.IntRange(min=261), default=None, help="Target vocabulary size")
@click.option("--train-only", is_flag=True, help="Learn merges from the train split only")
@seed_option
@click.pass_context
@reports_errors
def train_tokenizer(
    ctx: click.Context, vocab_size: Optional[int], train_only: bool, seed_override: Optional[int]
) -> None:
    """Learn the byte-level BPE vocabulary."""
    ws = _workspace(ctx, seed_override)
    cfg = _override(ws.pipeline.tokenizer, vocab_size=vocab_size, seed=ws.seed)
    train_only = train_only or cfg.train_only

    corpora = [_load_split(ws, "train")]
    if ws.corpus_path("inference").exists():
        corpora.append(_load_split(ws, "inference"))
    vocab = tokenizer.train_bbpe(corpora, cfg.vocab_size, cfg.seed, train_only=train_only)
    tokenizer.save_vocab(vocab, ws.vocab_path)
    click.echo(f"{ws.vocab_path}: {vocab.size} tokens ({len(vocab.merges)} merges)")


@cli.command(name="train-lm")
@click.option("--epochs", type=click.IntRange(min=0), default=None)
@click.option("--batch-size", type=click.IntRange(min=1), default=None)
@click.option("--mask-rate", type=float, default=None)
@click.option("--layers", type=int, default=None)
@click.option("--heads", type=int, default=None)
@click.option("--hidden", type=int, default=None)
@click.option("--seq-len", type=int, default=None)
@click.option("--ffn", type=int, default=None, help="FFN width (default 4 x hidden)")
@click.option("--dropout", type=float, default=None)
@click.option("--lr", type=float, default=None, help="Peak learning rate")
@seed_option
@click.pass_context
@reports_errors
def train_lm(
    ctx: click.Context,
    epochs: Optional[int],
    batch_size: Optional[int],
    mask_rate: Optional[float],
    layers: Optional[int],
    heads: Optional[int],
    hidden: Optional[int],
    seq_len: Optional[int],
    ffn: Optional[int],
    dropout: Optional[float],
    lr: Optional[float],
    seed_override: Optional[int],
) -> None:
    """Pretrain the transformer encoder with masked-token prediction."""
    ws = _workspace(ctx, seed_override)
    vocab = tokenizer.load_vocab(ws.vocab_path)
    flags = {
        "num_layers": layers,
        "num_heads": heads,
        "hidden_size": hidden,
        "max_seq_len": seq_len,
        "ffn_size": ffn,
        "dropout": dropout,
        "mask_rate": mask_rate,
    }
    config = EncoderConfig(
        **{
            **ws.pipeline.encoder,
            **{k: v for k, v in flags.items() if v is not None},
            "vocab_size": vocab.size,
            "seed": ws.seed,
        }
    )
    train_config = _override(
        ws.pipeline.train, epochs=epochs, batch_size=batch_size, learning_rate=lr, seed=ws.seed
    )

    sequences = encoder.corpus_sequences(vocab, _load_split(ws, "train"), config.max_seq_len)
    params, trace = encoder.train_mlm(encoder.init_encoder(config), sequences, train_config)
    encoder.save_params(
        params,
        ws.encoder_path,
        meta=ws.stamp(
            train=train_config.model_dump(),
            vocab=tokenizer.vocab_fingerprint(vocab),
            sequences=len(sequences),
        ),
    )
    _write_json(ws.path("encoder-trace.json"), trace.model_dump())
    if trace.epoch_perplexity:
        click.echo(
            f"{ws.encoder_path}: masked-token perplexity "
            f"{trace.initial_perplexity:.3f} -> {trace.epoch_perplexity[-1]:.3f}"
        )
    else:
        click.echo(f"{ws.encoder_path}: untrained encoder saved")


def _load_model_stack(ws: Workspace):
    vocab = tokenizer.load_vocab(ws.vocab_path)
    params = encoder.load_params(ws.encoder_path)
    return vocab, params, embedder.fingerprint(vocab, params)


# ---------------------------------------------------------------------------
# Embeddings, classifiers, evaluation
# ---------------------------------------------------------------------------


POOLING_CHOICES = click.Choice(["mean", "first", "mean_tokens", "first_token"])


@cli.command()
@split_option()
@click.option("--pooling", type=POOLING_CHOICES, default=None, help="Token pooling within a line")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Embedding threads")
@click.option("--strict", is_flag=True, help="Fail when the encoder has fewer than 4 layers")
@seed_option
@click.pass_context
@reports_errors
def embed(
    ctx: click.Context,
    split: str,
    pooling: Optional[str],
    workers: Optional[int],
    strict: bool,
    seed_override: Optional[int],
) -> None:
    """Embed every request of a corpus split."""
    ws = _workspace(ctx, seed_override)
    vocab, params, _ = _load_model_stack(ws)
    pooling = embedder.resolve_pooling(pooling or config_module.settings.pooling)
    matrix = embedder.embed_corpus(
        params, vocab, _load_split(ws, split), pooling, strict=strict, workers=workers
    )
    path = ws.embeddings_path(split)
    embedder.save_embeddings(
        matrix, path, config=ws.stamp(split=split, pooling=pooling, encoder=params.config.model_dump())
    )
    click.echo(f"{path}: {len(matrix)} x {matrix.dim} ({pooling})")


@cli.command(name="train-clf")
@click.option("--model", "kind", type=click.Choice(MODEL_KINDS), default="logreg", show_default=True)
@split_option()
@seed_option
@click.pass_context
@reports_errors
def train_clf(ctx: click.Context, kind: str, split: str, seed_override: Optional[int]) -> None:
    """Train a classifier on all embeddings of a split."""
    ws = _workspace(ctx, seed_override)
    _, _, fp = _load_model_stack(ws)
    matrix = embedder.load_embeddings(ws.embeddings_path(split), expected_fingerprint=fp)
    trainer = classify.trainer_for(kind, ws.seeded_pipeline())
    model = trainer(matrix.values, matrix.labels, fingerprint=fp)
    classify.save_model(model, ws.model_path(kind))
    click.echo(f"{ws.model_path(kind)}: {model.kind} on {len(matrix)} documents")


@cli.command(name="eval")
@click.option("--folds", type=click.IntRange(min=2), default=5, show_default=True)
@click.option(
    "--model",
    "kinds",
    type=click.Choice(MODEL_KINDS),
    multiple=True,
    help="Classifier(s) to evaluate (default: all)",
)
@split_option()
@seed_option
@click.pass_context
@reports_errors
def eval_cmd(
    ctx: click.Context, folds: int, kinds: Sequence[str], split: str, seed_override: Optional[int]
) -> None:
    """Stratified k-fold evaluation: FPR90, FPR99, F1, MCC per classifier."""
    ws = _workspace(ctx, seed_override)
    matrix = embedder.load_embeddings(ws.embeddings_path(split))
    labeled = [i for i, label in zip(matrix.ids, matrix.labels) if label in ("normal", "anomaly")]
    if len(labeled) < len(matrix):
        log.info("Evaluating %d labeled of %d documents", len(labeled), len(matrix))
        matrix = matrix.select(labeled)

    pipeline = ws.seeded_pipeline()
    assignment = corpus_io.split_stratified_kfold(matrix.labels, folds, ws.seed, ids=matrix.ids)
    reports = []
    for kind in kinds or MODEL_KINDS:
        stage = {"logreg": pipeline.logreg, "svm": pipeline.svm, "forest": pipeline.forest}[kind]
        reports.append(
            metrics.evaluate_cv(
                matrix.values,
                matrix.labels,
                classify.trainer_for(kind, pipeline),
                assignment,
                matrix.ids,
                model=kind,
                config=ws.stamp(folds=folds, split=split, classifier=stage.model_dump(), embeddings=matrix.fingerprint),
            )
        )

    table = metrics.render_table(reports)
    explain.write_text(ws.path("eval", "report.txt"), table)
    metrics.save_reports(reports, ws.path("eval", "report.json"))
    metrics.write_roc_csv(reports, ws.path("eval", "roc.csv"))
    click.echo(table, nl=False)


# ---------------------------------------------------------------------------
# Interpretability and visualisation
# ---------------------------------------------------------------------------


@cli.command(name="explain")
@click.option("--doc-id", "doc_ids", multiple=True, help="Document(s) to explain")
@click.option("--neighbors-of", default=None, help="Explain this document and its nearest neighbours")
@click.option("--n", "n", type=click.IntRange(min=0), default=5, show_default=True, help="Neighbour count")
@click.option("--sample", type=click.IntRange(min=1), default=None, help="Explain N random anomalies")
@click.option("--top-k", type=click.IntRange(min=1), default=24, show_default=True)
@click.option("--format", "output_format", type=click.Choice(["ansi", "html"]), default="ansi", show_default=True)
@click.option("--model", "kind", type=click.Choice(["logreg", "svm"]), default="logreg", show_default=True)
@click.option("--pooling", type=POOLING_CHOICES, default=None)
@click.option("--strict", is_flag=True, help="Fail on degenerate attribution scales")
@split_option()
@seed_option
@click.pass_context
@reports_errors
def explain_cmd(
    ctx: click.Context,
    doc_ids: Sequence[str],
    neighbors_of: Optional[str],
    n: int,
    sample: Optional[int],
    top_k: int,
    output_format: str,
    kind: str,
    pooling: Optional[str],
    strict: bool,
    split: str,
    seed_override: Optional[int],
) -> None:
    """Token-ablation attribution, highlighting and score aggregation."""
    ws = _workspace(ctx, seed_override)
    vocab, params, fp = _load_model_stack(ws)
    model = classify.load_model(ws.model_path(kind))
    corpus = _load_split(ws, split)
    pooling = embedder.resolve_pooling(pooling or config_module.settings.pooling)

    selected: List[str] = list(doc_ids)
    if neighbors_of:
        matrix = embedder.load_embeddings(ws.embeddings_path(split), expected_fingerprint=fp)
        selected.extend(explain.neighborhood_ids(matrix, neighbors_of, n))
    if sample:
        selected.extend(explain.sample_anomaly_ids(corpus.ids, corpus.labels, sample, ws.seed))
    selected = list(dict.fromkeys(selected))
    if not selected:
        raise click.UsageError("give --doc-id, --neighbors-of or --sample")

    docs = {doc.id: doc for doc in corpus.docs}
    reports = []
    for doc_id in selected:
        if doc_id not in docs:
            raise UnknownDocId(f"unknown document id {doc_id!r} in {ws.corpus_path(split)}")
        doc = docs[doc_id]
        report = explain.token_ablation_scores(
            doc,
            vocab,
            params,
            model,
            pooling,
            strict=strict,
            workers=config_module.settings.workers,
        )
        reports.append(report)
        name = _safe_name(doc_id)
        _write_json(ws.path("explain", f"{name}.json"), report.model_dump())
        rendered = explain.render_highlight(doc, report, vocab, output_format)
        if output_format == "html":
            explain.write_text(ws.path("explain", f"{name}.html"), explain.html_page(rendered, doc_id))
        else:
            explain.write_text(ws.path("explain", f"{name}.txt"), rendered + "\n")
            click.echo(f"== {doc_id} ({doc.label})")
            click.echo(rendered)
        for entry in report.entries[:top_k]:
            click.echo(f"  {entry.score:+.4f}  {entry.token!r}")

    if len(reports) > 1:
        aggregate = explain.aggregate_scores(reports, top_k)
        _write_json(ws.path("explain", "aggregate.json"), aggregate.model_dump())
        click.echo(f"Aggregate over {len(reports)} documents:")
        for rank, entry in enumerate(aggregate.tokens, start=1):
            click.echo(f"  {rank:3d}  {entry.score:+.4f}  {entry.token!r}")


@cli.command()
@click.option("--doc-id", required=True, help="Query document")
@click.option("--n", "n", type=click.IntRange(min=0), default=5, show_default=True)
@click.option("--include-self", is_flag=True, help="List the query first")
@split_option()
@seed_option
@click.pass_context
@reports_errors
def neighbors(
    ctx: click.Context,
    doc_id: str,
    n: int,
    include_self: bool,
    split: str,
    seed_override: Optional[int],
) -> None:
    """Nearest documents in embedding space."""
    ws = _workspace(ctx, seed_override)
    matrix = embedder.load_embeddings(ws.embeddings_path(split))
    result = explain.nearest_neighbors(matrix, doc_id, n, include_self=include_self)
    _write_json(ws.path("neighbors", f"{_safe_name(doc_id)}.json"), result.model_dump())
    for nb in result.neighbors:
        click.echo(f"{nb.distance:12.6f}  {nb.doc_id}  {nb.label or '-'}")


@cli.command(name="project")
@click.option("--perplexity", type=float, default=None)
@click.option("--iterations", type=click.IntRange(min=1), default=None)
@click.option("--no-pca", is_flag=True, help="Skip PCA pre-reduction")
@split_option()
@seed_option
@click.pass_context
@reports_errors
def project_cmd(
    ctx: click.Context,
    perplexity: Optional[float],
    iterations: Optional[int],
    no_pca: bool,
    split: str,
    seed_override: Optional[int],
) -> None:
    """t-SNE scatter plot of a split's embeddings (CSV and SVG)."""
    ws = _workspace(ctx, seed_override)
    cfg = _override(ws.pipeline.projection, perplexity=perplexity, iterations=iterations, seed=ws.seed)
    if no_pca:
        cfg = cfg.model_copy(update={"pca_predim": None})
    matrix = embedder.load_embeddings(ws.embeddings_path(split))
    points, trace = project.project_embeddings(matrix, cfg)

    out = ws.path("project")
    project.emit_scatter(points, out / "points.csv", "csv")
    project.emit_scatter(points, out / "points.svg", "svg", title=f"t-SNE ({split})")
    project.write_kl_trace(trace, cfg, out / "kl.csv")
    project.write_projection_meta(
        out / "meta.json",
        cfg,
        points=len(points),
        input_dim=matrix.dim,
        final_kl=trace[-1],
        extra={"split": split, "embeddings": matrix.fingerprint},
    )
    click.echo(f"{out}: {len(points)} points, final KL {trace[-1]:.4f}")


# ---------------------------------------------------------------------------
# Status
# ---------------------------------------------------------------------------


@cli.command()
@click.pass_context
def status(ctx: click.Context) -> None:
    """Display configuration and which artifacts exist."""
    ws: Workspace = ctx.obj
    settings = config_module.settings
    log.info("Displaying reqvec status")

    click.echo("reqvec status:")
    click.echo()
    click.echo("Configuration:")
    click.echo(f"  Artifact dir: {ws.artifact_dir}")
    click.echo(f"  Seed: {ws.seed}")
    click.echo(f"  Vocab size: {ws.pipeline.tokenizer.vocab_size}")
    click.echo(f"  Pooling: {settings.pooling}")
    click.echo(f"  Workers: {settings.workers}")
    click.echo(f"  ids2018 host pool: {', '.join(settings.ids2018_host_pool) or 'None'}")

    click.echo()
    click.echo("Artifacts:")
    entries = [(f"corpus ({split})", ws.corpus_path(split)) for split in SPLITS]
    entries += [("tokenizer", ws.vocab_path), ("encoder", ws.encoder_path)]
    entries += [(f"embeddings ({split})", ws.embeddings_path(split)) for split in SPLITS]
    entries += [(f"classifier ({kind})", ws.model_path(kind)) for kind in MODEL_KINDS]
    entries += [("evaluation", ws.path("eval", "report.json")), ("projection", ws.path("project", "points.csv"))]
    for name, path in entries:
        click.echo(f"  {name}: {'✓' if path.exists() else '✗'} {path}")

    for split in SPLITS:
        path = ws.corpus_path(split)
        if path.exists():
            try:
                _echo_stats(corpus_io.load_corpus(path), path)
            except ReqvecError as exc:
                click.echo(f"  {path}: unreadable ({exc})", err=True)


if __name__ == "__main__":
    cli()

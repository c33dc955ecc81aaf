"""Training loop, evaluation metrics, and the configuration-grid runner.

Training is teacher-forced cross-entropy over character tokens with Adam,
gradient clipping, and an optional early stop on validation loss; the
parameters from the best validation epoch are the ones returned.  All
randomness (init, dropout, batch order) derives from one seed, so a rerun
reproduces the loss log bit for bit.

Evaluation reports exact-match accuracy (whitespace-insensitive string
equality), corpus-level character BLEU, and a semantic-equivalence flag
per example computed with the truth-table oracle.  ``run_grid`` trains one
model per fusion configuration under an identical budget and writes a
``semantics,position,sep,acc,bleu`` CSV.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .datagen import DatasetPair, load_pairs
from .errors import MbaError, TrainingDivergedError
from .exprs import DEFAULT_WIDTH, parse
from .model import BOS, EOS, PAD, FusionSpec, ModelConfig, Seq2SeqModel, Vocab
from .semantics import equivalent, expression_features

__all__ = [
    "TrainConfig",
    "EvalRecord",
    "EvalReport",
    "GridRow",
    "train",
    "exact_match",
    "bleu",
    "evaluate_model",
    "default_grid",
    "run_grid",
    "write_grid_csv",
    "write_loss_log",
]


@dataclass(frozen=True)
class TrainConfig:
    """One training run: budget, optimizer knobs, data, and architecture."""

    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    clip_norm: float = 1.0
    patience: int = 0  # epochs without val improvement before stopping; 0 = off
    width: int = DEFAULT_WIDTH
    train_path: str | None = None
    val_path: str | None = None
    spec: FusionSpec = field(default_factory=FusionSpec)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


# ---------------------------------------------------------------------------
# Data preparation


def _encode_pairs(pairs, vocab: Vocab, spec: FusionSpec, width: int, max_len: int):
    """Token ids, feature vectors, and decoder input/output per pair."""
    rows = []
    for p in pairs:
        src_ids = vocab.encode(p.src)
        trg_ids = vocab.encode(p.trg)
        if len(src_ids) > max_len or len(trg_ids) + 2 > max_len:
            raise ValueError(f"pair exceeds max_len {max_len}: {p.src!r}")
        feats = None
        if spec.fused:
            feats = expression_features(parse(p.src), spec.semantics, width)
        rows.append((src_ids, trg_ids, feats))
    return rows


def _batches(rows, batch_size: int):
    """Length-bucketed batches: sort by lengths, slice, pad per batch."""
    order = sorted(range(len(rows)), key=lambda i: (len(rows[i][0]), len(rows[i][1]), i))
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        group = [rows[i] for i in idx]
        s_max = max(len(r[0]) for r in group)
        t_max = max(len(r[1]) for r in group) + 1  # room for <bos>/<eos>
        src = np.full((len(group), s_max), PAD, dtype=np.int64)
        trg_in = np.full((len(group), t_max), PAD, dtype=np.int64)
        trg_out = np.full((len(group), t_max), PAD, dtype=np.int64)
        feats = None if group[0][2] is None else np.zeros((len(group), len(group[0][2])))
        for row, (s, t, f) in enumerate(group):
            src[row, : len(s)] = s
            trg_in[row, 0] = BOS
            trg_in[row, 1 : len(t) + 1] = t
            trg_out[row, : len(t)] = t
            trg_out[row, len(t)] = EOS
            if feats is not None:
                feats[row] = f
        batches.append((src, trg_in, trg_out, feats, idx))
    return batches


def _token_loss(model: Seq2SeqModel, batch) -> tuple[ag.Tensor, int]:
    src, trg_in, trg_out, feats, _ = batch
    logits = model.forward(src, feats, trg_in)
    flat = ag.reshape(logits, (-1, model.config.vocab_size))
    loss = ag.cross_entropy(flat, trg_out.reshape(-1), ignore_index=PAD)
    return loss, int((trg_out != PAD).sum())


def _dataset_loss(model: Seq2SeqModel, batches) -> float:
    total, count = 0.0, 0
    with ag.no_grad():
        for batch in batches:
            loss, n = _token_loss(model, batch)
            total += loss.item() * n
            count += n
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# Training


def train(
    config: TrainConfig,
    train_pairs: list[DatasetPair] | None = None,
    val_pairs: list[DatasetPair] | None = None,
    log=None,
) -> tuple[Seq2SeqModel, list[tuple[int, str, float]]]:
    """Train a model per ``config``; returns it plus an (epoch, split, loss)
    log.  Pairs may be passed directly or read from the config paths.  When
    a validation set is present, the returned parameters are those of the
    best validation epoch, and ``patience`` epochs without improvement end
    the run early.
    """
    if train_pairs is None:
        if config.train_path is None:
            raise ValueError("no training data: pass train_pairs or set train_path")
        train_pairs = load_pairs(config.train_path)
    if val_pairs is None and config.val_path is not None:
        val_pairs = load_pairs(config.val_path)
    if not train_pairs:
        raise ValueError("training set is empty")

    vocab = Vocab()
    mconfig = replace(
        config.model, vocab_size=vocab.size, feature_len=config.spec.feature_len
    )
    model = Seq2SeqModel(mconfig, config.spec, vocab, seed=config.seed)
    model.training = True
    model._dropout_rng = np.random.default_rng(config.seed + 1)

    rows = _encode_pairs(train_pairs, vocab, config.spec, config.width, mconfig.max_len)
    batches = _batches(rows, config.batch_size)
    val_batches = None
    if val_pairs:
        val_rows = _encode_pairs(val_pairs, vocab, config.spec, config.width, mconfig.max_len)
        val_batches = _batches(val_rows, config.batch_size)

    rng = np.random.default_rng(config.seed)
    state = ag.adam_state(model.params)
    loss_log: list[tuple[int, str, float]] = []
    best_val = math.inf
    best_snapshot = None
    stale = 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(batches))
        total, count = 0.0, 0
        for bi in order:
            model.params.zero_grad()
            loss, n_tokens = _token_loss(model, batches[bi])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, batch {int(bi)}"
                )
            ag.backward(loss)
            ag.clip_grad_norm(model.params, config.clip_norm)
            ag.adam_step(model.params, state, lr=config.lr)
            total += value * n_tokens
            count += n_tokens
        loss_log.append((epoch, "train", total / max(count, 1)))
        if log:
            log(f"epoch {epoch}: train loss {loss_log[-1][2]:.4f}")

        if val_batches is not None:
            model.training = False
            val_loss = _dataset_loss(model, val_batches)
            model.training = True
            loss_log.append((epoch, "val", val_loss))
            if log:
                log(f"epoch {epoch}: val loss {val_loss:.4f}")
            if val_loss < best_val:
                best_val = val_loss
                best_snapshot = {n: t.data.copy() for n, t in model.params.items()}
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break

    if best_snapshot is not None:
        for name, t in model.params.items():
            t.data = best_snapshot[name]
    model.training = False
    return model, loss_log


# ---------------------------------------------------------------------------
# Metrics


def exact_match(pred: str, ref: str) -> bool:
    """String equality after removing all whitespace; nothing algebraic."""
    return "".join(pred.split()) == "".join(ref.split())


def _ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def bleu(preds: list[str], refs: list[str]) -> float:
    """Corpus-level character BLEU-4 in [0, 100].

    Modified (clipped) n-gram precision with brevity penalty; orders with a
    zero count contribute an epsilon (1e-9) precision instead, except that
    zero matching unigrams over the whole corpus score a hard 0.0.
    """
    if len(preds) != len(refs):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(refs)} references")
    if not preds:
        return 0.0
    pred_len = sum(len(p) for p in preds)
    ref_len = sum(len(r) for r in refs)
    if pred_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        matched, total = 0, 0
        for p, r in zip(preds, refs):
            counts = _ngrams(p, n)
            ref_counts = _ngrams(r, n)
            total += sum(counts.values())
            matched += sum(min(c, ref_counts[g]) for g, c in counts.items())
        if n == 1 and matched == 0:
            return 0.0
        precision = matched / total if matched and total else 1e-9
        log_sum += math.log(precision)
    brevity = 1.0 if pred_len > ref_len else math.exp(1.0 - ref_len / pred_len)
    return 100.0 * brevity * math.exp(log_sum / 4.0)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalRecord:
    src: str
    trg: str
    pred: str
    match: bool
    equivalent: bool


@dataclass(frozen=True)
class EvalReport:
    acc: float  # exact-match accuracy, percent
    bleu: float  # corpus character BLEU, percent
    records: tuple[EvalRecord, ...]


def _prediction_equivalent(pred: str, trg: str, width: int) -> bool:
    try:
        return equivalent(parse(pred), parse(trg), width)
    except MbaError:
        return False


def evaluate_model(
    model: Seq2SeqModel,
    pairs: list[DatasetPair],
    width: int = DEFAULT_WIDTH,
    batch_size: int = 64,
    max_new: int | None = None,
) -> EvalReport:
    """Greedy-decode every pair and score it.

    Decoding is capped at the longest reference length plus a margin (a
    longer prediction cannot match anyway); unparseable predictions score
    as non-matching and non-equivalent.  The model is never mutated.
    """
    if not pairs:
        return EvalReport(acc=0.0, bleu=0.0, records=())
    vocab = model.vocab
    if max_new is None:
        max_new = min(model.config.max_len - 1, max(len(p.trg) for p in pairs) + 8)
    rows = _encode_pairs(pairs, vocab, model.spec, width, model.config.max_len)
    preds: list[str] = [""] * len(pairs)
    for src, _, _, feats, idx in _batches(rows, batch_size):
        outs = model.greedy_decode(src, feats, max_new=max_new)
        for row, ids in zip(idx, outs):
            preds[row] = vocab.decode(ids)
    records = tuple(
        EvalRecord(
            src=p.src,
            trg=p.trg,
            pred=pred,
            match=exact_match(pred, p.trg),
            equivalent=exact_match(pred, p.trg)
            or _prediction_equivalent(pred, p.trg, width),
        )
        for p, pred in zip(pairs, preds)
    )
    acc = 100.0 * sum(r.match for r in records) / len(records)
    return EvalReport(
        acc=acc,
        bleu=bleu([r.pred for r in records], [r.trg for r in records]),
        records=records,
    )


# ---------------------------------------------------------------------------
# Configuration grid


@dataclass(frozen=True)
class GridRow:
    spec: FusionSpec
    acc: float
    bleu: float
    seconds: float
    error: str | None = None


def default_grid() -> list[FusionSpec]:
    """The 19 standard rows: the no-fusion baseline, then token-level
    concatenation over semantics x position x separator."""
    grid = [FusionSpec()]
    for semantics in ("bool", "ext", "both"):
        for position in ("back", "front", "back_front_of_pad"):
            for use_sep in (False, True):
                grid.append(
                    FusionSpec("token_concat", semantics, position, use_sep)
                )
    return grid


def run_grid(
    grid: list[FusionSpec],
    base: TrainConfig,
    train_pairs: list[DatasetPair],
    val_pairs: list[DatasetPair] | None,
    test_pairs: list[DatasetPair],
    log=None,
) -> list[GridRow]:
    """Train and evaluate one model per spec under the same seed and
    budget.  A failing cell records its error and the grid continues."""
    if not grid:
        raise ValueError("grid is empty")
    rows = []
    for spec in grid:
        started = time.monotonic()
        try:
            config = replace(base, spec=spec)
            model, _ = train(config, train_pairs, val_pairs)
            report = evaluate_model(model, test_pairs, width=base.width,
                                    batch_size=base.batch_size)
            row = GridRow(spec, report.acc, report.bleu, time.monotonic() - started)
        except Exception as exc:  # noqa: BLE001 - cell isolation by contract
            row = GridRow(spec, math.nan, math.nan, time.monotonic() - started,
                          error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
        if log:
            log(_format_grid_row(row))
    return rows


def _spec_columns(spec: FusionSpec) -> tuple[str, str, str]:
    if not spec.fused:
        return "vanilla", "-", "-"
    if spec.mode == "add":
        return spec.semantics, "add", "-"
    if spec.mode == "hidden_concat":
        return spec.semantics, "hidden", "-"
    return spec.semantics, spec.position, "Y" if spec.use_sep else "N"


def _format_grid_row(row: GridRow) -> str:
    semantics, position, sep = _spec_columns(row.spec)
    if row.error:
        return f"{semantics:8s} {position:18s} {sep:3s} failed: {row.error}"
    return (
        f"{semantics:8s} {position:18s} {sep:3s} "
        f"acc {row.acc:6.2f}  bleu {row.bleu:6.2f}  ({row.seconds:.0f}s)"
    )


def write_grid_csv(rows: list[GridRow], path) -> None:
    """Results as ``semantics,position,sep,acc,bleu`` (nan for failures)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("semantics,position,sep,acc,bleu\n")
        for row in rows:
            semantics, position, sep = _spec_columns(row.spec)
            fh.write(f"{semantics},{position},{sep},{row.acc:.2f},{row.bleu:.2f}\n")


def write_loss_log(loss_log, path) -> None:
    """Loss history as ``epoch,split,loss`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,split,loss\n")
        for epoch, split, value in loss_log:
            fh.write(f"{epoch},{split},{value:.6f}\n")

"""Optimization: losses, Adam, the training loop, and a gradient checker.

Training instances are (claim, article) pairs; every article of a claim
is its own example with the claim's label.  Gradients are averaged over
a mini-batch, parameters move under bias-corrected Adam, and early
stopping watches a held-out validation slice, restoring the best epoch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import ClaimInstance, FoldPlan
from .embeddings import SourceEmbeddingTable, Vocabulary, WordEmbeddings
from .errors import ContractError, DegenerateInputError
from .metrics import MetricReport, classification_report, multiclass_report, \
    regression_report
from .model import CredibilityModel, Hyperparams, ModelParams
from .numeric import Tensor, Tape, add, affine, clip, log, matmul, mul, scale, \
    sum_all

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "loss",
    "adam_step",
    "FitResult",
    "FoldOutcome",
    "fit",
    "train",
    "evaluate",
    "gradient_check",
]

PROB_FLOOR = 1e-7


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    precision: int = 64

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")
        if self.max_epochs < 1:
            raise ContractError("max_epochs must be at least 1")
        if self.precision not in (32, 64):
            raise ContractError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


def loss(score: Tensor, target, hyper: Hyperparams,
         params: ModelParams | None = None, l2_lambda: float = 0.0) -> Tensor:
    """Scalar training loss for one example, plus optional L2 on the
    fusion and head matrices (biases and embeddings stay unregularized)."""
    if hyper.mode == "regress":
        target = float(target)
        if not np.isfinite(target):
            raise ContractError("regression target must be finite")
        diff = affine(score, 1.0, -target)
        base = mul(diff, diff)
    elif hyper.classes == 2:
        label = int(target)
        if label != target or label not in (0, 1):
            raise ContractError(f"binary label must be 0 or 1, got {target!r}")
        p = clip(score, PROB_FLOOR, 1.0 - PROB_FLOOR)
        if label == 1:
            base = affine(log(p), -1.0)
        else:
            base = affine(log(affine(p, -1.0, 1.0)), -1.0)
    else:
        label = int(target)
        if label != target or not 0 <= label < hyper.classes:
            raise ContractError(
                f"label must lie in [0, {hyper.classes}), got {target!r}")
        onehot = np.zeros((1, hyper.classes))
        onehot[0, label] = 1.0
        picked = matmul(Tensor(onehot.astype(score.data.dtype)),
                        clip(score, PROB_FLOOR, 1.0))
        base = affine(log(picked), -1.0)
    if params is not None and l2_lambda > 0.0:
        penalty = None
        for w in params.regularized():
            term = sum_all(mul(w, w))
            penalty = term if penalty is None else add(penalty, term)
        base = add(base, scale(penalty, l2_lambda))
    return base


@dataclass
class OptimizerState:
    """Adam accumulators, one pair of moment arrays per parameter."""

    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, named: dict[str, Tensor]) -> "OptimizerState":
        return cls(
            step_count=0,
            first_moment={n: np.zeros_like(t.data) for n, t in named.items()},
            second_moment={n: np.zeros_like(t.data) for n, t in named.items()},
        )


def adam_step(named: dict[str, Tensor], state: OptimizerState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update; a missing gradient counts as zero."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = config.beta1, config.beta2
    for name, p in named.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or m.shape != p.data.shape:
            raise ContractError(f"optimizer state does not match parameter {name!r}")
        g = p.grad if p.grad is not None else 0.0
        m[:] = b1 * m + (1.0 - b1) * g
        v[:] = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)


@dataclass
class FitResult:
    params: ModelParams
    best_epoch: int
    history: list[tuple[int, float, float | None]]


@dataclass
class FoldOutcome:
    fold: int
    params: ModelParams
    report: MetricReport
    best_epoch: int


def _validation_value(report: MetricReport, hyper: Hyperparams) -> tuple[float, bool]:
    """Metric watched by early stopping and whether higher is better."""
    if hyper.mode == "regress":
        return report.mse, False
    if report.auc is not None:
        return report.auc, True
    # Single-class validation slices leave AUC undefined; fall back.
    return report.macro_f1, True


def _expand_pairs(instances: Sequence[ClaimInstance]) -> list[tuple[ClaimInstance, int]]:
    pairs = [(inst, i) for inst in instances for i in range(len(inst.articles))]
    if not pairs:
        raise DegenerateInputError("no training pairs")
    return pairs


def fit(train_instances: Sequence[ClaimInstance], hyper: Hyperparams,
        config: TrainConfig, word_embeddings: WordEmbeddings,
        article_sources: SourceEmbeddingTable,
        claim_sources: SourceEmbeddingTable | None = None, *,
        val_instances: Sequence[ClaimInstance] | None = None,
        seed_key: tuple[int, ...] = (0,),
        on_epoch: Callable[[int, float, float | None, CredibilityModel],
                           bool | None] | None = None,
        progress: Callable[[str], None] | None = None) -> FitResult:
    """Train one model.

    Word vectors stay frozen; the source tables are reinitialized here so
    repeated fits (one per fold) never share trained rows.  With a
    validation set, stops after ``patience`` epochs without improvement
    and restores the best snapshot.  ``on_epoch`` receives the live model
    and may return True to stop early, which capacity probes use once
    training accuracy is high enough.
    """
    for inst in train_instances:
        if inst.label is None:
            raise ContractError(f"claim {inst.claim_id} has no label")
    dtype = config.dtype
    init_rng = np.random.default_rng((config.seed, *seed_key, 1))
    shuffle_rng = np.random.default_rng((config.seed, *seed_key, 2))
    dropout_rng = np.random.default_rng((config.seed, *seed_key, 3))

    article_table = article_sources.reinitialized(init_rng, dtype)
    claim_table = None
    if claim_sources is not None:
        claim_table = claim_sources.reinitialized(init_rng, dtype)
    params = ModelParams(hyper, init_rng, article_sources=article_table,
                         claim_sources=claim_table, dtype=dtype)
    model = CredibilityModel(hyper, params, word_embeddings)
    named = params.named()
    state = OptimizerState.for_params(named)
    pairs = _expand_pairs(train_instances)

    best_value: float | None = None
    best_snapshot = None
    best_epoch = 0
    stale = 0
    history: list[tuple[int, float, float | None]] = []

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            for p in named.values():
                p.grad = None
            for idx in batch:
                inst, art = pairs[int(idx)]
                with Tape() as tape:
                    score, _ = model.article_score(
                        inst.claim_tokens, inst.articles[art], inst.claim_source,
                        inst.article_sources[art],
                        dropout_rng=dropout_rng if hyper.dropout > 0 else None)
                    pair_loss = loss(score, inst.label, hyper, params,
                                     config.l2_lambda)
                tape.backward(pair_loss)
                value = pair_loss.item()
                if not np.isfinite(value):
                    raise ContractError(f"loss became non-finite at epoch {epoch}")
                epoch_losses.append(value)
            if len(batch) > 1:
                inv = 1.0 / len(batch)
                for p in named.values():
                    if p.grad is not None:
                        p.grad = p.grad * inv
            adam_step(named, state, config)
        train_loss = float(np.mean(epoch_losses))

        val_value: float | None = None
        if val_instances:
            _, report = evaluate(model, val_instances)
            val_value, higher_better = _validation_value(report, hyper)
            improved = (best_value is None
                        or (val_value > best_value if higher_better
                            else val_value < best_value))
            if improved:
                best_value = val_value
                best_snapshot = params.snapshot()
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
        history.append((epoch, train_loss, val_value))
        if progress is not None:
            shown = "-" if val_value is None else f"{val_value:.6f}"
            progress(f"epoch {epoch} train_loss {train_loss:.6f} val {shown}")
        if on_epoch is not None and on_epoch(epoch, train_loss, val_value, model):
            if best_snapshot is None:
                best_epoch = epoch
            break
        if val_instances and stale >= config.patience:
            break

    if best_snapshot is not None:
        params.restore(best_snapshot)
    elif best_epoch == 0:
        best_epoch = history[-1][0] if history else 0
    return FitResult(params=params, best_epoch=best_epoch, history=history)


def evaluate(model: CredibilityModel,
             instances: Sequence[ClaimInstance]) -> tuple[list, MetricReport]:
    """Per-claim predictions plus the mode-appropriate report."""
    if not instances:
        raise DegenerateInputError("no instances to evaluate")
    preds = []
    labels = []
    for inst in instances:
        if inst.label is None:
            raise ContractError(f"claim {inst.claim_id} has no label")
        cred, _ = model.claim_score(inst)
        preds.append(cred)
        labels.append(inst.label)
    hyper = model.hyper
    if hyper.mode == "regress":
        report = regression_report([float(p) for p in preds],
                                   [float(t) for t in labels])
    elif hyper.classes == 2:
        report = classification_report([float(p) for p in preds],
                                       [int(t) for t in labels])
    else:
        picked = [int(np.argmax(p)) for p in preds]
        report = multiclass_report(picked, [int(t) for t in labels], hyper.classes)
    return preds, report


def train(instances: Sequence[ClaimInstance], plan: FoldPlan, hyper: Hyperparams,
          config: TrainConfig, word_embeddings: WordEmbeddings,
          article_sources: SourceEmbeddingTable,
          claim_sources: SourceEmbeddingTable | None = None, *,
          progress: Callable[[str], None] | None = None) -> list[FoldOutcome]:
    """Cross-validated training: one model per fold, tested on that fold.

    Every fold shares the same validation holdout for early stopping and
    reinitializes its parameters from a fold-specific seed.
    """
    by_id = {inst.claim_id: inst for inst in instances}
    missing = [cid for ids in ([plan.validation] + plan.folds) for cid in ids
               if cid not in by_id]
    if missing:
        raise ContractError(f"fold plan names unknown claims: {missing[:3]}")
    val_instances = [by_id[cid] for cid in plan.validation]
    outcomes = []
    for fold in range(plan.n_folds):
        train_insts = [by_id[cid] for cid in plan.train_ids(fold)]
        test_insts = [by_id[cid] for cid in plan.test_ids(fold)]
        if progress is not None:
            progress(f"fold {fold}: {len(train_insts)} train claims, "
                     f"{len(test_insts)} test claims")
        result = fit(train_insts, hyper, config, word_embeddings, article_sources,
                     claim_sources, val_instances=val_instances,
                     seed_key=(fold,),
                     progress=(lambda line, f=fold: progress(f"fold {f} {line}"))
                     if progress else None)
        model = CredibilityModel(hyper, result.params, word_embeddings)
        _, report = evaluate(model, test_insts)
        outcomes.append(FoldOutcome(fold=fold, params=result.params,
                                    report=report, best_epoch=result.best_epoch))
    return outcomes


def gradient_check(hyper: Hyperparams | None = None, *,
                   probes_per_group: int | None = 4, seed: int = 0,
                   step: float = 1e-5, corrupt: str | None = None) -> float:
    """Compare tape gradients with central finite differences.

    Builds a self-contained miniature model (two-token article, one claim,
    both source tables) and probes entries from every parameter group.
    Returns the worst relative error; ``corrupt`` doubles one group's
    analytic gradient first so tests can prove the check has teeth.
    """
    from .model import score_article  # local alias keeps module import light

    if hyper is None:
        hyper = Hyperparams(word_dim=4, hidden_size=3, fc_size=3,
                            article_source_dim=2, claim_source_dim=2,
                            dropout=0.0, mode="classify", classes=2)
    if hyper.dropout != 0.0:
        raise ContractError("gradient check needs dropout disabled")
    rng = np.random.default_rng(seed)
    claim_tokens = ["rivers", "flow", "uphill"]
    article_tokens = ["observed", "downhill"]
    vocab = Vocabulary(claim_tokens + article_tokens)
    emb = WordEmbeddings(vocab, rng.standard_normal((len(vocab), hyper.word_dim)))
    article_table = SourceEmbeddingTable(
        ["observer"], rng.standard_normal((2, hyper.article_source_dim)),
        "article_source_table")
    claim_table = None
    if hyper.claim_source_dim is not None:
        claim_table = SourceEmbeddingTable(
            ["orator"], rng.standard_normal((2, hyper.claim_source_dim)),
            "claim_source_table")
    params = ModelParams(hyper, rng, article_sources=article_table,
                         claim_sources=claim_table)
    model = CredibilityModel(hyper, params, emb)
    target = 1
    l2 = 1e-4

    def loss_value() -> float:
        score, _ = model.article_score(claim_tokens, article_tokens,
                                       "orator" if claim_table else None,
                                       "observer")
        return loss(score, target, hyper, params, l2).item()

    with Tape() as tape:
        score, _ = model.article_score(claim_tokens, article_tokens,
                                       "orator" if claim_table else None,
                                       "observer")
        full = loss(score, target, hyper, params, l2)
    tape.backward(full)

    named = params.named()
    analytic = {name: (p.grad.copy() if p.grad is not None
                       else np.zeros_like(p.data))
                for name, p in named.items()}
    if corrupt is not None:
        if corrupt not in analytic:
            raise ContractError(f"no parameter named {corrupt!r}")
        analytic[corrupt] = analytic[corrupt] * 2.0

    worst = 0.0
    for name, p in named.items():
        flat = p.data.reshape(-1)
        if probes_per_group is None or probes_per_group >= flat.size:
            indices = np.arange(flat.size)
        else:
            indices = rng.choice(flat.size, size=probes_per_group, replace=False)
        flat_grad = analytic[name].reshape(-1)
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            up = loss_value()
            flat[i] = original - step
            down = loss_value()
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            err = abs(flat_grad[i] - numeric) / max(abs(flat_grad[i]) + abs(numeric),
                                                    1e-6)
            worst = max(worst, err)
    return worst

"""Plan evaluation: success rate, mean accuracy, mean single IoU, and caption
ROUGE reporting."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .prediction import RougeVariant, rouge1, rouge2


def _check_pairs(preds, gts) -> None:
    if len(preds) != len(gts):
        raise ValidationError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    for i, (p, g) in enumerate(zip(preds, gts)):
        if len(p) != len(g):
            raise ValidationError(f"pair {i}: horizon mismatch {len(p)} vs {len(g)}")


def _pairwise_mean(values: list[float]) -> float:
    """Pairwise summation for a reproducible reduction order."""
    if not values:
        raise ValidationError("no pairs to evaluate")

    def reduce(chunk):
        if len(chunk) == 1:
            return chunk[0]
        mid = len(chunk) // 2
        return reduce(chunk[:mid]) + reduce(chunk[mid:])

    return reduce(values) / len(values)


def success_rate(preds, gts) -> float:
    """Fraction of plans matching ground truth exactly, order included."""
    _check_pairs(preds, gts)
    return _pairwise_mean([1.0 if tuple(p) == tuple(g) else 0.0
                           for p, g in zip(preds, gts)])


def mean_accuracy(preds, gts, order_free: bool = False) -> float:
    """Mean per-position accuracy.  With order_free=True, positions are
    ignored and the clipped multiset overlap is counted instead."""
    _check_pairs(preds, gts)
    scores = []
    for p, g in zip(preds, gts):
        if order_free:
            remaining = list(g)
            hits = 0
            for a in p:
                if a in remaining:
                    remaining.remove(a)
                    hits += 1
        else:
            hits = sum(1 for a, b in zip(p, g) if a == b)
        scores.append(hits / len(g))
    return _pairwise_mean(scores)


def mean_siou(preds, gts) -> float:
    """Mean over pairs of the set IoU of predicted vs ground-truth action ids
    (per-sample, not batch-pooled)."""
    _check_pairs(preds, gts)
    scores = []
    for p, g in zip(preds, gts):
        ps, gs = set(p), set(g)
        scores.append(len(ps & gs) / len(ps | gs))
    return _pairwise_mean(scores)


def rouge_report(captions_per_sample, references,
                 variant: RougeVariant = RougeVariant.F1) -> tuple[float, float]:
    """Mean ROUGE-1/ROUGE-2 of each sample's least-NLL caption against its
    reference.  `captions_per_sample` holds (tokens, nll) lists."""
    if not captions_per_sample:
        raise ValidationError("empty caption report input")
    if len(captions_per_sample) != len(references):
        raise ValidationError("captions and references must align")
    r1, r2 = [], []
    for captions, reference in zip(captions_per_sample, references):
        if not captions:
            raise ValidationError("each sample needs at least one caption")
        best = min(range(len(captions)), key=lambda i: captions[i][1])
        tokens = captions[best][0]
        r1.append(rouge1(tokens, reference, variant))
        r2.append(rouge2(tokens, reference, variant))
    return _pairwise_mean(r1), _pairwise_mean(r2)


@dataclass(frozen=True)
class HorizonResult:
    horizon: int
    sr: float
    macc: float
    msiou: float
    n_samples: int


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[HorizonResult, ...]

    def to_csv(self) -> str:
        lines = ["horizon,SR,mAcc,mSIoU,n_samples"]
        for r in self.rows:
            lines.append(
                f"{r.horizon},{100 * r.sr:.2f},{100 * r.macc:.2f},"
                f"{100 * r.msiou:.2f},{r.n_samples}"
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = f"{'T':>3} {'SR':>8} {'mAcc':>8} {'mSIoU':>8} {'n':>6}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.horizon:>3} {100 * r.sr:>8.2f} {100 * r.macc:>8.2f} "
                f"{100 * r.msiou:>8.2f} {r.n_samples:>6}"
            )
        return "\n".join(lines) + "\n"


def evaluate_plans(preds, gts, horizon: int) -> HorizonResult:
    return HorizonResult(
        horizon=horizon,
        sr=success_rate(preds, gts),
        macc=mean_accuracy(preds, gts),
        msiou=mean_siou(preds, gts),
        n_samples=len(preds),
    )

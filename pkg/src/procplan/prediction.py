"""Video-to-text bridge: ROUGE scoring, thresholded action prediction with an
"unknown" fallback, and the embedding providers used to condition the planner.

ROUGE here is the clipped n-gram multiset overlap.  With the generated
caption as candidate and an action description as reference, the precision
variant reads "fraction of generated words that appear in the reference",
which is the matching rule used for action prediction (threshold 0.5 by
default, best-scoring pair wins, unknown otherwise).
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import ActionVocabulary, DescriptionSet, Tokens
from .errors import ValidationError


class RougeVariant(Enum):
    PRECISION = "precision"
    RECALL = "recall"
    F1 = "f1"


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _rouge_n(candidate, reference, n: int, variant: RougeVariant) -> float:
    if len(reference) == 0:
        raise ValidationError("reference must be non-empty")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    n_cand = sum(cand.values())
    n_ref = sum(ref.values())
    if n_cand == 0 or n_ref == 0:
        return 0.0
    overlap = sum((cand & ref).values())
    precision = overlap / n_cand
    recall = overlap / n_ref
    if variant is RougeVariant.PRECISION:
        return precision
    if variant is RougeVariant.RECALL:
        return recall
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def rouge1(candidate, reference, variant: RougeVariant = RougeVariant.PRECISION) -> float:
    """Unigram overlap with clipped multiset counts; empty candidate scores 0."""
    return _rouge_n(candidate, reference, 1, variant)


def rouge2(candidate, reference, variant: RougeVariant = RougeVariant.PRECISION) -> float:
    """Bigram overlap; any side shorter than two tokens scores 0."""
    return _rouge_n(candidate, reference, 2, variant)


@dataclass(frozen=True)
class Prediction:
    """Either a matched action id or unknown (action_id None)."""

    action_id: int | None
    best_score: float
    matched_caption_index: int | None

    @property
    def is_unknown(self) -> bool:
        return self.action_id is None


def predict_action(
    captions: list[Tokens],
    candidates: dict[int, Tokens],
    threshold: float = 0.5,
    variant: RougeVariant = RougeVariant.PRECISION,
) -> Prediction:
    """Score every (caption, candidate description) pair with ROUGE-1 and
    return the best action at or above the threshold, else unknown.

    Ties break toward the lowest action id, then the lowest caption index,
    so runs are reproducible.
    """
    if not captions:
        raise ValidationError("captions must be non-empty")
    if not candidates:
        raise ValidationError("candidates must be non-empty")
    best: tuple[float, int, int] | None = None  # (score, action_id, caption_idx)
    for action_id in sorted(candidates):
        reference = candidates[action_id]
        for idx, caption in enumerate(captions):
            score = rouge1(caption, reference, variant)
            if best is None or score > best[0]:
                best = (score, action_id, idx)
    score, action_id, idx = best
    if score >= threshold:
        return Prediction(action_id, score, idx)
    return Prediction(None, score, None)


def restrict_to_task(vocab: ActionVocabulary, task_id: int | None) -> dict[int, Tokens]:
    """Candidate descriptions for matching: one task's actions, or all."""
    if task_id is None:
        return {a.action_id: a.description for a in vocab.actions}
    return {i: vocab.description_of(i) for i in vocab.task_actions(task_id)}


def randomize_unknown(
    pred: Prediction, vocab: ActionVocabulary, seed: int
) -> Prediction:
    """Replace unknown with a uniformly random action id; pass actions through."""
    if not pred.is_unknown:
        return pred
    rng = np.random.default_rng([seed, 83])
    return Prediction(int(rng.integers(len(vocab))), pred.best_score, None)


# ---------------------------------------------------------------------------
# Embedding providers
# ---------------------------------------------------------------------------

def _hash_token(token: str, salt: str) -> int:
    digest = hashlib.sha1(f"{salt}:{token}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def hashed_bag_of_words(tokens, dim: int) -> np.ndarray:
    """Deterministic signed feature hashing, L2-normalized; empty -> zeros."""
    v = np.zeros(dim)
    for token in tokens:
        bucket = _hash_token(token, "bucket") % dim
        sign = 1.0 if _hash_token(token, "sign") % 2 == 0 else -1.0
        v[bucket] += sign
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


@dataclass(frozen=True)
class ActionLookupProvider:
    """Fixed embedding per action id, built from its description."""

    table: np.ndarray  # (n_actions, dim)

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def build_action_lookup(
    vocab: ActionVocabulary, dim: int = 32, descriptions: DescriptionSet | None = None
) -> ActionLookupProvider:
    table = np.zeros((len(vocab), dim))
    for a in vocab.actions:
        tokens = descriptions.entries[a.action_id] if descriptions else a.description
        table[a.action_id] = hashed_bag_of_words(tokens, dim)
    return ActionLookupProvider(table)


def embed_prediction(pred: Prediction, provider: ActionLookupProvider) -> np.ndarray:
    """Action -> its table row; unknown -> the zero vector."""
    if pred.is_unknown:
        return np.zeros(provider.dim)
    return np.array(provider.table[pred.action_id])


@dataclass(frozen=True)
class CaptionBagOfWordsProvider:
    dim: int = 32


def embed_caption(captions_with_nll: list[tuple[Tokens, float]],
                  provider: CaptionBagOfWordsProvider) -> np.ndarray:
    """Embed the least-NLL caption via hashed bag of words."""
    if not captions_with_nll:
        raise ValidationError("captions must be non-empty")
    best_idx = min(range(len(captions_with_nll)), key=lambda i: captions_with_nll[i][1])
    return hashed_bag_of_words(captions_with_nll[best_idx][0], provider.dim)


@dataclass(frozen=True)
class VisualPassthroughProvider:
    """Identity on observation features, or a fixed linear projection when
    the planner dimension differs."""

    dim: int
    projection: np.ndarray | None = None  # (dim, input_dim)

    @classmethod
    def projected(cls, input_dim: int, dim: int, seed: int = 0) -> "VisualPassthroughProvider":
        rng = np.random.default_rng([seed, 59])
        return cls(dim, rng.standard_normal((dim, input_dim)) / np.sqrt(input_dim))


def embed_visual(obs_features: np.ndarray, provider: VisualPassthroughProvider) -> np.ndarray:
    if provider.projection is not None:
        if obs_features.shape[0] != provider.projection.shape[1]:
            raise ValidationError("feature dim does not match the configured projection")
        return provider.projection @ obs_features
    if obs_features.shape[0] != provider.dim:
        raise ValidationError(
            f"feature dim {obs_features.shape[0]} != provider dim {provider.dim} "
            "and no projection is configured"
        )
    return np.array(obs_features)


# ---------------------------------------------------------------------------
# Embedding table file: header "dim=<d>", then "<id>,<v1>,...,<vd>" per line
# ---------------------------------------------------------------------------

def save_embedding_table(provider: ActionLookupProvider, path: str | Path) -> None:
    lines = [f"dim={provider.dim}"]
    for i, row in enumerate(provider.table):
        lines.append(",".join([str(i)] + [repr(float(x)) for x in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_embedding_table(path: str | Path) -> ActionLookupProvider:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    if not lines or not lines[0].startswith("dim="):
        raise ValidationError(f"{path}: missing dim= header")
    dim = int(lines[0].split("=", 1)[1])
    rows: dict[int, np.ndarray] = {}
    for line in lines[1:]:
        parts = line.split(",")
        idx = int(parts[0])
        vec = np.array([float(x) for x in parts[1:]])
        if vec.shape[0] != dim:
            raise ValidationError(f"{path}: row {idx} has {vec.shape[0]} values, want {dim}")
        rows[idx] = vec
    table = np.zeros((len(rows), dim))
    for idx, vec in rows.items():
        table[idx] = vec
    return ActionLookupProvider(table)

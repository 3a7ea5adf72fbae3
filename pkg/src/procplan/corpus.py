"""Action vocabulary, description ingestion, and a seeded synthetic corpus.

The corpus generator stands in for real instructional videos: every video
follows its task's action order over a contiguous sub-range, per-second
"visual" features are cluster centers plus isotropic noise, and captions are
the action descriptions with random token corruption.  Confusable action
groups share a cluster center, which makes their observations ambiguous while
their descriptions stay distinct.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CoverageError, DuplicateEntryError, ValidationError

Tokens = tuple[str, ...]


def tokenize(text: str) -> Tokens:
    """Whitespace tokenization; no stemming or normalization beyond lower()."""
    return tuple(text.lower().split())


class DescriptionSource(Enum):
    ORIGINAL = "original"
    ENHANCED = "enhanced"


@dataclass(frozen=True)
class TaskSpec:
    """One task: an id and its ordered action labels (short phrases)."""

    task_id: int
    action_labels: tuple[str, ...]


@dataclass(frozen=True)
class ActionEntry:
    action_id: int
    label: Tokens
    description: Tokens


@dataclass(frozen=True)
class ActionVocabulary:
    """Dense-id action vocabulary plus the ordered action list of each task.

    Actions are shared across tasks by label: two tasks listing the same
    label reference the same action id.
    """

    actions: tuple[ActionEntry, ...]
    task_map: dict[int, tuple[int, ...]]
    source: DescriptionSource

    def __len__(self) -> int:
        return len(self.actions)

    def label_of(self, action_id: int) -> Tokens:
        return self.actions[action_id].label

    def description_of(self, action_id: int) -> Tokens:
        return self.actions[action_id].description

    def task_actions(self, task_id: int) -> tuple[int, ...]:
        return self.task_map[task_id]

    def description_token_pool(self) -> tuple[str, ...]:
        """Sorted unique tokens over all descriptions (corruption pool)."""
        return tuple(sorted({t for a in self.actions for t in a.description}))


@dataclass(frozen=True)
class DescriptionSet:
    """Elaborated description per action id, ingested from a file or builder."""

    entries: dict[int, Tokens]
    source: DescriptionSource


def build_vocabulary(
    task_specs: list[TaskSpec] | tuple[TaskSpec, ...],
    descriptions: DescriptionSet | None = None,
) -> ActionVocabulary:
    """Assign dense action ids in first-appearance order and attach descriptions.

    Raises ValidationError for an empty spec list, a duplicate label within
    one task, or a task with fewer than two distinct actions; CoverageError
    when a given description set misses an action.
    """
    if not task_specs:
        raise ValidationError("task_specs must be non-empty")

    label_to_id: dict[Tokens, int] = {}
    entries: list[ActionEntry] = []
    task_map: dict[int, tuple[int, ...]] = {}
    for spec in task_specs:
        if spec.task_id in task_map:
            raise DuplicateEntryError(f"duplicate task id {spec.task_id}")
        seen: set[Tokens] = set()
        ids = []
        for raw in spec.action_labels:
            label = tokenize(raw)
            if not label:
                raise ValidationError(f"empty action label in task {spec.task_id}")
            if label in seen:
                raise ValidationError(
                    f"duplicate action label {' '.join(label)!r} in task {spec.task_id}"
                )
            seen.add(label)
            if label not in label_to_id:
                label_to_id[label] = len(entries)
                entries.append(ActionEntry(len(entries), label, label))
            ids.append(label_to_id[label])
        if len(set(ids)) < 2:
            raise ValidationError(f"task {spec.task_id} must reference >= 2 actions")
        task_map[spec.task_id] = tuple(ids)

    source = DescriptionSource.ORIGINAL
    if descriptions is not None:
        missing = [e.action_id for e in entries if e.action_id not in descriptions.entries]
        if missing:
            raise CoverageError(f"descriptions missing action ids {missing}")
        unknown = [i for i in descriptions.entries if not 0 <= i < len(entries)]
        if unknown:
            raise CoverageError(f"descriptions reference unknown action ids {unknown}")
        new_entries = []
        for e in entries:
            desc = descriptions.entries[e.action_id]
            if len(desc) < len(e.label):
                raise ValidationError(
                    f"description for action {e.action_id} is shorter than its label"
                )
            new_entries.append(ActionEntry(e.action_id, e.label, desc))
        entries = new_entries
        source = descriptions.source

    return ActionVocabulary(tuple(entries), task_map, source)


# ---------------------------------------------------------------------------
# Vocabulary / description files: one record per line, tab separated:
#   <action_id>\t<label>\t<description>        (description column optional)
# ---------------------------------------------------------------------------

def save_vocabulary(vocab: ActionVocabulary, path: str | Path) -> None:
    lines = []
    for a in vocab.actions:
        lines.append(f"{a.action_id}\t{' '.join(a.label)}\t{' '.join(a.description)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_descriptions(
    path: str | Path, vocabulary: ActionVocabulary | None = None
) -> DescriptionSet:
    """Read a description file; validates coverage when a vocabulary is given."""
    entries: dict[int, Tokens] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValidationError(f"{path}:{lineno}: expected id<TAB>label[<TAB>description]")
        try:
            action_id = int(parts[0])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: bad action id {parts[0]!r}") from exc
        if action_id in entries:
            raise DuplicateEntryError(f"{path}:{lineno}: duplicate entry for action {action_id}")
        desc = tokenize(parts[2] if len(parts) > 2 and parts[2].strip() else parts[1])
        if not desc:
            raise ValidationError(f"{path}:{lineno}: empty description")
        entries[action_id] = desc
    if vocabulary is not None:
        unknown = [i for i in entries if not 0 <= i < len(vocabulary)]
        if unknown:
            raise CoverageError(f"unknown action ids in {path}: {unknown}")
        missing = [a.action_id for a in vocabulary.actions if a.action_id not in entries]
        if missing:
            raise CoverageError(f"{path} missing action ids: {missing}")
    return DescriptionSet(entries, DescriptionSource.ENHANCED)


# ---------------------------------------------------------------------------
# Synthetic task specs and enhanced descriptions
# ---------------------------------------------------------------------------

_VERBS = ("pour", "add", "press", "steam", "whisk", "seal")
_NOUNS = ("water", "milk", "coffee", "dough", "valve", "filter",
          "sugar", "cream", "tire", "board", "jar", "wire")
_QUALIFIERS = ("fresh", "ground", "warmed", "sealed", "leveled", "softened",
               "measured", "chilled", "strained", "tightened", "greased", "dried")
_INSTRUMENTS = ("tamper", "pitcher", "wrench", "spatula", "funnel", "clamp",
                "scale", "brush", "ladle", "roller", "gauge", "sieve")


def make_task_specs(num_tasks: int, actions_per_task: int | tuple[int, ...]) -> list[TaskSpec]:
    """Deterministic task definitions whose labels share verbs and nouns.

    Label k is verb[k % V] + noun[k // V], so distinct actions collide on a
    verb or a noun (never both), mirroring short real-world step names.
    """
    if num_tasks < 1:
        raise ValidationError("num_tasks must be >= 1")
    counts = _per_task_counts(num_tasks, actions_per_task)
    total = sum(counts)
    if total > len(_VERBS) * len(_NOUNS):
        raise ValidationError(f"at most {len(_VERBS) * len(_NOUNS)} distinct actions supported")
    labels = [f"{_VERBS[k % len(_VERBS)]} {_NOUNS[k // len(_VERBS)]}" for k in range(total)]
    specs = []
    base = 0
    for t, count in enumerate(counts):
        specs.append(TaskSpec(t, tuple(labels[base : base + count])))
        base += count
    return specs


def _per_task_counts(num_tasks: int, actions_per_task: int | tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(actions_per_task, int):
        counts: tuple[int, ...] = (actions_per_task,) * num_tasks
    else:
        counts = tuple(actions_per_task)
        if len(counts) != num_tasks:
            raise ValidationError("actions_per_task list must have one entry per task")
    if any(c < 2 for c in counts):
        raise ValidationError("every task needs at least 2 actions")
    return counts


def make_enhanced_descriptions(vocab: ActionVocabulary) -> DescriptionSet:
    """Elaborations that keep the label words and add distinctive ones.

    Stands in for LLM-produced step elaborations: each action gains a unique
    qualifier/instrument pair so descriptions separate lexically even when
    labels share a verb or noun.
    """
    nq = len(_QUALIFIERS)
    entries: dict[int, Tokens] = {}
    for a in vocab.actions:
        qual = _QUALIFIERS[a.action_id % nq]
        inst = _INSTRUMENTS[a.action_id // nq]
        entries[a.action_id] = a.label + (qual, inst)
    if len({tuple(v) for v in entries.values()}) != len(entries):
        raise ValidationError("enhanced descriptions are not unique; too many actions")
    return DescriptionSet(entries, DescriptionSource.ENHANCED)


def save_descriptions(descriptions: DescriptionSet, vocab: ActionVocabulary,
                      path: str | Path) -> None:
    lines = []
    for a in vocab.actions:
        desc = descriptions.entries[a.action_id]
        lines.append(f"{a.action_id}\t{' '.join(a.label)}\t{' '.join(desc)}")
    Path(path).write_text("\n".join(lines) + "\n")


def make_confusable_pairs(
    task_specs: list[TaskSpec], fraction: float
) -> tuple[frozenset[int], ...]:
    """Pair actions from different tasks until ~fraction of ids are covered.

    Pairs take the j-th action of consecutive tasks, so group members never
    share a task and never share a label word pair.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError("fraction must be in [0, 1]")
    vocab = build_vocabulary(task_specs)
    target = int(round(fraction * len(vocab)))
    by_position: list[list[int]] = []
    for spec in task_specs:
        for j, _ in enumerate(spec.action_labels):
            while len(by_position) <= j:
                by_position.append([])
            by_position[j].append(vocab.task_map[spec.task_id][j])
    pairs: list[frozenset[int]] = []
    used: set[int] = set()
    for column in by_position:
        for i in range(0, len(column) - 1, 2):
            a, b = column[i], column[i + 1]
            if a in used or b in used or a == b:
                continue
            if 2 * (len(pairs) + 1) > target + 1:
                return tuple(pairs)
            pairs.append(frozenset((a, b)))
            used.update((a, b))
    return tuple(pairs)


# ---------------------------------------------------------------------------
# Annotated videos
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    action_id: int
    start: float
    end: float


@dataclass(frozen=True)
class AnnotatedVideo:
    """A synthetic video: ordered action segments with per-second features
    and one caption per segment."""

    video_id: str
    task_id: int
    segments: tuple[Segment, ...]
    feature_track: dict[int, np.ndarray]
    caption_track: dict[int, Tokens]

    @property
    def duration(self) -> float:
        return self.segments[-1].end if self.segments else 0.0


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    num_tasks: int
    actions_per_task: int | tuple[int, ...]
    num_videos: int
    horizon_range: tuple[int, int]  # segments per video, inclusive bounds
    feature_dim: int = 32
    feature_noise_sigma: float = 0.25
    caption_noise_prob: float = 0.0
    confusable_groups: tuple[frozenset[int], ...] = ()
    seed: int = 0

    def validate(self) -> None:
        counts = _per_task_counts(self.num_tasks, self.actions_per_task)
        lo, hi = self.horizon_range
        if not 1 <= lo <= hi:
            raise ValidationError("horizon_range must satisfy 1 <= lo <= hi")
        if lo > min(counts):
            raise ValidationError(
                "horizon range exceeds actions_per_task: no task can produce "
                f"a {lo}-segment video"
            )
        if self.num_videos < 1:
            raise ValidationError("num_videos must be >= 1")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1")
        if self.feature_noise_sigma < 0:
            raise ValidationError("feature_noise_sigma must be >= 0")
        if not 0.0 <= self.caption_noise_prob < 1.0:
            raise ValidationError("caption_noise_prob must be in [0, 1)")
        seen: set[int] = set()
        for group in self.confusable_groups:
            if seen & set(group):
                raise ValidationError("confusable_groups must be disjoint")
            seen.update(group)


@dataclass(frozen=True)
class SyntheticCorpus:
    vocabulary: ActionVocabulary
    videos: tuple[AnnotatedVideo, ...]


_SEGMENT_SECONDS = (4, 9)  # integer segment durations, inclusive


def generate_synthetic_corpus(
    config: SyntheticCorpusConfig, descriptions: DescriptionSet | None = None
) -> SyntheticCorpus:
    """Deterministic corpus for a config (and optional enhanced descriptions).

    Per-video state comes from a sub-generator seeded by (seed, video index),
    so generation could be parallelized over videos without changing output.
    Feature draws happen before caption draws, so swapping the description
    set leaves every feature byte identical.
    """
    config.validate()
    specs = make_task_specs(config.num_tasks, config.actions_per_task)
    vocab = build_vocabulary(specs, descriptions)
    for group in config.confusable_groups:
        bad = [i for i in group if not 0 <= i < len(vocab)]
        if bad:
            raise ValidationError(f"confusable group references unknown action ids {bad}")
    centers = _cluster_centers(config, len(vocab))
    pool = vocab.description_token_pool()
    videos = tuple(
        _make_video(config, vocab, centers, pool, idx) for idx in range(config.num_videos)
    )
    return SyntheticCorpus(vocab, videos)


def _cluster_centers(config: SyntheticCorpusConfig, n_actions: int) -> np.ndarray:
    """Unit-norm center per action; confusable group members share theirs."""
    rng = np.random.default_rng([config.seed, 17])
    group_of: dict[int, frozenset[int]] = {}
    for group in config.confusable_groups:
        for i in group:
            group_of[i] = group
    centers = np.zeros((n_actions, config.feature_dim))
    drawn: dict[frozenset[int], np.ndarray] = {}
    for action_id in range(n_actions):
        group = group_of.get(action_id)
        if group is not None:
            if group not in drawn:
                drawn[group] = _unit_vector(rng, config.feature_dim)
            centers[action_id] = drawn[group]
        else:
            centers[action_id] = _unit_vector(rng, config.feature_dim)
    return centers


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _make_video(
    config: SyntheticCorpusConfig,
    vocab: ActionVocabulary,
    centers: np.ndarray,
    token_pool: tuple[str, ...],
    index: int,
) -> AnnotatedVideo:
    rng = np.random.default_rng([config.seed, 1000 + index])
    task_id = int(rng.integers(config.num_tasks))
    order = vocab.task_actions(task_id)
    lo, hi = config.horizon_range
    hi = min(hi, len(order))
    length = int(rng.integers(lo, hi + 1))
    offset = int(rng.integers(0, len(order) - length + 1))
    action_ids = order[offset : offset + length]

    durations = rng.integers(_SEGMENT_SECONDS[0], _SEGMENT_SECONDS[1] + 1, size=length)
    segments = []
    t = 0
    for action_id, dur in zip(action_ids, durations):
        segments.append(Segment(action_id, float(t), float(t + int(dur))))
        t += int(dur)

    feature_track: dict[int, np.ndarray] = {}
    for seg in segments:
        for bucket in range(int(seg.start), int(seg.end)):
            noise = rng.standard_normal(config.feature_dim)
            feature_track[bucket] = centers[seg.action_id] + config.feature_noise_sigma * noise

    caption_track: dict[int, Tokens] = {}
    for i, seg in enumerate(segments):
        tokens = []
        for token in vocab.description_of(seg.action_id):
            if rng.random() < config.caption_noise_prob:
                token = token_pool[int(rng.integers(len(token_pool)))]
            tokens.append(token)
        caption_track[i] = tuple(tokens)

    return AnnotatedVideo(f"vid{index:05d}", task_id, tuple(segments), feature_track,
                          caption_track)


# ---------------------------------------------------------------------------
# Corpus serialization: one JSON object per line
# ---------------------------------------------------------------------------

def corpus_to_jsonl(videos: tuple[AnnotatedVideo, ...] | list[AnnotatedVideo]) -> str:
    lines = []
    for v in videos:
        buckets = sorted(v.feature_track)
        record = {
            "video_id": v.video_id,
            "task_id": v.task_id,
            "segments": [
                {"action_id": s.action_id, "start": s.start, "end": s.end}
                for s in v.segments
            ],
            "features": [v.feature_track[b].tolist() for b in buckets],
            "captions": [list(v.caption_track[i]) for i in range(len(v.segments))],
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def save_corpus(videos, path: str | Path) -> None:
    Path(path).write_text(corpus_to_jsonl(videos))


def load_corpus(path: str | Path) -> list[AnnotatedVideo]:
    videos = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        segments = tuple(
            Segment(s["action_id"], float(s["start"]), float(s["end"]))
            for s in rec["segments"]
        )
        feature_track = {b: np.asarray(f, dtype=float) for b, f in enumerate(rec["features"])}
        caption_track = {i: tuple(c) for i, c in enumerate(rec["captions"])}
        videos.append(
            AnnotatedVideo(rec["video_id"], rec["task_id"], segments, feature_track,
                           caption_track)
        )
    return videos

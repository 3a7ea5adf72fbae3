"""Turn annotated videos into horizon-T samples with start/goal windows.

Two window conventions are supported.  With the segment of interest running
[s, e] on a video of duration D, before clamping to [0, D]:

  KEPP  start [s-1, s+2]   goal [s-1, s+2]   (goal anchored on the last
                                              segment's start)
  PDPP  start [s,   s+3]   goal [e-2, e+1]

Window features are the mean of all per-second feature buckets intersecting
the interval (nearest bucket if none intersects); window captions are the
anchoring segment's caption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import AnnotatedVideo, Tokens
from .errors import ValidationError


class WindowSetting(Enum):
    KEPP = "kepp"
    PDPP = "pdpp"


class Role(Enum):
    START = "start"
    GOAL = "goal"


@dataclass(frozen=True)
class TimeInterval:
    begin: float
    end: float

    @property
    def length(self) -> float:
        return self.end - self.begin


@dataclass(frozen=True)
class CuratedSample:
    task_id: int
    horizon: int
    action_ids: tuple[int, ...]
    start_window: TimeInterval
    goal_window: TimeInterval
    start_features: np.ndarray
    goal_features: np.ndarray
    start_captions: Tokens
    goal_captions: Tokens

    @property
    def start_action(self) -> int:
        return self.action_ids[0]

    @property
    def goal_action(self) -> int:
        return self.action_ids[-1]


def observation_interval(
    seg_start: float,
    seg_end: float,
    role: Role,
    setting: WindowSetting,
    duration: float | None = None,
) -> TimeInterval:
    """Observation window for a segment under the given setting, clamped to
    [0, duration]."""
    if seg_start < 0 or seg_end <= seg_start:
        raise ValidationError("segment must satisfy 0 <= start < end")
    if setting is WindowSetting.KEPP:
        begin, end = seg_start - 1.0, seg_start + 2.0
    elif role is Role.START:
        begin, end = seg_start, seg_start + 3.0
    else:
        begin, end = seg_end - 2.0, seg_end + 1.0
    begin = max(begin, 0.0)
    if duration is not None:
        end = min(end, duration)
        begin = min(begin, end)
    return TimeInterval(begin, end)


def window_features(video: AnnotatedVideo, interval: TimeInterval) -> np.ndarray:
    """Mean of feature buckets overlapping the interval; nearest bucket when
    none does."""
    chosen = [
        feat
        for bucket, feat in sorted(video.feature_track.items())
        if max(interval.begin, bucket) < min(interval.end, bucket + 1)
    ]
    if not chosen:
        mid = 0.5 * (interval.begin + interval.end)
        nearest = min(video.feature_track, key=lambda b: (abs(b + 0.5 - mid), b))
        return np.array(video.feature_track[nearest], dtype=float)
    return np.mean(np.stack(chosen), axis=0)


def extract_windows(
    video: AnnotatedVideo, horizon: int, setting: WindowSetting
) -> list[CuratedSample]:
    """Stride-1 sliding window of `horizon` consecutive segments.

    A video with fewer than `horizon` segments yields no samples; otherwise
    exactly len(segments) - horizon + 1.
    """
    if horizon < 2:
        raise ValidationError("horizon must be >= 2")
    n = len(video.segments)
    samples = []
    for i in range(n - horizon + 1):
        first = video.segments[i]
        last = video.segments[i + horizon - 1]
        start_window = observation_interval(
            first.start, first.end, Role.START, setting, video.duration
        )
        goal_window = observation_interval(
            last.start, last.end, Role.GOAL, setting, video.duration
        )
        samples.append(
            CuratedSample(
                task_id=video.task_id,
                horizon=horizon,
                action_ids=tuple(s.action_id for s in video.segments[i : i + horizon]),
                start_window=start_window,
                goal_window=goal_window,
                start_features=window_features(video, start_window),
                goal_features=window_features(video, goal_window),
                start_captions=video.caption_track[i],
                goal_captions=video.caption_track[i + horizon - 1],
            )
        )
    return samples


def samples_to_jsonl(samples: list[CuratedSample]) -> str:
    lines = []
    for s in samples:
        record = {
            "task_id": s.task_id,
            "horizon": s.horizon,
            "action_ids": list(s.action_ids),
            "start_window": [s.start_window.begin, s.start_window.end],
            "goal_window": [s.goal_window.begin, s.goal_window.end],
            "start_features": s.start_features.tolist(),
            "goal_features": s.goal_features.tolist(),
            "start_captions": list(s.start_captions),
            "goal_captions": list(s.goal_captions),
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def save_samples(samples: list[CuratedSample], path: str | Path) -> None:
    Path(path).write_text(samples_to_jsonl(samples))


def load_samples(path: str | Path) -> list[CuratedSample]:
    samples = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        samples.append(
            CuratedSample(
                task_id=rec["task_id"],
                horizon=rec["horizon"],
                action_ids=tuple(rec["action_ids"]),
                start_window=TimeInterval(*rec["start_window"]),
                goal_window=TimeInterval(*rec["goal_window"]),
                start_features=np.asarray(rec["start_features"], dtype=float),
                goal_features=np.asarray(rec["goal_features"], dtype=float),
                start_captions=tuple(rec["start_captions"]),
                goal_captions=tuple(rec["goal_captions"]),
            )
        )
    return samples

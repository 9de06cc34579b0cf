"""
Diarization Error Rate with optimal speaker mapping, collar and overlap handling.

Times are swept on a half-millisecond integer grid: segment boundaries sit on
the millisecond grid and collar zones extend collar/2 around each reference
boundary, so every event point is an exact integer.
"""
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np
import structlog
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError
from .segio import Timeline

logger = structlog.get_logger(__name__)

UNITS_PER_SECOND = 2000
DEFAULT_COLLAR = 0.25

Interval = Tuple[int, FrozenSet[str], FrozenSet[str]]


@dataclass
class DerBreakdown:
    miss: float
    false_alarm: float
    confusion: float
    total_ref: float
    der: float
    mapping: Dict[str, str] = field(default_factory=dict)
    collar: float = DEFAULT_COLLAR
    score_overlap: bool = True

    @classmethod
    def from_components(cls, miss: float, false_alarm: float, confusion: float,
                        total_ref: float, mapping: Optional[Dict[str, str]] = None,
                        collar: float = DEFAULT_COLLAR, score_overlap: bool = True) -> "DerBreakdown":
        errors = miss + false_alarm + confusion
        if total_ref > 0:
            rate = errors / total_ref
        else:
            rate = math.inf if errors > 0 else 0.0
        return cls(miss, false_alarm, confusion, total_ref, rate, dict(mapping or {}),
                   collar, score_overlap)

    def to_record(self) -> Dict:
        return {
            'miss': self.miss,
            'false_alarm': self.false_alarm,
            'confusion': self.confusion,
            'total_ref': self.total_ref,
            'der': None if math.isinf(self.der) else self.der,
            'der_infinite': math.isinf(self.der),
            'mapping': dict(sorted(self.mapping.items())),
            'collar': self.collar,
            'score_overlap': self.score_overlap,
        }


def _scored_intervals(ref: Timeline, hyp: Timeline, collar: float,
                      score_overlap: bool) -> List[Interval]:
    """Elementary intervals (duration, ref speakers, hyp speakers) that count towards the score"""
    if collar < 0:
        raise ValidationError(f"collar must be non-negative, got {collar}")
    half = int(round(collar * 1000))

    # (time, kind, speaker, delta); kind 0 = ref, 1 = hyp, 2 = collar zone
    events = []
    for segment in ref:
        start, stop = 2 * segment.onset_ms, 2 * segment.offset_ms
        events.append((start, 0, segment.speaker, 1))
        events.append((stop, 0, segment.speaker, -1))
        if half:
            for boundary in (start, stop):
                events.append((max(boundary - half, 0), 2, "", 1))
                events.append((boundary + half, 2, "", -1))
    for segment in hyp:
        events.append((2 * segment.onset_ms, 1, segment.speaker, 1))
        events.append((2 * segment.offset_ms, 1, segment.speaker, -1))
    if not events:
        return []
    events.sort(key=lambda e: e[0])

    active: Tuple[Counter, Counter] = (Counter(), Counter())
    skip = 0
    intervals: List[Interval] = []
    i = 0
    while i < len(events):
        now = events[i][0]
        while i < len(events) and events[i][0] == now:
            _, kind, speaker, delta = events[i]
            if kind == 2:
                skip += delta
            else:
                active[kind][speaker] += delta
            i += 1
        if i == len(events):
            break
        duration = events[i][0] - now
        if duration <= 0 or skip > 0:
            continue
        ref_active = frozenset(s for s, n in active[0].items() if n > 0)
        hyp_active = frozenset(s for s, n in active[1].items() if n > 0)
        if not ref_active and not hyp_active:
            continue
        if not score_overlap and len(ref_active) >= 2:
            continue
        intervals.append((duration, ref_active, hyp_active))
    return intervals


def _mapping_from_intervals(intervals: List[Interval]) -> Dict[str, str]:
    ref_speakers = sorted({s for _, r, _ in intervals for s in r})
    hyp_speakers = sorted({s for _, _, h in intervals for s in h})
    if not ref_speakers or not hyp_speakers:
        return {}
    row = {s: i for i, s in enumerate(ref_speakers)}
    col = {s: j for j, s in enumerate(hyp_speakers)}
    overlap = np.zeros((len(ref_speakers), len(hyp_speakers)), dtype=np.int64)
    for duration, ref_active, hyp_active in intervals:
        for r in ref_active:
            for h in hyp_active:
                overlap[row[r], col[h]] += duration

    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return {
        hyp_speakers[j]: ref_speakers[i]
        for i, j in zip(rows, cols)
        if overlap[i, j] > 0
    }


def optimal_mapping(ref: Timeline, hyp: Timeline) -> Dict[str, str]:
    """Injective hyp -> ref speaker map maximizing total co-occurrence time"""
    return _mapping_from_intervals(_scored_intervals(ref, hyp, 0.0, True))


def compute_der(ref: Timeline, hyp: Timeline, collar: float = DEFAULT_COLLAR,
                score_overlap: bool = True) -> DerBreakdown:
    """
    Score hyp against ref.

    Each elementary interval with N_ref reference and N_hyp hypothesis
    speakers contributes miss max(0, N_ref - N_hyp), false alarm
    max(0, N_hyp - N_ref) and confusion min(N_ref, N_hyp) - N_correct, where
    N_correct counts mapped pairs active together.
    """
    intervals = _scored_intervals(ref, hyp, collar, score_overlap)
    mapping = _mapping_from_intervals(intervals)

    miss = false_alarm = confusion = total = 0
    for duration, ref_active, hyp_active in intervals:
        n_ref, n_hyp = len(ref_active), len(hyp_active)
        correct = sum(1 for h in hyp_active if mapping.get(h) in ref_active)
        miss += duration * max(0, n_ref - n_hyp)
        false_alarm += duration * max(0, n_hyp - n_ref)
        confusion += duration * (min(n_ref, n_hyp) - correct)
        total += duration * n_ref

    result = DerBreakdown.from_components(
        miss / UNITS_PER_SECOND, false_alarm / UNITS_PER_SECOND, confusion / UNITS_PER_SECOND,
        total / UNITS_PER_SECOND, mapping, collar, score_overlap,
    )
    if math.isinf(result.der):
        logger.warning("der_without_reference_speech", file_id=ref.file_id,
                       false_alarm=result.false_alarm)
    logger.debug("der_scored", file_id=ref.file_id, der=result.der)
    return result


@dataclass
class DerSummary:
    per_file: Dict[str, DerBreakdown]
    pooled: DerBreakdown


def score_files(ref_by_file: Mapping[str, Timeline], hyp_by_file: Mapping[str, Timeline],
                collar: float = DEFAULT_COLLAR, score_overlap: bool = True) -> DerSummary:
    """Per-file DER plus a pooled DER (summed components over summed reference time)"""
    per_file = {}
    for file_id in sorted(ref_by_file):
        hyp = hyp_by_file.get(file_id)
        if hyp is None:
            logger.warning("hypothesis_missing", file_id=file_id)
            hyp = Timeline(file_id)
        per_file[file_id] = compute_der(ref_by_file[file_id], hyp, collar, score_overlap)

    for file_id in sorted(set(hyp_by_file) - set(ref_by_file)):
        logger.warning("hypothesis_without_reference_ignored", file_id=file_id)

    pooled = DerBreakdown.from_components(
        sum(b.miss for b in per_file.values()),
        sum(b.false_alarm for b in per_file.values()),
        sum(b.confusion for b in per_file.values()),
        sum(b.total_ref for b in per_file.values()),
        collar=collar,
        score_overlap=score_overlap,
    )
    return DerSummary(per_file, pooled)

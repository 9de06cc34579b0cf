"""
Time-constrained minimum-permutation word error rate
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import structlog
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError
from .segio import (
    SpeakerWordStream,
    TimedWord,
    TranscriptSegment,
    iter_records,
    parse_transcript,
    parse_word_stream,
    split_interval,
)

logger = structlog.get_logger(__name__)

DEFAULT_COLLAR = 5.0
_BLOCKED = np.int64(2 ** 60)


@dataclass(frozen=True)
class AlignmentCounts:
    substitutions: int
    deletions: int
    insertions: int
    matches: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


@dataclass
class TcpWerReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int
    tcpwer: float
    assignment: Dict[str, str] = field(default_factory=dict)
    collar: float = DEFAULT_COLLAR
    hyp_words: int = 0
    pseudo_timed: bool = False

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def to_record(self) -> Dict:
        return {
            'substitutions': self.substitutions,
            'deletions': self.deletions,
            'insertions': self.insertions,
            'ref_words': self.ref_words,
            'hyp_words': self.hyp_words,
            'tcpwer': None if math.isinf(self.tcpwer) else self.tcpwer,
            'tcpwer_infinite': math.isinf(self.tcpwer),
            'assignment': dict(sorted(self.assignment.items())),
            'collar': self.collar,
            'pseudo_timed': self.pseudo_timed,
        }


def pseudo_word_timing(seg: TranscriptSegment) -> List[TimedWord]:
    """Divide the segment interval evenly among its whitespace-separated words"""
    words = seg.text.split()
    if not words:
        return []
    if seg.offset <= seg.onset:
        raise ValidationError(
            f"Segment {seg.index} has zero length but carries text {seg.text!r}"
        )
    return split_interval(seg.onset, seg.offset, words, seg.speaker)


def streams_from_transcript(segments: Sequence[TranscriptSegment]) -> List[SpeakerWordStream]:
    by_speaker: Dict[str, List[TimedWord]] = {}
    for segment in segments:
        by_speaker.setdefault(segment.speaker, []).extend(pseudo_word_timing(segment))
    return [
        SpeakerWordStream(speaker, words, pseudo_timed=True)
        for speaker, words in sorted(by_speaker.items())
    ]


def load_streams(text: str, source: Optional[str] = None) -> List[SpeakerWordStream]:
    """Word records or transcript records, told apart by the first record's keys"""
    first = next(iter_records(text, source), None)
    if first is None:
        return []
    if 'word' in first[1]:
        return parse_word_stream(text, source=source)
    return streams_from_transcript(parse_transcript(text, source=source))


def levenshtein(ref_tokens: Sequence[str], hyp_tokens: Sequence[str]) -> int:
    """Plain token edit distance with unit costs"""
    previous = list(range(len(hyp_tokens) + 1))
    for i, r in enumerate(ref_tokens, start=1):
        current = [i]
        for j, h in enumerate(hyp_tokens, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1,
                               previous[j - 1] + (r != h)))
        previous = current
    return previous[-1]


def _check_sorted(words: Sequence[TimedWord], what: str):
    for before, after in zip(words, words[1:]):
        if after.onset < before.onset:
            raise ValidationError(f"{what} words are not sorted by onset")


def tc_align(ref: Sequence[TimedWord], hyp: Sequence[TimedWord],
             collar: float = DEFAULT_COLLAR) -> AlignmentCounts:
    """
    Minimum edit alignment where a pair may match or substitute only if the
    word intervals, each widened by collar on both sides, intersect.

    Among minimum-cost alignments the one with most matches is reported. The
    DP runs over a combined score W * cost - matches with W > any match count,
    one vectorized row at a time.
    """
    if collar < 0:
        raise ValidationError(f"collar must be non-negative, got {collar}")
    _check_sorted(ref, "Reference")
    _check_sorted(hyp, "Hypothesis")
    n, m = len(ref), len(hyp)
    if n == 0 or m == 0:
        return AlignmentCounts(0, n, m, 0)

    weight = n + m + 1
    steps = weight * np.arange(m + 1, dtype=np.int64)
    hyp_words = np.array([w.word for w in hyp], dtype=object)
    hyp_on = np.array([w.onset for w in hyp]) - collar
    hyp_off = np.array([w.offset for w in hyp]) + collar

    row = steps.copy()
    for i, word in enumerate(ref, start=1):
        allowed = (word.onset - collar <= hyp_off) & (hyp_on <= word.offset + collar)
        pair_cost = np.where(hyp_words == word.word, -1, weight).astype(np.int64)
        diagonal = np.where(allowed, row[:-1] + pair_cost, _BLOCKED)

        best = row + weight
        best[1:] = np.minimum(best[1:], diagonal)
        # insertions: cur[j] = min over k <= j of best[k] + W * (j - k)
        row = np.minimum.accumulate(best - steps) + steps

    score = int(row[-1])
    cost = -(-score // weight)
    matches = weight * cost - score
    substitutions = n + m - 2 * matches - cost
    return AlignmentCounts(
        substitutions=substitutions,
        deletions=n - matches - substitutions,
        insertions=m - matches - substitutions,
        matches=matches,
    )


def _prepare(stream: SpeakerWordStream,
             normalizer: Optional[Callable[[str], str]]) -> List[TimedWord]:
    if normalizer is None:
        return list(stream.words)
    words = []
    for w in stream.words:
        token = normalizer(w.word).strip()
        if token:
            words.append(TimedWord(token, w.onset, w.offset, w.speaker))
    return words


def compute_tcpwer(ref_streams: Sequence[SpeakerWordStream],
                   hyp_streams: Sequence[SpeakerWordStream],
                   collar: float = DEFAULT_COLLAR,
                   normalizer: Optional[Callable[[str], str]] = None) -> TcpWerReport:
    """
    Align every (ref stream, hyp stream) pair with tc_align and pick the
    injective stream assignment with the fewest total errors. Unassigned
    reference streams count as deletions, unassigned hypothesis streams as
    insertions.
    """
    if collar < 0:
        raise ValidationError(f"collar must be non-negative, got {collar}")
    refs = [_prepare(s, normalizer) for s in ref_streams]
    hyps = [_prepare(s, normalizer) for s in hyp_streams]
    ref_counts = [len(words) for words in refs]
    hyp_counts = [len(words) for words in hyps]

    substitutions = deletions = insertions = 0
    assignment: Dict[str, str] = {}
    assigned_refs, assigned_hyps = set(), set()

    if refs and hyps:
        pairs = [[tc_align(r, h, collar) for h in hyps] for r in refs]
        # relative to leaving both streams unassigned
        gain = np.array([
            [pairs[i][j].errors - ref_counts[i] - hyp_counts[j] for j in range(len(hyps))]
            for i in range(len(refs))
        ], dtype=np.int64)
        for i, j in zip(*linear_sum_assignment(gain)):
            counts = pairs[i][j]
            substitutions += counts.substitutions
            deletions += counts.deletions
            insertions += counts.insertions
            assignment[hyp_streams[j].speaker] = ref_streams[i].speaker
            assigned_refs.add(i)
            assigned_hyps.add(j)

    deletions += sum(n for i, n in enumerate(ref_counts) if i not in assigned_refs)
    insertions += sum(m for j, m in enumerate(hyp_counts) if j not in assigned_hyps)

    ref_words = sum(ref_counts)
    errors = substitutions + deletions + insertions
    if ref_words:
        rate = errors / ref_words
    else:
        rate = math.inf if errors else 0.0
        if errors:
            logger.warning("tcpwer_without_reference_words", insertions=insertions)

    logger.debug("tcpwer_scored", ref_streams=len(refs), hyp_streams=len(hyps), tcpwer=rate)
    return TcpWerReport(substitutions, deletions, insertions, ref_words, rate, assignment,
                        collar, sum(hyp_counts),
                        any(s.pseudo_timed for s in (*ref_streams, *hyp_streams)))

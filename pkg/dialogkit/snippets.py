"""
Contrastive ASR / ground-truth snippets for in-context correction prompts
"""
import json
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import structlog

from .errors import ValidationError
from .segio import TranscriptSegment
from .tcpwer import levenshtein
from .textprep import NormalizationProfile, normalize

logger = structlog.get_logger(__name__)

DEFAULT_CONTEXT = 2


@dataclass(frozen=True)
class SnippetPair:
    asr_segments: Tuple[TranscriptSegment, ...]
    gt_segments: Tuple[TranscriptSegment, ...]
    window: Tuple[int, int]

    def to_record(self) -> dict:
        return {
            'window': list(self.window),
            'asr': [s.to_record() for s in self.asr_segments],
            'gt': [s.to_record() for s in self.gt_segments],
        }


def mark_errors(asr: Sequence[TranscriptSegment], gt: Sequence[TranscriptSegment],
                profile: Optional[NormalizationProfile] = None) -> Set[int]:
    """Indices whose normalized ASR text differs from the normalized ground truth"""
    if len(asr) != len(gt):
        raise ValidationError(f"Transcripts differ in length: {len(asr)} ASR vs {len(gt)} reference segments")
    errors = set()
    for a, g in zip(asr, gt):
        if a.index != g.index:
            raise ValidationError(f"Segment indices misaligned: ASR {a.index} vs reference {g.index}")
        if normalize(a.text, profile) != normalize(g.text, profile):
            errors.add(a.index)
    return errors


def _windows(errors: Iterable[int], context: int, count: int) -> List[Tuple[int, int]]:
    merged: List[List[int]] = []
    for i in sorted(errors):
        lo, hi = max(i - context, 0), min(i + context, count - 1)
        # touching windows merge too
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def extract_snippets(asr: Sequence[TranscriptSegment], gt: Sequence[TranscriptSegment],
                     context: int = DEFAULT_CONTEXT,
                     profile: Optional[NormalizationProfile] = None) -> List[SnippetPair]:
    """
    One snippet per maximal window of erroneous segments plus `context`
    segments on either side, clipped to the dialogue.
    """
    if context < 0:
        raise ValidationError(f"context must be non-negative, got {context}")
    errors = mark_errors(asr, gt, profile)
    positions = {segment.index: k for k, segment in enumerate(asr)}
    pairs = []
    for lo, hi in _windows((positions[i] for i in errors), context, len(asr)):
        pairs.append(SnippetPair(tuple(asr[lo:hi + 1]), tuple(gt[lo:hi + 1]),
                                 (asr[lo].index, asr[hi].index)))
    logger.info("snippets_extracted", segments=len(asr), errors=len(errors), snippets=len(pairs))
    return pairs


def _substitution_cost(a: List[str], b: List[str]) -> float:
    longest = max(len(a), len(b))
    return levenshtein(a, b) / longest if longest else 0.0


def _placeholder(like: TranscriptSegment) -> TranscriptSegment:
    return TranscriptSegment(like.index, like.speaker, "", like.onset, like.onset)


def align_segments(asr: Sequence[TranscriptSegment], gt: Sequence[TranscriptSegment],
                   profile: Optional[NormalizationProfile] = None
                   ) -> Tuple[List[TranscriptSegment], List[TranscriptSegment]]:
    """
    Minimum-edit alignment of two transcripts with different segmentations.

    Substituting one segment for another costs the token edit distance of
    their normalized texts divided by the longer token count; an unmatched
    segment costs 1 and is paired with an empty placeholder. Both outputs are
    re-indexed 0..n-1.
    """
    a_tokens = [normalize(s.text, profile).split() for s in asr]
    g_tokens = [normalize(s.text, profile).split() for s in gt]
    n, m = len(asr), len(gt)

    cost = [[0.0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = float(i)
    for j in range(1, m + 1):
        cost[0][j] = float(j)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost[i][j] = min(
                cost[i - 1][j - 1] + _substitution_cost(a_tokens[i - 1], g_tokens[j - 1]),
                cost[i - 1][j] + 1.0,
                cost[i][j - 1] + 1.0,
            )

    pairs: List[Tuple[TranscriptSegment, TranscriptSegment]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == (
            cost[i - 1][j - 1] + _substitution_cost(a_tokens[i - 1], g_tokens[j - 1])
        ):
            pairs.append((asr[i - 1], gt[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and cost[i][j] == cost[i - 1][j] + 1.0:
            pairs.append((asr[i - 1], _placeholder(asr[i - 1])))
            i -= 1
        else:
            pairs.append((_placeholder(gt[j - 1]), gt[j - 1]))
            j -= 1
    pairs.reverse()

    aligned_asr, aligned_gt = [], []
    for k, (a, g) in enumerate(pairs):
        aligned_asr.append(TranscriptSegment(k, a.speaker, a.text, a.onset, a.offset))
        aligned_gt.append(TranscriptSegment(k, g.speaker, g.text, g.onset, g.offset))
    logger.info("segments_aligned", asr=n, reference=m, aligned=len(pairs), cost=cost[n][m])
    return aligned_asr, aligned_gt


def emit_snippets(pairs: Iterable[SnippetPair]) -> str:
    lines = [json.dumps(p.to_record(), ensure_ascii=False, sort_keys=True) for p in pairs]
    return "\n".join(lines) + ("\n" if lines else "")

"""
ROUGE-1 and ROUGE-L for extracted medical-condition strings
"""
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import structlog

from .errors import ParseError, ValidationError
from .textprep import NormalizationProfile, normalize

logger = structlog.get_logger(__name__)

HEADLINES = ("f1", "recall")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, ref_len: int, hyp_len: int) -> "RougeScore":
        if ref_len == 0 and hyp_len == 0:
            return cls(1.0, 1.0, 1.0)
        if ref_len == 0 or hyp_len == 0:
            return cls(0.0, 0.0, 0.0)
        precision = overlap / hyp_len
        recall = overlap / ref_len
        total = precision + recall
        return cls(precision, recall, 2 * precision * recall / total if total > 0 else 0.0)

    def headline(self, selector: str = "f1") -> float:
        if selector not in HEADLINES:
            raise ValidationError(f"headline must be one of {HEADLINES}, got {selector!r}")
        return self.f1 if selector == "f1" else self.recall

    def to_record(self) -> Dict[str, float]:
        return {'precision': self.precision, 'recall': self.recall, 'f1': self.f1}


def tokenize(text: str, profile: Optional[NormalizationProfile] = None) -> List[str]:
    """Normalize, lowercase and split on whitespace"""
    return normalize(text, profile).lower().split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge1(ref: str, hyp: str, profile: Optional[NormalizationProfile] = None) -> RougeScore:
    ref_tokens, hyp_tokens = tokenize(ref, profile), tokenize(hyp, profile)
    overlap = sum((Counter(ref_tokens) & Counter(hyp_tokens)).values())
    return RougeScore.from_counts(overlap, len(ref_tokens), len(hyp_tokens))


def rougeL(ref: str, hyp: str, profile: Optional[NormalizationProfile] = None) -> RougeScore:
    ref_tokens, hyp_tokens = tokenize(ref, profile), tokenize(hyp, profile)
    return RougeScore.from_counts(lcs_length(ref_tokens, hyp_tokens), len(ref_tokens), len(hyp_tokens))


@dataclass
class DialogueRouge:
    dialogue: str
    rouge1: RougeScore
    rougeL: RougeScore
    missing_hypothesis: bool = False


@dataclass
class CorpusRouge:
    per_dialogue: List[DialogueRouge] = field(default_factory=list)
    rouge1: RougeScore = RougeScore(0.0, 0.0, 0.0)
    rougeL: RougeScore = RougeScore(0.0, 0.0, 0.0)
    headline: str = "f1"

    def to_record(self) -> Dict:
        return {
            'headline': self.headline,
            'rouge1': self.rouge1.to_record(),
            'rougeL': self.rougeL.to_record(),
            'per_dialogue': [
                {
                    'dialogue': d.dialogue,
                    'rouge1': d.rouge1.to_record(),
                    'rougeL': d.rougeL.to_record(),
                    'missing_hypothesis': d.missing_hypothesis,
                }
                for d in self.per_dialogue
            ],
        }


def macro_mean(scores: Sequence[RougeScore]) -> RougeScore:
    n = len(scores)
    if n == 0:
        return RougeScore(0.0, 0.0, 0.0)
    return RougeScore(
        sum(s.precision for s in scores) / n,
        sum(s.recall for s in scores) / n,
        sum(s.f1 for s in scores) / n,
    )


def score_corpus(refs: Mapping[str, str], hyps: Mapping[str, str], headline: str = "f1",
                 profile: Optional[NormalizationProfile] = None) -> CorpusRouge:
    """Per-dialogue scores and their macro means over the reference dialogues"""
    if headline not in HEADLINES:
        raise ValidationError(f"headline must be one of {HEADLINES}, got {headline!r}")
    per_dialogue = []
    for dialogue in sorted(refs):
        missing = dialogue not in hyps
        if missing:
            logger.warning("conditions_missing", dialogue=dialogue)
        hyp = hyps.get(dialogue, "")
        per_dialogue.append(DialogueRouge(
            dialogue,
            rouge1(refs[dialogue], hyp, profile),
            rougeL(refs[dialogue], hyp, profile),
            missing,
        ))
    return CorpusRouge(
        per_dialogue,
        macro_mean([d.rouge1 for d in per_dialogue]),
        macro_mean([d.rougeL for d in per_dialogue]),
        headline,
    )


def read_conditions(text: str, source: Optional[str] = None) -> Dict[str, str]:
    """JSONL {"dialogue": id, "conditions": str | [str, ...]} -> {id: text}"""
    conditions: Dict[str, str] = {}
    for line_number, line in enumerate(text.lstrip('\ufeff').splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", line_number, source)
        if not isinstance(record, dict) or 'dialogue' not in record:
            raise ParseError("record needs a 'dialogue' field", line_number, source)
        value = record.get('conditions', "")
        if isinstance(value, list):
            value = " ".join(str(item) for item in value)
        elif not isinstance(value, str):
            raise ParseError("'conditions' must be a string or list of strings", line_number, source)
        dialogue = str(record['dialogue'])
        if dialogue in conditions:
            raise ParseError(f"duplicate dialogue {dialogue!r}", line_number, source)
        conditions[dialogue] = value
    return conditions


def emit_conditions(conditions: Mapping[str, str]) -> str:
    lines = [
        json.dumps({'dialogue': d, 'conditions': conditions[d]}, ensure_ascii=False, sort_keys=True)
        for d in sorted(conditions)
    ]
    return "\n".join(lines) + ("\n" if lines else "")

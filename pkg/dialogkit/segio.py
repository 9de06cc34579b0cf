"""
Interchange formats: RTTM timelines, word streams and segment transcripts
"""
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Union

import structlog

from .errors import ParseError, TextEncodingError, ValidationError

logger = structlog.get_logger(__name__)

NA = "<NA>"

_PATTERNS = {
    'number': re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$"),
    'label': re.compile(r"^\S+$"),
}


def _to_ms(seconds: float) -> int:
    return int(round(seconds * 1000))


@dataclass(frozen=True)
class Segment:
    """Speaker-labelled time span, held at millisecond resolution"""

    onset: float
    duration: float
    speaker: str
    file_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, 'onset', round(float(self.onset), 3))
        object.__setattr__(self, 'duration', round(float(self.duration), 3))
        if not _PATTERNS['label'].match(self.speaker or ""):
            raise ValidationError(f"Speaker label must be a non-empty token, got {self.speaker!r}")
        if self.file_id and not _PATTERNS['label'].match(self.file_id):
            raise ValidationError(f"File id must not contain whitespace: {self.file_id!r}")
        if self.onset < 0:
            raise ValidationError(f"Segment onset must be non-negative, got {self.onset}")
        if self.duration <= 0:
            raise ValidationError(f"Segment duration must be positive, got {self.duration}")

    @property
    def offset(self) -> float:
        return round(self.onset + self.duration, 3)

    @property
    def onset_ms(self) -> int:
        return _to_ms(self.onset)

    @property
    def offset_ms(self) -> int:
        return _to_ms(self.onset) + _to_ms(self.duration)

    def sort_key(self):
        return (self.onset_ms, self.speaker, self.offset_ms)


@dataclass
class Timeline:
    """Ordered speaker-labelled segments of one recording"""

    file_id: str = ""
    segments: List[Segment] = field(default_factory=list)

    def __post_init__(self):
        for segment in self.segments:
            self._check_file(segment)
        self.segments = sorted(self.segments, key=Segment.sort_key)

    def _check_file(self, segment: Segment):
        if segment.file_id != self.file_id:
            raise ValidationError(
                f"Segment file id {segment.file_id!r} does not match timeline {self.file_id!r}"
            )

    def add(self, segment: Segment):
        self._check_file(segment)
        self.segments.append(segment)
        self.segments.sort(key=Segment.sort_key)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def speakers(self) -> List[str]:
        return sorted({segment.speaker for segment in self.segments})

    def total_duration(self) -> float:
        """Sum of segment durations, overlap counted once per segment"""
        return sum(_to_ms(segment.duration) for segment in self.segments) / 1000.0

    def by_speaker(self) -> Dict[str, List[Segment]]:
        grouped: Dict[str, List[Segment]] = defaultdict(list)
        for segment in self.segments:
            grouped[segment.speaker].append(segment)
        return dict(grouped)

    def rename(self, mapping: Mapping[str, str]) -> "Timeline":
        return Timeline(self.file_id, [
            Segment(s.onset, s.duration, mapping.get(s.speaker, s.speaker), s.file_id)
            for s in self.segments
        ])


@dataclass(frozen=True)
class TimedWord:
    word: str
    onset: float
    offset: float
    speaker: str

    def __post_init__(self):
        object.__setattr__(self, 'word', self.word.strip())
        if not self.word:
            raise ValidationError("Word must be non-empty")
        if self.offset < self.onset:
            raise ValidationError(
                f"Word {self.word!r} ends before it starts ({self.onset} > {self.offset})"
            )


@dataclass
class SpeakerWordStream:
    """Onset-ordered words attributed to one speaker"""

    speaker: str
    words: List[TimedWord] = field(default_factory=list)
    pseudo_timed: bool = False

    def __post_init__(self):
        # stable: ties keep their original order
        self.words = sorted(self.words, key=lambda w: w.onset)

    def __len__(self) -> int:
        return len(self.words)

    def tokens(self) -> List[str]:
        return [w.word for w in self.words]


@dataclass(frozen=True)
class TranscriptSegment:
    index: int
    speaker: str
    text: str
    onset: float
    offset: float

    def __post_init__(self):
        if not self.speaker:
            raise ValidationError(f"Transcript segment {self.index} has no speaker")
        if self.offset < self.onset:
            raise ValidationError(
                f"Transcript segment {self.index} ends before it starts"
            )

    def to_record(self) -> Dict[str, Any]:
        return {
            'index': self.index,
            'speaker': self.speaker,
            'text': self.text,
            'onset': self.onset,
            'offset': self.offset,
        }


def read_text(path: Union[str, Path]) -> str:
    """Read a UTF-8 file, stripping a byte-order mark"""
    data = Path(path).read_bytes()
    return decode_text(data, source=str(path))


def decode_text(data: bytes, source: str = "<bytes>") -> str:
    try:
        text = data.decode('utf-8')
    except UnicodeDecodeError as e:
        raise TextEncodingError(f"{source} is not valid UTF-8: {e}")
    return text.lstrip('\ufeff')


def _parse_number(value: str, what: str, line_number: int, source: Optional[str]) -> float:
    if not _PATTERNS['number'].match(value):
        raise ParseError(f"{what} is not a decimal number: {value!r}", line_number, source)
    return float(value)


def _iter_rttm(text: str, source: Optional[str]) -> Iterator[Segment]:
    for line_number, line in enumerate(text.lstrip('\ufeff').splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(';;'):
            continue

        fields = stripped.split()
        if len(fields) < 9 or fields[0] != "SPEAKER":
            raise ParseError(
                "expected 'SPEAKER <file> <chan> <onset> <dur> <NA> <NA> <speaker> <NA> ...'",
                line_number, source,
            )

        onset = _parse_number(fields[3], "onset", line_number, source)
        duration = _parse_number(fields[4], "duration", line_number, source)
        file_id = "" if fields[1] == NA else fields[1]
        try:
            segment = Segment(onset, duration, fields[7], file_id)
        except ValidationError as e:
            raise ValidationError(f"line {line_number}: {e}")
        yield segment


def parse_rttm(text: str, source: Optional[str] = None) -> Timeline:
    """Parse a single-recording RTTM document"""
    segments = list(_iter_rttm(text, source))
    file_ids = sorted({segment.file_id for segment in segments})
    if len(file_ids) > 1:
        raise ValidationError(
            f"RTTM holds several recordings ({', '.join(file_ids)}); use parse_rttm_by_file"
        )
    timeline = Timeline(file_ids[0] if file_ids else "", segments)
    logger.debug("rttm_parsed", file_id=timeline.file_id, segments=len(timeline))
    return timeline


def parse_rttm_by_file(text: str, source: Optional[str] = None) -> Dict[str, Timeline]:
    """Parse an RTTM document that may hold several recordings"""
    grouped: Dict[str, List[Segment]] = defaultdict(list)
    for segment in _iter_rttm(text, source):
        grouped[segment.file_id].append(segment)
    return {file_id: Timeline(file_id, grouped[file_id]) for file_id in sorted(grouped)}


def emit_rttm(timeline: Timeline) -> str:
    lines = [
        f"SPEAKER {s.file_id or NA} 1 {s.onset:.3f} {s.duration:.3f} {NA} {NA} {s.speaker} {NA} {NA}"
        for s in timeline.segments
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def iter_records(text: str, source: Optional[str] = None) -> Iterator[tuple]:
    """(line number, object) for every non-blank JSONL line"""
    for line_number, line in enumerate(text.lstrip('\ufeff').splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON record: {e.msg}", line_number, source)
        if not isinstance(record, dict):
            raise ParseError("record must be a JSON object", line_number, source)
        yield line_number, record


def _number_field(record: Dict[str, Any], key: str, line_number: int,
                  source: Optional[str]) -> Optional[float]:
    value = record.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"field {key!r} must be a number", line_number, source)
    return float(value)


def split_interval(onset: float, offset: float, words: Sequence[str],
                   speaker: str) -> List[TimedWord]:
    """Spread words evenly over [onset, offset], one equal slot per word"""
    if not words:
        return []
    width = (offset - onset) / len(words)
    timed = []
    for i, word in enumerate(words):
        end = offset if i == len(words) - 1 else onset + (i + 1) * width
        timed.append(TimedWord(word, onset + i * width, end, speaker))
    return timed


def parse_word_stream(text: str, transcript: Optional[Sequence[TranscriptSegment]] = None,
                      source: Optional[str] = None) -> List[SpeakerWordStream]:
    """Group word records into per-speaker, onset-sorted streams"""
    parents = {segment.index: segment for segment in (transcript or [])}
    timed: Dict[str, List[TimedWord]] = defaultdict(list)
    untimed: Dict[int, List[tuple]] = defaultdict(list)
    order: List[str] = []

    for line_number, record in iter_records(text, source):
        word = str(record.get('word') or "").strip()
        speaker = str(record.get('speaker') or "").strip()
        if not speaker:
            raise ValidationError(f"line {line_number}: word record has no speaker")
        if not word:
            raise ValidationError(f"line {line_number}: word record has no word")
        if speaker not in order:
            order.append(speaker)

        onset = _number_field(record, 'onset', line_number, source)
        offset = _number_field(record, 'offset', line_number, source)
        if onset is not None and offset is not None:
            if offset < onset:
                raise ValidationError(f"line {line_number}: offset {offset} precedes onset {onset}")
            timed[speaker].append(TimedWord(word, onset, offset, speaker))
            continue

        parent = record.get('segment')
        if not isinstance(parent, int) or parent not in parents:
            raise ValidationError(
                f"line {line_number}: word {word!r} has neither onset/offset nor a known parent segment"
            )
        untimed[parent].append((speaker, word))

    flagged = set()
    for index, entries in untimed.items():
        segment = parents[index]
        for speaker in {s for s, _ in entries}:
            words = [w for s, w in entries if s == speaker]
            timed[speaker].extend(split_interval(segment.onset, segment.offset, words, speaker))
            flagged.add(speaker)

    if flagged:
        logger.info("pseudo_timed_words", speakers=sorted(flagged))
    return [
        SpeakerWordStream(speaker, timed[speaker], pseudo_timed=speaker in flagged)
        for speaker in sorted(order)
    ]


def parse_transcript(text: str, strict: bool = True,
                     source: Optional[str] = None) -> List[TranscriptSegment]:
    """
    Parse segment records into a transcript indexed 0..n-1.

    Records either all carry an explicit 'index' or none do. With strict=True
    explicit indices must already read 0, 1, 2, ... in document order; with
    strict=False they are sorted and re-numbered.
    """
    rows = []
    for line_number, record in iter_records(text, source):
        speaker = str(record.get('speaker') or "").strip()
        if not speaker:
            raise ValidationError(f"line {line_number}: transcript record has no speaker")
        onset = _number_field(record, 'onset', line_number, source)
        offset = _number_field(record, 'offset', line_number, source)
        if onset is None or offset is None:
            raise ValidationError(f"line {line_number}: transcript record needs onset and offset")
        index = record.get('index')
        if index is not None and (isinstance(index, bool) or not isinstance(index, int)):
            raise ParseError("field 'index' must be an integer", line_number, source)
        rows.append((line_number, index, speaker, str(record.get('text') or ""), onset, offset))

    explicit = [row[1] for row in rows if row[1] is not None]
    if explicit:
        if len(explicit) != len(rows):
            raise ValidationError("Either every transcript record carries an index or none does")
        if len(set(explicit)) != len(explicit):
            raise ValidationError("Duplicate transcript indices")
        if strict and explicit != list(range(len(rows))):
            raise ValidationError(
                "Transcript indices must be contiguous from 0 in document order (strict mode)"
            )
        rows.sort(key=lambda row: row[1])

    return [
        TranscriptSegment(i, speaker, text_, onset, offset)
        for i, (_, _, speaker, text_, onset, offset) in enumerate(rows)
    ]


def emit_transcript(segments: Iterable[TranscriptSegment]) -> str:
    lines = [json.dumps(s.to_record(), ensure_ascii=False, sort_keys=True) for s in segments]
    return "\n".join(lines) + ("\n" if lines else "")


def emit_word_streams(streams: Iterable[SpeakerWordStream]) -> str:
    lines = []
    for stream in sorted(streams, key=lambda s: s.speaker):
        for w in stream.words:
            lines.append(json.dumps(
                {'word': w.word, 'speaker': w.speaker, 'onset': w.onset, 'offset': w.offset},
                ensure_ascii=False, sort_keys=True,
            ))
    return "\n".join(lines) + ("\n" if lines else "")

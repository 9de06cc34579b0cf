"""
Seeded synthetic dyadic conversations and controlled perturbations.

A conversation is a chain over four activity states (silence, speaker 0 only,
speaker 1 only, both) with exponential dwell times. Realized time in each
state is rescaled to the configured proportions before boundaries are snapped
to the frame grid.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from .config import Settings
from .errors import ValidationError
from .powerset import FrameActivity
from .segio import (
    Segment,
    SpeakerWordStream,
    Timeline,
    TranscriptSegment,
    emit_rttm,
    emit_transcript,
    emit_word_streams,
    parse_rttm,
    parse_transcript,
    read_text,
    split_interval,
)
from .stitch import ChunkResult, to_timeline, write_chunk_bundle
from .textmetrics import emit_conditions, read_conditions

logger = structlog.get_logger(__name__)

SILENCE, FIRST, SECOND, BOTH = range(4)
_STATE_ACTIVITY = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.float64)

# must survive punctuation normalization
SUBSTITUTION_MARK = "x"
_ABSTRACT_VOCABULARY = 500
_CONDITION_VOCABULARY = 100


@dataclass(frozen=True)
class SynthConfig:
    duration: float = 1800.0
    p_single: float = 0.843
    p_silence: float = 0.1135
    p_overlap: float = 0.0435
    mean_turn: float = 3.0
    embedding_dim: int = 16
    cluster_separation: float = 20.0
    embedding_spread: float = 1.0
    seed: int = 0
    frame_duration: float = 0.02
    chunk_duration: float = 10.0
    chunk_hop: Optional[float] = None
    words_per_second: float = 2.5
    lexicon: Optional[Tuple[str, ...]] = None
    num_conditions: int = 5
    speaker_names: Tuple[str, str] = ("doctor", "patient")
    file_id: str = "synth"

    KEYS = ("DURATION", "P_SINGLE", "P_SILENCE", "P_OVERLAP", "MEAN_TURN", "EMBEDDING_DIM",
            "CLUSTER_SEPARATION", "EMBEDDING_SPREAD", "SEED", "FRAME_DURATION",
            "CHUNK_DURATION", "CHUNK_HOP", "WORDS_PER_SECOND", "LEXICON", "NUM_CONDITIONS",
            "SPEAKER_NAMES", "FILE_ID")

    def __post_init__(self):
        proportions = (self.p_single, self.p_silence, self.p_overlap)
        if any(p < 0 for p in proportions):
            raise ValidationError(f"Activity proportions must be non-negative, got {proportions}")
        if abs(sum(proportions) - 1.0) > 1e-9:
            raise ValidationError(f"Activity proportions must sum to 1, got {sum(proportions)}")
        if self.duration <= 0 or self.mean_turn <= 0:
            raise ValidationError("duration and mean_turn must be positive")
        if self.embedding_dim < 1:
            raise ValidationError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.cluster_separation < 0 or self.embedding_spread <= 0:
            raise ValidationError("cluster_separation must be >= 0 and embedding_spread > 0")
        if self.frame_duration <= 0 or self.chunk_duration < self.frame_duration:
            raise ValidationError("chunk_duration must cover at least one positive-length frame")
        if self.hop <= 0 or self.hop > self.chunk_duration:
            raise ValidationError(f"chunk_hop must lie in (0, chunk_duration], got {self.hop}")
        if self.words_per_second <= 0 or self.num_conditions < 0:
            raise ValidationError("words_per_second must be positive and num_conditions >= 0")
        if len(self.speaker_names) != 2 or len(set(self.speaker_names)) != 2:
            raise ValidationError(f"Need two distinct speaker names, got {self.speaker_names}")
        if self.lexicon is not None and not self.lexicon:
            raise ValidationError("lexicon must not be empty")

    @property
    def hop(self) -> float:
        return self.chunk_duration if self.chunk_hop is None else self.chunk_hop

    @property
    def state_probabilities(self) -> np.ndarray:
        return np.array([self.p_silence, self.p_single / 2, self.p_single / 2, self.p_overlap])

    @classmethod
    def from_settings(cls, settings: Settings, **overrides) -> "SynthConfig":
        lexicon_path = settings.get_path("LEXICON")
        lexicon = None
        if lexicon_path is not None:
            lexicon = tuple(w for w in read_text(lexicon_path).split() if w)
        names = settings.get_str("SPEAKER_NAMES")
        values = dict(
            duration=settings.get_float("DURATION", cls.duration),
            p_single=settings.get_float("P_SINGLE", cls.p_single),
            p_silence=settings.get_float("P_SILENCE", cls.p_silence),
            p_overlap=settings.get_float("P_OVERLAP", cls.p_overlap),
            mean_turn=settings.get_float("MEAN_TURN", cls.mean_turn),
            embedding_dim=settings.get_int("EMBEDDING_DIM", cls.embedding_dim),
            cluster_separation=settings.get_float("CLUSTER_SEPARATION", cls.cluster_separation),
            embedding_spread=settings.get_float("EMBEDDING_SPREAD", cls.embedding_spread),
            seed=settings.get_int("SEED", cls.seed),
            frame_duration=settings.get_float("FRAME_DURATION", cls.frame_duration),
            chunk_duration=settings.get_float("CHUNK_DURATION", cls.chunk_duration),
            chunk_hop=settings.get_float("CHUNK_HOP"),
            words_per_second=settings.get_float("WORDS_PER_SECOND", cls.words_per_second),
            lexicon=lexicon,
            num_conditions=settings.get_int("NUM_CONDITIONS", cls.num_conditions),
            speaker_names=tuple(names.split(",")) if names else cls.speaker_names,
            file_id=settings.get_str("FILE_ID", cls.file_id),
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(frozen=True)
class PerturbConfig:
    boundary_jitter_sd: float = 0.0
    label_flip_rate: float = 0.0
    word_sub_rate: float = 0.0
    seed: int = 0

    KEYS = ("BOUNDARY_JITTER_SD", "LABEL_FLIP_RATE", "WORD_SUB_RATE", "SEED")

    def __post_init__(self):
        if self.boundary_jitter_sd < 0:
            raise ValidationError(f"boundary_jitter_sd must be >= 0, got {self.boundary_jitter_sd}")
        for name in ("label_flip_rate", "word_sub_rate"):
            rate = getattr(self, name)
            if not 0 <= rate <= 1:
                raise ValidationError(f"{name} must lie in [0, 1], got {rate}")

    @classmethod
    def from_settings(cls, settings: Settings, **overrides) -> "PerturbConfig":
        values = dict(
            boundary_jitter_sd=settings.get_float("BOUNDARY_JITTER_SD", cls.boundary_jitter_sd),
            label_flip_rate=settings.get_float("LABEL_FLIP_RATE", cls.label_flip_rate),
            word_sub_rate=settings.get_float("WORD_SUB_RATE", cls.word_sub_rate),
            seed=settings.get_int("SEED", cls.seed),
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass
class SyntheticDialogue:
    timeline: Timeline
    chunks: List[ChunkResult] = field(default_factory=list)
    streams: List[SpeakerWordStream] = field(default_factory=list)
    transcript: List[TranscriptSegment] = field(default_factory=list)
    conditions: str = ""

    @property
    def file_id(self) -> str:
        return self.timeline.file_id


@dataclass
class PerturbedDialogue(SyntheticDialogue):
    flip_mask: List[bool] = field(default_factory=list)
    substitution_mask: List[List[bool]] = field(default_factory=list)
    truth_segments: List[Segment] = field(default_factory=list)

    @property
    def substitutions(self) -> int:
        return sum(sum(mask) for mask in self.substitution_mask)

    @property
    def flipped_duration(self) -> float:
        """Reference time carried by segments whose label was flipped"""
        return sum(s.duration for s, flipped in zip(self.truth_segments, self.flip_mask) if flipped)

    def flip_errors(self, resolution: float = 0.001) -> Tuple[float, float]:
        """
        Confusion and miss that the label flips alone produce under a
        collar-free DER with the identity speaker mapping.

        The truth is swept with each segment carrying its perturbed label.
        Flipped time landing on a speaker who is already active is a miss;
        the rest of the flipped time is confusion. Boundary jitter is
        ignored, so this is exact only for perturbations without it.
        """
        if not self.truth_segments:
            return 0.0, 0.0
        num_frames = int(round(max(s.offset for s in self.truth_segments) / resolution))
        speakers = sorted({s.speaker for s in self.truth_segments})
        ref = np.zeros((num_frames, len(speakers)), dtype=bool)
        hyp = np.zeros_like(ref)
        for segment, flipped in zip(self.truth_segments, self.flip_mask):
            span = slice(int(round(segment.onset / resolution)), int(round(segment.offset / resolution)))
            j = speakers.index(segment.speaker)
            ref[span, j] = True
            hyp[span, (j + 1) % len(speakers) if flipped else j] = True
        n_ref, n_hyp = ref.sum(axis=1), hyp.sum(axis=1)
        correct = (ref & hyp).sum(axis=1)
        confusion = int((np.minimum(n_ref, n_hyp) - correct).sum())
        miss = int(np.maximum(n_ref - n_hyp, 0).sum())
        return confusion * resolution, miss * resolution


def _state_frames(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-frame activity state"""
    probabilities = cfg.state_probabilities
    states, dwells = [], []
    total = 0.0
    while total < cfg.duration:
        state = int(rng.choice(4, p=probabilities))
        dwell = float(rng.exponential(cfg.mean_turn))
        if states and states[-1] == state:
            dwells[-1] += dwell
        else:
            states.append(state)
            dwells.append(dwell)
        total += dwell

    states_arr, dwells_arr = np.array(states), np.array(dwells)
    for state in range(4):
        mask = states_arr == state
        realized = dwells_arr[mask].sum()
        if realized > 0:
            dwells_arr[mask] *= probabilities[state] * cfg.duration / realized
    dwells_arr *= cfg.duration / dwells_arr.sum()

    num_frames = int(round(cfg.duration / cfg.frame_duration))
    bounds = np.rint(np.cumsum(dwells_arr) / cfg.frame_duration).astype(np.int64)
    bounds[-1] = num_frames
    frames = np.empty(num_frames, dtype=np.int64)
    start = 0
    for state, stop in zip(states_arr, bounds):
        frames[start:stop] = state
        start = stop
    return frames


def _words(count: int, cfg: SynthConfig, rng: np.random.Generator) -> List[str]:
    if cfg.lexicon:
        return [cfg.lexicon[i] for i in rng.integers(len(cfg.lexicon), size=count)]
    return [f"w{i:03d}" for i in rng.integers(_ABSTRACT_VOCABULARY, size=count)]


def _streams(transcript: Sequence[TranscriptSegment], speakers: Sequence[str]) -> List[SpeakerWordStream]:
    words = {speaker: [] for speaker in speakers}
    for segment in transcript:
        words.setdefault(segment.speaker, []).extend(
            split_interval(segment.onset, segment.offset, segment.text.split(), segment.speaker)
        )
    return [SpeakerWordStream(speaker, words[speaker]) for speaker in sorted(words)]


def _chunks(activity: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> List[ChunkResult]:
    direction = rng.normal(size=cfg.embedding_dim)
    direction /= np.linalg.norm(direction)
    half = cfg.cluster_separation * cfg.embedding_spread / 2
    centers = np.stack([half * direction, -half * direction])

    chunk_frames = int(round(cfg.chunk_duration / cfg.frame_duration))
    hop_frames = int(round(cfg.hop / cfg.frame_duration))
    chunks = []
    for chunk_id, start in enumerate(range(0, activity.shape[0], hop_frames)):
        stop = min(start + chunk_frames, activity.shape[0])
        # local column j holds global speaker perm[j]
        perm = rng.permutation(2)
        local = activity[start:stop][:, perm]
        embeddings = {}
        for j in range(2):
            noise = rng.normal(scale=cfg.embedding_spread, size=cfg.embedding_dim)
            if local[:, j].any():
                embeddings[j] = centers[perm[j]] + noise
        chunks.append(ChunkResult(
            chunk_id,
            FrameActivity(local, cfg.frame_duration, round(start * cfg.frame_duration, 6)),
            embeddings,
        ))
        if stop == activity.shape[0]:
            break
    return chunks


def gen_conversation(cfg: SynthConfig) -> SyntheticDialogue:
    """Generate one conversation; identical configs give identical output"""
    rng = np.random.default_rng(cfg.seed)
    activity = _STATE_ACTIVITY[_state_frames(cfg, rng)]
    timeline = to_timeline(FrameActivity(activity, cfg.frame_duration), 0.5,
                           list(cfg.speaker_names), cfg.file_id)

    transcript = []
    for index, segment in enumerate(timeline):
        count = max(1, int(round(segment.duration * cfg.words_per_second)))
        transcript.append(TranscriptSegment(index, segment.speaker, " ".join(_words(count, cfg, rng)),
                                            segment.onset, segment.offset))
    conditions = " ".join(
        f"c{i:03d}" for i in rng.choice(_CONDITION_VOCABULARY, size=min(cfg.num_conditions, _CONDITION_VOCABULARY),
                                        replace=False)
    )
    chunks = _chunks(activity, cfg, rng)

    logger.info("conversation_generated", file_id=cfg.file_id, seed=cfg.seed,
                segments=len(timeline), chunks=len(chunks))
    return SyntheticDialogue(timeline, chunks, _streams(transcript, cfg.speaker_names),
                             transcript, conditions)


def generate_corpus(cfg: SynthConfig, count: int, jobs: int = 1) -> List[SyntheticDialogue]:
    """`count` conversations seeded seed, seed+1, ... with numbered file ids"""
    configs = [replace(cfg, seed=cfg.seed + i, file_id=f"{cfg.file_id}_{i:03d}") for i in range(count)]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(gen_conversation, configs))


def occupancy(timeline: Timeline, duration: float, frame_duration: float = 0.001) -> dict:
    """Fractions of [0, duration) with zero, one and several active speakers"""
    num_frames = int(round(duration / frame_duration))
    counts = np.zeros(num_frames, dtype=np.int64)
    for speaker_segments in timeline.by_speaker().values():
        active = np.zeros(num_frames, dtype=bool)
        for s in speaker_segments:
            active[int(round(s.onset / frame_duration)):int(round(s.offset / frame_duration))] = True
        counts += active
    return {
        'silence': float(np.mean(counts == 0)),
        'single': float(np.mean(counts == 1)),
        'overlap': float(np.mean(counts >= 2)),
    }


def _jitter(rng: np.random.Generator, sd: float) -> Tuple[float, float]:
    draws = rng.normal(size=2)
    return tuple(float(np.clip(d, -2.0, 2.0) * sd) for d in draws)


def perturb(truth: SyntheticDialogue, p: PerturbConfig) -> PerturbedDialogue:
    """
    Jitter boundaries, flip speaker labels and substitute words.

    Random draws happen in a fixed order (per segment: two boundary draws and
    one flip draw; then per transcript word; then per condition token), so the
    realized masks depend only on the truth and the seed. A flipped segment
    takes the next speaker label in sorted order; a substituted token gets a
    trailing SUBSTITUTION_MARK.
    """
    rng = np.random.default_rng(p.seed)
    speakers = truth.timeline.speakers()
    segments, flips = [], []
    for segment in truth.timeline:
        shift_on, shift_off = _jitter(rng, p.boundary_jitter_sd)
        flipped = bool(rng.random() < p.label_flip_rate) and len(speakers) > 1
        onset = max(0.0, round(segment.onset + shift_on, 3))
        offset = max(round(segment.offset + shift_off, 3), round(onset + 0.001, 3))
        speaker = speakers[(speakers.index(segment.speaker) + 1) % len(speakers)] if flipped else segment.speaker
        segments.append(Segment(onset, offset - onset, speaker, segment.file_id))
        flips.append(flipped)

    # transcript segments follow timeline order
    transcript, masks = [], []
    for k, original in enumerate(truth.transcript):
        tokens, mask = [], []
        for token in original.text.split():
            substituted = bool(rng.random() < p.word_sub_rate)
            tokens.append(token + SUBSTITUTION_MARK if substituted else token)
            mask.append(substituted)
        if k < len(segments):
            moved = segments[k]
            transcript.append(TranscriptSegment(original.index, moved.speaker, " ".join(tokens),
                                                moved.onset, moved.offset))
        else:
            transcript.append(TranscriptSegment(original.index, original.speaker, " ".join(tokens),
                                                original.onset, original.offset))
        masks.append(mask)

    conditions = " ".join(
        token + SUBSTITUTION_MARK if rng.random() < p.word_sub_rate else token
        for token in truth.conditions.split()
    )

    hypothesis = PerturbedDialogue(
        timeline=Timeline(truth.timeline.file_id, segments),
        streams=_streams(transcript, speakers),
        transcript=transcript,
        conditions=conditions,
        flip_mask=flips,
        substitution_mask=masks,
        truth_segments=list(truth.timeline),
    )
    logger.info("dialogue_perturbed", file_id=truth.file_id, seed=p.seed,
                flips=sum(flips), substitutions=hypothesis.substitutions)
    return hypothesis


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')


def _write_reference(directory: Path, dialogue: SyntheticDialogue):
    _write(directory / "reference.rttm", emit_rttm(dialogue.timeline))
    _write(directory / "reference.transcript.jsonl", emit_transcript(dialogue.transcript))
    _write(directory / "reference.words.jsonl", emit_word_streams(dialogue.streams))
    _write(directory / "reference.conditions.jsonl",
           emit_conditions({dialogue.file_id: dialogue.conditions}))


def _write_system(directory: Path, dialogue: SyntheticDialogue):
    _write(directory / "transcript.jsonl", emit_transcript(dialogue.transcript))
    _write(directory / "words.jsonl", emit_word_streams(dialogue.streams))
    _write(directory / "conditions.jsonl", emit_conditions({dialogue.file_id: dialogue.conditions}))


def write_dialogue(directory: Union[str, Path], dialogue: SyntheticDialogue) -> Path:
    """
    Write a generated conversation as <directory>/<file_id>/: reference files,
    the chunk bundle under chunks/, and the truth transcript as system output
    """
    target = Path(directory) / dialogue.file_id
    _write_reference(target, dialogue)
    write_chunk_bundle(target / "chunks", dialogue.file_id, dialogue.chunks)
    _write_system(target, dialogue)
    return target


def read_reference(directory: Union[str, Path]) -> SyntheticDialogue:
    """Read the reference side of a dialogue directory"""
    directory = Path(directory)
    timeline = parse_rttm(read_text(directory / "reference.rttm"), str(directory / "reference.rttm"))
    transcript = parse_transcript(read_text(directory / "reference.transcript.jsonl"),
                                  source=str(directory / "reference.transcript.jsonl"))
    conditions_path = directory / "reference.conditions.jsonl"
    conditions = ""
    if conditions_path.exists():
        conditions = read_conditions(read_text(conditions_path), str(conditions_path)).get(timeline.file_id, "")
    return SyntheticDialogue(timeline, [], _streams(transcript, timeline.speakers()), transcript, conditions)


def write_hypothesis(directory: Union[str, Path], hypothesis: PerturbedDialogue,
                     truth: SyntheticDialogue) -> Path:
    """Write truth references plus the perturbed system outputs and realized masks"""
    target = Path(directory) / truth.file_id
    _write_reference(target, truth)
    _write(target / "diarization.rttm", emit_rttm(hypothesis.timeline))
    _write_system(target, hypothesis)
    _write(target / "perturbation.json", json.dumps({
        'flip_mask': hypothesis.flip_mask,
        'flipped_duration': round(hypothesis.flipped_duration, 3),
        'substitutions': hypothesis.substitutions,
    }, sort_keys=True) + "\n")
    return target

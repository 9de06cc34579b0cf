"""
Powerset codec: multilabel speaker activity <-> single-label subset classes.

Classes are ordered by subset size, then lexicographically by ascending
speaker index, so for K=2 the classes are {}, {0}, {1}, {0, 1}. Posterior
files produced elsewhere must follow this order.
"""
import struct
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import structlog

from .errors import EncodingError, ParseError, ShapeError, ValidationError
from .segio import decode_text

logger = structlog.get_logger(__name__)

BINARY_MAGIC = b"DKPS"
_HEADER = struct.Struct("<4sHHddI")


@dataclass(frozen=True)
class PowersetConfig:
    num_speakers: int = 2
    max_simultaneous: int = 2

    def __post_init__(self):
        if self.num_speakers < 1:
            raise ValidationError(f"num_speakers must be >= 1, got {self.num_speakers}")
        if not 1 <= self.max_simultaneous <= self.num_speakers:
            raise ValidationError(
                f"max_simultaneous must lie in [1, {self.num_speakers}], got {self.max_simultaneous}"
            )

    @property
    def class_count(self) -> int:
        return class_count(self)


@dataclass
class FrameActivity:
    """Per-frame speaker activity (frames x speakers, values in [0, 1])"""

    matrix: np.ndarray
    frame_duration: float
    start_time: float = 0.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError(f"Activity must be a frames x speakers matrix, got shape {self.matrix.shape}")
        if self.frame_duration <= 0:
            raise ValidationError(f"frame_duration must be positive, got {self.frame_duration}")
        if self.start_time < 0:
            raise ValidationError(f"start_time must be non-negative, got {self.start_time}")
        if not np.all(np.isfinite(self.matrix)) or np.any(self.matrix < 0) or np.any(self.matrix > 1):
            raise ValidationError("Activity values must be finite and within [0, 1]")

    @property
    def num_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_speakers(self) -> int:
        return self.matrix.shape[1]

    @property
    def end_time(self) -> float:
        return self.start_time + self.num_frames * self.frame_duration

    def binarize(self, threshold: float = 0.5) -> "FrameActivity":
        return FrameActivity(
            (self.matrix >= threshold).astype(np.float64), self.frame_duration, self.start_time
        )


@lru_cache(maxsize=None)
def _subsets(num_speakers: int, max_simultaneous: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(
        subset
        for size in range(max_simultaneous + 1)
        for subset in combinations(range(num_speakers), size)
    )


@lru_cache(maxsize=None)
def _index(num_speakers: int, max_simultaneous: int) -> Dict[Tuple[int, ...], int]:
    return {subset: i for i, subset in enumerate(_subsets(num_speakers, max_simultaneous))}


def class_count(cfg: PowersetConfig) -> int:
    return sum(comb(cfg.num_speakers, i) for i in range(cfg.max_simultaneous + 1))


def encode(active: Sequence[int], cfg: PowersetConfig) -> int:
    """Class index of a binary speaker vector"""
    vector = np.asarray(active)
    if vector.shape != (cfg.num_speakers,):
        raise ShapeError(f"Expected {cfg.num_speakers} speaker flags, got shape {vector.shape}")
    if not np.all((vector == 0) | (vector == 1)):
        raise EncodingError(f"Speaker flags must be binary, got {vector.tolist()}")
    subset = tuple(int(i) for i in np.flatnonzero(vector))
    if len(subset) > cfg.max_simultaneous:
        raise EncodingError(
            f"{len(subset)} simultaneous speakers exceed max_simultaneous={cfg.max_simultaneous}"
        )
    return _index(cfg.num_speakers, cfg.max_simultaneous)[subset]


def decode(idx: int, cfg: PowersetConfig) -> np.ndarray:
    """Binary speaker vector of a class index"""
    if not 0 <= idx < class_count(cfg):
        raise EncodingError(f"Class index {idx} outside [0, {class_count(cfg)})")
    vector = np.zeros(cfg.num_speakers, dtype=np.int64)
    vector[list(_subsets(cfg.num_speakers, cfg.max_simultaneous)[idx])] = 1
    return vector


def mapping_matrix(cfg: PowersetConfig) -> np.ndarray:
    """class_count x K matrix whose row c is decode(c)"""
    return np.stack([decode(c, cfg) for c in range(class_count(cfg))])


def class_permutation(perm: Sequence[int], cfg: PowersetConfig) -> List[int]:
    """
    Class permutation induced by reordering speaker columns.

    If new column j holds old column perm[j], a class c maps to
    class_permutation(perm, cfg)[c].
    """
    perm = list(perm)
    if sorted(perm) != list(range(cfg.num_speakers)):
        raise ValidationError(f"Not a permutation of {cfg.num_speakers} speakers: {perm}")
    inverse = {old: new for new, old in enumerate(perm)}
    index = _index(cfg.num_speakers, cfg.max_simultaneous)
    return [
        index[tuple(sorted(inverse[s] for s in subset))]
        for subset in _subsets(cfg.num_speakers, cfg.max_simultaneous)
    ]


def decode_frames(posteriors: np.ndarray, cfg: PowersetConfig, frame_duration: float = 0.02,
                  start_time: float = 0.0) -> FrameActivity:
    """Per-frame argmax (lowest class wins ties), then decode each frame"""
    scores = np.asarray(posteriors, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != class_count(cfg):
        raise ShapeError(
            f"Posteriors must have {class_count(cfg)} columns, got shape {scores.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise ValidationError("Posteriors contain non-finite values")
    # np.argmax returns the first maximum
    classes = np.argmax(scores, axis=1) if scores.shape[0] else np.zeros(0, dtype=np.int64)
    return FrameActivity(mapping_matrix(cfg)[classes], frame_duration, start_time)


def onehot_posteriors(activity: np.ndarray, cfg: PowersetConfig) -> np.ndarray:
    """One-hot powerset posteriors of a binary frames x K activity matrix"""
    matrix = np.asarray(activity)
    out = np.zeros((matrix.shape[0], class_count(cfg)), dtype=np.float64)
    for t, row in enumerate(matrix):
        out[t, encode((row >= 0.5).astype(np.int64), cfg)] = 1.0
    return out


@dataclass(frozen=True)
class PosteriorHeader:
    num_speakers: int
    max_simultaneous: int
    frame_duration: float
    start_time: float
    num_frames: int

    @property
    def powerset(self) -> PowersetConfig:
        return PowersetConfig(self.num_speakers, self.max_simultaneous)


def write_posteriors(path: Union[str, Path], posteriors: np.ndarray, header: PosteriorHeader,
                     binary: bool = True):
    """Write posteriors as the binary frame format or a dense text grid"""
    scores = np.asarray(posteriors, dtype=np.float64)
    expected = (header.num_frames, class_count(header.powerset))
    if scores.shape != expected:
        raise ShapeError(f"Posteriors shape {scores.shape} does not match header {expected}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if binary:
        packed = _HEADER.pack(BINARY_MAGIC, header.num_speakers, header.max_simultaneous,
                              header.frame_duration, header.start_time, header.num_frames)
        path.write_bytes(packed + scores.astype('<f8').tobytes())
        return

    lines = [
        f"# num_speakers={header.num_speakers} max_simultaneous={header.max_simultaneous} "
        f"frame_duration={header.frame_duration!r} start_time={header.start_time!r}"
    ]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in scores)
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')


def read_posteriors(path: Union[str, Path]) -> Tuple[PosteriorHeader, np.ndarray]:
    """Read either posterior format, detected by the binary magic"""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == BINARY_MAGIC:
        header, scores = _read_binary(data, str(path))
    else:
        header, scores = _read_grid(decode_text(data, str(path)), str(path))
    logger.debug("posteriors_read", path=str(path), frames=header.num_frames)
    return header, scores


def _read_binary(data: bytes, source: str) -> Tuple[PosteriorHeader, np.ndarray]:
    if len(data) < _HEADER.size:
        raise ParseError("truncated posterior header", 1, source)
    _, k, m, frame_duration, start_time, frames = _HEADER.unpack_from(data)
    header = PosteriorHeader(k, m, frame_duration, start_time, frames)
    columns = class_count(header.powerset)
    payload = len(data) - _HEADER.size
    if payload % 8 or payload // 8 != frames * columns:
        raise ShapeError(
            f"{source}: expected {frames} x {columns} values, found {payload / 8:g}"
        )
    body = np.frombuffer(data, dtype='<f8', offset=_HEADER.size)
    return header, body.reshape(frames, columns).astype(np.float64)


def _read_grid(text: str, source: str) -> Tuple[PosteriorHeader, np.ndarray]:
    lines = text.lstrip('\ufeff').splitlines()
    if not lines or not lines[0].startswith('#'):
        raise ParseError("missing '# num_speakers=... frame_duration=...' header", 1, source)

    fields = {}
    for token in lines[0][1:].split():
        key, _, value = token.partition('=')
        fields[key] = value
    try:
        k = int(fields['num_speakers'])
        m = int(fields.get('max_simultaneous', k))
        frame_duration = float(fields['frame_duration'])
        start_time = float(fields.get('start_time', 0.0))
    except (KeyError, ValueError) as e:
        raise ParseError(f"bad posterior header: {e}", 1, source)

    rows = []
    for line_number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError:
            raise ParseError("non-numeric posterior value", line_number, source)

    header = PosteriorHeader(k, m, frame_duration, start_time, len(rows))
    columns = class_count(header.powerset)
    if any(len(row) != columns for row in rows):
        raise ShapeError(f"{source}: every row needs {columns} values")
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), columns)

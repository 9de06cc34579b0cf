"""
EEND-VC stitching: cluster chunk-local speaker embeddings, map chunk activity
onto global speakers and merge the chunks into one timeline
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from .config import Settings
from .errors import ParseError, ShapeError, ValidationError
from .powerset import (
    FrameActivity,
    PosteriorHeader,
    decode_frames,
    onehot_posteriors,
    read_posteriors,
    write_posteriors,
)
from .segio import Segment, Timeline

logger = structlog.get_logger(__name__)

DEFAULT_N_INIT = 50

ChunkKey = Tuple[int, int]


@dataclass
class ChunkResult:
    """Local diarization of one chunk plus embeddings of its local speakers"""

    chunk_id: int
    activity: FrameActivity
    embeddings: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        vectors = {}
        for speaker, vector in self.embeddings.items():
            if not 0 <= int(speaker) < self.activity.num_speakers:
                raise ValidationError(
                    f"Chunk {self.chunk_id}: embedding for unknown local speaker {speaker}"
                )
            vectors[int(speaker)] = np.asarray(vector, dtype=np.float64).ravel()
        if len({v.shape[0] for v in vectors.values()}) > 1:
            raise ShapeError(f"Chunk {self.chunk_id}: embedding dimensions differ")
        self.embeddings = vectors

    @property
    def start_time(self) -> float:
        return self.activity.start_time

    @property
    def end_time(self) -> float:
        return self.activity.end_time


@dataclass
class ClusterAssignment:
    labels: Dict[Hashable, int]
    centroids: np.ndarray
    inertia: float
    iterations: int = 0
    degenerate: List[Hashable] = field(default_factory=list)


@dataclass(frozen=True)
class StitchConfig:
    k: int = 2
    seed: int = 0
    n_init: int = DEFAULT_N_INIT
    max_iter: int = 300
    threshold: float = 0.5
    min_duration: float = 0.4
    max_gap: float = 0.0
    speaker_names: Optional[Tuple[str, ...]] = None

    KEYS = ("K", "SEED", "N_INIT", "MAX_ITER", "THRESHOLD", "MIN_DURATION", "MAX_GAP",
            "SPEAKER_NAMES")

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.n_init < 1 or self.max_iter < 1:
            raise ValidationError("n_init and max_iter must be >= 1")
        if not 0 < self.threshold < 1:
            raise ValidationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.min_duration < 0 or self.max_gap < 0:
            raise ValidationError("min_duration and max_gap must be non-negative")

    @classmethod
    def from_settings(cls, settings: Settings, **overrides) -> "StitchConfig":
        names = settings.get_str("SPEAKER_NAMES")
        values = dict(
            k=settings.get_int("K", cls.k),
            seed=settings.get_int("SEED", cls.seed),
            n_init=settings.get_int("N_INIT", cls.n_init),
            max_iter=settings.get_int("MAX_ITER", cls.max_iter),
            threshold=settings.get_float("THRESHOLD", cls.threshold),
            min_duration=settings.get_float("MIN_DURATION", cls.min_duration),
            max_gap=settings.get_float("MAX_GAP", cls.max_gap),
            speaker_names=tuple(names.split(",")) if names else None,
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


def length_normalize(v: Sequence[float]) -> Tuple[np.ndarray, bool]:
    """
    Scale a vector to unit Euclidean norm.

    Returns the vector and a flag that is True when the input was all zeros
    (returned unchanged).
    """
    vector = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(vector)):
        raise ValidationError("Embedding contains non-finite values")
    norm = np.linalg.norm(vector)
    if norm == 0:
        logger.warning("zero_embedding", dim=vector.shape[0])
        return vector.copy(), True
    return vector / norm, False


def _sq_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((X[:, np.newaxis, :] - centroids[np.newaxis, :, :]) ** 2).sum(axis=2)


def _kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every remaining point coincides with a centroid
            idx = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(idx)
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int) -> Tuple[np.ndarray, np.ndarray, int]:
    labels = None
    iteration = 0
    for iteration in range(1, max_iter + 1):
        new_labels = np.argmin(_sq_distances(X, centroids), axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(centroids.shape[0]):
            members = X[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                farthest = int(np.argmax(((X - centroids[j]) ** 2).sum(axis=1)))
                logger.debug("empty_cluster_reseeded", cluster=j, point=farthest)
                centroids[j] = X[farthest]
    labels = np.argmin(_sq_distances(X, centroids), axis=1)
    return labels, centroids, iteration


def _transfer(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray,
              max_iter: int) -> Tuple[np.ndarray, np.ndarray]:
    """Single-point moves between clusters, taken while one strictly lowers inertia"""
    labels = labels.copy()
    centroids = centroids.copy()
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    for j in range(k):
        if counts[j]:
            centroids[j] = X[labels == j].mean(axis=0)

    for _ in range(max_iter):
        moved = False
        for i in range(X.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            distances = ((centroids - X[i]) ** 2).sum(axis=1)
            removal = counts[a] / (counts[a] - 1) * distances[a]
            addition = counts / (counts + 1) * distances
            addition[a] = np.inf
            b = int(np.argmin(addition))
            if removal - addition[b] <= 1e-12 * (1.0 + removal):
                continue
            centroids[a] = (centroids[a] * counts[a] - X[i]) / (counts[a] - 1)
            centroids[b] = (centroids[b] * counts[b] + X[i]) / (counts[b] + 1)
            counts[a] -= 1
            counts[b] += 1
            labels[i] = b
            moved = True
        if not moved:
            break

    # exact means after the incremental updates
    for j in range(k):
        if counts[j]:
            centroids[j] = X[labels == j].mean(axis=0)
    return labels, centroids


def kmeans(points: Sequence[Sequence[float]], k: int, seed: int = 0,
           keys: Optional[Sequence[Hashable]] = None, max_iter: int = 300,
           n_init: int = DEFAULT_N_INIT) -> ClusterAssignment:
    """
    Seeded Lloyd k-means from k-means++ starts.

    Runs n_init restarts drawn from one generator seeded with `seed` and keeps
    the lowest inertia. Each run stops at an assignment fixpoint or after
    max_iter iterations, then moves single points between clusters while a
    move strictly lowers inertia. Labels are keyed by `keys` (point indices by default).
    """
    try:
        X = np.asarray(points, dtype=np.float64)
    except ValueError:
        raise ShapeError("All points must share one dimension")
    if X.ndim != 2:
        raise ShapeError(f"Points must form an n x d matrix, got shape {X.shape}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if X.shape[0] < k:
        raise ValidationError(f"Need at least k={k} points, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("Points contain non-finite values")
    keys = list(range(X.shape[0])) if keys is None else list(keys)
    if len(keys) != X.shape[0]:
        raise ValidationError("keys and points differ in length")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centroids, iterations = _lloyd(X, _kmeans_plus_plus(X, k, rng), max_iter)
        labels, centroids = _transfer(X, labels, centroids, max_iter)
        inertia = float(((X - centroids[labels]) ** 2).sum())
        if best is None or inertia < best[0]:
            best = (inertia, labels, centroids, iterations)

    inertia, labels, centroids, iterations = best
    return ClusterAssignment(
        labels={key: int(label) for key, label in zip(keys, labels)},
        centroids=centroids,
        inertia=inertia,
        iterations=iterations,
    )


def cluster_chunks(chunks: Sequence[ChunkResult], k: int = 2, seed: int = 0,
                   n_init: int = DEFAULT_N_INIT, max_iter: int = 300) -> ClusterAssignment:
    """Cluster length-normalized local-speaker embeddings of all chunks"""
    keys: List[ChunkKey] = sorted(
        (chunk.chunk_id, speaker) for chunk in chunks for speaker in chunk.embeddings
    )
    if not keys:
        raise ValidationError("No embeddings to cluster")
    by_id = {chunk.chunk_id: chunk for chunk in chunks}
    if len({by_id[c].embeddings[s].shape[0] for c, s in keys}) > 1:
        raise ShapeError("Embedding dimension differs across chunks")

    vectors, degenerate = [], []
    for key in keys:
        vector, is_zero = length_normalize(by_id[key[0]].embeddings[key[1]])
        vectors.append(vector)
        if is_zero:
            degenerate.append(key)

    asg = kmeans(vectors, k, seed=seed, keys=keys, max_iter=max_iter, n_init=n_init)

    # number clusters by their smallest member key
    order: Dict[int, int] = {}
    for key in keys:
        order.setdefault(asg.labels[key], len(order))
    for cluster in range(k):
        order.setdefault(cluster, len(order))
    centroids = np.empty_like(asg.centroids)
    for old, new in order.items():
        centroids[new] = asg.centroids[old]

    logger.info("chunks_clustered", points=len(keys), k=k, inertia=asg.inertia,
                iterations=asg.iterations)
    return ClusterAssignment(
        labels={key: order[label] for key, label in asg.labels.items()},
        centroids=centroids,
        inertia=asg.inertia,
        iterations=asg.iterations,
        degenerate=degenerate,
    )


def relabel(chunks: Sequence[ChunkResult], asg: ClusterAssignment, k: int) -> FrameActivity:
    """
    Project chunk-local activity onto k global speakers.

    Local speakers sharing a cluster merge by per-frame maximum; frames covered
    by several chunks take the mean of the chunks' values.
    """
    if not chunks:
        raise ValidationError("No chunks to relabel")
    frame_duration = chunks[0].activity.frame_duration
    for chunk in chunks:
        if not math.isclose(chunk.activity.frame_duration, frame_duration,
                            rel_tol=1e-9, abs_tol=1e-12):
            raise ValidationError(
                f"Chunk {chunk.chunk_id} frame_duration {chunk.activity.frame_duration} "
                f"differs from {frame_duration}"
            )

    start = min(chunk.start_time for chunk in chunks)
    end = max(chunk.end_time for chunk in chunks)
    total = int(round((end - start) / frame_duration))
    sums = np.zeros((total, k))
    coverage = np.zeros(total)

    for chunk in sorted(chunks, key=lambda c: c.chunk_id):
        local = np.zeros((chunk.activity.num_frames, k))
        for speaker in range(chunk.activity.num_speakers):
            column = chunk.activity.matrix[:, speaker]
            cluster = asg.labels.get((chunk.chunk_id, speaker))
            if cluster is None:
                if column.any():
                    logger.warning("speaker_without_embedding_dropped",
                                   chunk_id=chunk.chunk_id, speaker=speaker)
                continue
            if not 0 <= cluster < k:
                raise ValidationError(f"Cluster {cluster} outside [0, {k})")
            local[:, cluster] = np.maximum(local[:, cluster], column)

        offset = int(round((chunk.start_time - start) / frame_duration))
        stop = min(offset + chunk.activity.num_frames, total)
        sums[offset:stop] += local[:stop - offset]
        coverage[offset:stop] += 1

    return FrameActivity(sums / np.maximum(coverage, 1)[:, np.newaxis], frame_duration, start)


def to_timeline(fa: FrameActivity, threshold: float = 0.5,
                speaker_names: Optional[Sequence[str]] = None, file_id: str = "") -> Timeline:
    """Maximal runs of frames at or above threshold become segments"""
    if not 0 < threshold < 1:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    names = list(speaker_names) if speaker_names else [f"spk{j}" for j in range(fa.num_speakers)]
    if len(names) != fa.num_speakers:
        raise ValidationError(f"{len(names)} speaker names for {fa.num_speakers} activity columns")

    segments = []
    for j, name in enumerate(names):
        active = (fa.matrix[:, j] >= threshold).astype(np.int8)
        edges = np.diff(np.concatenate(([0], active, [0])))
        for first, stop in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            onset = round(fa.start_time + first * fa.frame_duration, 3)
            offset = round(fa.start_time + stop * fa.frame_duration, 3)
            segments.append(Segment(onset, offset - onset, name, file_id))
    return Timeline(file_id, segments)


def filter_segments(t: Timeline, min_dur: float = 0.4, max_gap: float = 0.0) -> Timeline:
    """Bridge same-speaker gaps shorter than max_gap, then drop segments shorter than min_dur"""
    if min_dur < 0 or max_gap < 0:
        raise ValidationError("min_dur and max_gap must be non-negative")
    min_ms = int(round(min_dur * 1000))
    gap_ms = int(round(max_gap * 1000))

    kept, dropped = [], 0
    for speaker, segments in sorted(t.by_speaker().items()):
        spans: List[List[int]] = []
        for segment in segments:
            if spans and gap_ms > 0 and segment.onset_ms - spans[-1][1] < gap_ms:
                spans[-1][1] = max(spans[-1][1], segment.offset_ms)
            else:
                spans.append([segment.onset_ms, segment.offset_ms])
        for onset, offset in spans:
            if offset - onset < min_ms:
                dropped += 1
                continue
            kept.append(Segment(onset / 1000, (offset - onset) / 1000, speaker, t.file_id))

    logger.debug("segments_filtered", file_id=t.file_id, kept=len(kept), dropped=dropped)
    return Timeline(t.file_id, kept)


def stitch_pipeline(chunks: Sequence[ChunkResult], config: Optional[StitchConfig] = None,
                    file_id: str = "") -> Timeline:
    """length_normalize -> kmeans -> relabel -> to_timeline -> filter_segments"""
    config = config or StitchConfig()
    if not chunks:
        raise ValidationError("stitch_pipeline needs at least one chunk")

    embedded = sum(len(chunk.embeddings) for chunk in chunks)
    if embedded == 0:
        logger.warning("no_embeddings", file_id=file_id, chunks=len(chunks))
        return Timeline(file_id)
    k = config.k
    if embedded < k:
        logger.warning("cluster_count_clamped", file_id=file_id, requested=k, available=embedded)
        k = embedded

    asg = cluster_chunks(chunks, k, seed=config.seed, n_init=config.n_init,
                         max_iter=config.max_iter)
    activity = relabel(chunks, asg, k)
    names = list(config.speaker_names)[:k] if config.speaker_names else None
    timeline = to_timeline(activity, config.threshold, names, file_id)
    stitched = filter_segments(timeline, config.min_duration, config.max_gap)
    logger.info("stitched", file_id=file_id, chunks=len(chunks), segments=len(stitched))
    return stitched


@dataclass
class ChunkBundle:
    file_id: str
    chunks: List[ChunkResult]


def load_chunk_bundle(manifest_path: Union[str, Path]) -> ChunkBundle:
    """Read a chunk manifest with its posterior and embedding files"""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid manifest JSON: {e.msg}", e.lineno, str(manifest_path))

    root = manifest_path.parent
    chunks = []
    for entry in manifest.get('chunks', []):
        header, scores = read_posteriors(root / entry['posteriors'])
        start_time = float(entry.get('start_time', header.start_time))
        activity = decode_frames(scores, header.powerset, header.frame_duration, start_time)

        embeddings = {}
        if entry.get('embeddings'):
            raw = json.loads((root / entry['embeddings']).read_text(encoding='utf-8'))
            embeddings = {int(speaker): np.asarray(vector, dtype=np.float64)
                          for speaker, vector in raw.items()}
        chunks.append(ChunkResult(int(entry['chunk_id']), activity, embeddings))

    file_id = str(manifest.get('file_id', ""))
    logger.info("chunk_bundle_loaded", file_id=file_id, chunks=len(chunks))
    return ChunkBundle(file_id, chunks)


def write_chunk_bundle(directory: Union[str, Path], file_id: str, chunks: Sequence[ChunkResult],
                       max_simultaneous: Optional[int] = None, binary: bool = True) -> Path:
    """Write chunks as powerset posterior files plus embeddings and a manifest"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for chunk in chunks:
        k = chunk.activity.num_speakers
        header = PosteriorHeader(k, max_simultaneous or k, chunk.activity.frame_duration,
                                 chunk.start_time, chunk.activity.num_frames)
        name = f"chunk_{chunk.chunk_id:04d}"
        posteriors = f"{name}.ps" if binary else f"{name}.txt"
        write_posteriors(directory / posteriors,
                         onehot_posteriors(chunk.activity.matrix, header.powerset),
                         header, binary=binary)
        embeddings = f"{name}.emb.json"
        (directory / embeddings).write_text(json.dumps(
            {str(s): [float(x) for x in v] for s, v in sorted(chunk.embeddings.items())}
        ), encoding='utf-8')
        entries.append({'chunk_id': chunk.chunk_id, 'start_time': chunk.start_time,
                        'posteriors': posteriors, 'embeddings': embeddings})

    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps({'file_id': file_id, 'chunks': entries}, indent=2,
                                        sort_keys=True) + "\n", encoding='utf-8')
    return manifest_path

import numpy as np
import pytest

from dialogkit.config import Settings
from dialogkit.der import compute_der
from dialogkit.errors import ShapeError, ValidationError
from dialogkit.powerset import FrameActivity
from dialogkit.segio import Segment, Timeline
from dialogkit.stitch import (
    ChunkResult,
    ClusterAssignment,
    StitchConfig,
    cluster_chunks,
    filter_segments,
    kmeans,
    length_normalize,
    load_chunk_bundle,
    relabel,
    stitch_pipeline,
    to_timeline,
    write_chunk_bundle,
)
from dialogkit.synth import SynthConfig, gen_conversation


def _spans(timeline):
    return sorted((s.speaker, s.onset, s.offset) for s in timeline)


@pytest.fixture
def swapped_chunks():
    """Two back-to-back chunks whose local speaker order is swapped"""
    first = np.zeros((20, 2))
    first[:10, 0] = 1
    first[10:, 1] = 1
    second = first.copy()
    return [
        ChunkResult(0, FrameActivity(first, 0.1, 0.0),
                    {0: np.array([1.0, 0.1]), 1: np.array([0.1, 1.0])}),
        ChunkResult(1, FrameActivity(second, 0.1, 2.0),
                    {0: np.array([0.1, 1.0]), 1: np.array([1.0, 0.0])}),
    ]


def test_length_normalize():
    """Vectors are scaled to unit norm; zero vectors are flagged"""
    vector, is_zero = length_normalize([3.0, 4.0])
    assert np.allclose(vector, [0.6, 0.8])
    assert not is_zero
    vector, is_zero = length_normalize([0.0, 0.0])
    assert is_zero
    assert np.array_equal(vector, [0.0, 0.0])


def test_length_normalize_rejects_nan():
    """Non-finite embeddings are rejected"""
    with pytest.raises(ValidationError):
        length_normalize([np.nan, 1.0])


def test_kmeans_separates_obvious_clusters():
    """Two tight groups land in two clusters"""
    points = [[0, 0], [0, 1], [10, 10], [10, 11]]
    asg = kmeans(points, 2, seed=0)
    assert asg.labels[0] == asg.labels[1]
    assert asg.labels[2] == asg.labels[3]
    assert asg.labels[0] != asg.labels[2]
    assert asg.inertia == pytest.approx(1.0)


def test_kmeans_deterministic_for_seed():
    """The same seed gives the same labels and inertia"""
    rng = np.random.default_rng(11)
    points = rng.normal(size=(40, 3))
    a = kmeans(points, 3, seed=5)
    b = kmeans(points, 3, seed=5)
    assert a.labels == b.labels
    assert a.inertia == b.inertia


def test_kmeans_restarts_never_worse_than_first_run():
    """The kept restart has inertia no higher than the first one alone"""
    rng = np.random.default_rng(2)
    points = rng.normal(size=(60, 2))
    for seed in range(5):
        single = kmeans(points, 4, seed=seed, n_init=1)
        best = kmeans(points, 4, seed=seed, n_init=10)
        assert best.inertia <= single.inertia + 1e-12


def _lloyd_from_random_starts(points, k, restarts, rng):
    """Best inertia over plain Lloyd runs started from k distinct random points"""
    best = np.inf
    for _ in range(restarts):
        centroids = points[rng.choice(len(points), size=k, replace=False)].copy()
        for _ in range(300):
            distances = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            labels = distances.argmin(axis=1)
            if len(set(labels.tolist())) < k:
                break
            updated = np.array([points[labels == j].mean(axis=0) for j in range(k)])
            if np.array_equal(updated, centroids):
                break
            centroids = updated
        else:
            labels = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
        if len(set(labels.tolist())) < k:
            continue
        inertia = sum(((points[labels == j] - points[labels == j].mean(axis=0)) ** 2).sum()
                      for j in range(k))
        best = min(best, inertia)
    return best


def test_kmeans_matches_restart_oracle():
    """Inertia on random 2-D points reaches the best of 200 random-start Lloyd runs"""
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        points = rng.uniform(size=(50, 2))
        oracle = _lloyd_from_random_starts(points, 2, 200, rng)
        asg = kmeans(points, 2, seed=trial)
        assert asg.inertia <= oracle + 1e-9


def test_kmeans_identical_points():
    """Coincident points still yield k clusters without error"""
    asg = kmeans([[1.0, 1.0]] * 4, 2, seed=0)
    assert set(asg.labels) == {0, 1, 2, 3}
    assert asg.inertia == pytest.approx(0.0)


def test_kmeans_input_validation():
    """Too few points or ragged input are rejected"""
    with pytest.raises(ValidationError):
        kmeans([[0.0, 0.0]], 2)
    with pytest.raises(ShapeError):
        kmeans([[0.0, 0.0], [1.0]], 1)


def test_kmeans_custom_keys():
    """Labels are keyed by the supplied keys"""
    asg = kmeans([[0.0], [5.0]], 2, keys=["a", "b"])
    assert set(asg.labels) == {"a", "b"}


def test_cluster_chunks_canonical_numbering(swapped_chunks):
    """Cluster 0 holds the smallest (chunk, speaker) key"""
    asg = cluster_chunks(swapped_chunks, 2, seed=0)
    assert asg.labels[(0, 0)] == 0
    assert asg.labels[(0, 1)] == 1
    assert asg.labels[(1, 0)] == 1
    assert asg.labels[(1, 1)] == 0
    assert asg.degenerate == []


def test_cluster_chunks_records_zero_embeddings():
    """All-zero embeddings are clustered and reported"""
    chunk = ChunkResult(0, FrameActivity(np.ones((2, 2)), 0.1),
                        {0: np.zeros(2), 1: np.array([1.0, 0.0])})
    asg = cluster_chunks([chunk], 2)
    assert asg.degenerate == [(0, 0)]


def test_relabel_averages_overlapping_chunks():
    """Frames covered by two chunks take the mean of both"""
    activity = FrameActivity(np.array([[1, 0], [1, 0], [0, 1], [0, 1]]), 0.5, 0.0)
    later = FrameActivity(np.array([[1, 0], [1, 0], [0, 1], [0, 1]]), 0.5, 1.0)
    chunks = [ChunkResult(0, activity), ChunkResult(1, later)]
    asg = ClusterAssignment(labels={(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 0},
                            centroids=np.zeros((2, 2)), inertia=0.0)
    merged = relabel(chunks, asg, 2)
    assert merged.start_time == 0.0
    assert merged.matrix.tolist() == [[1, 0], [1, 0], [0, 1], [0, 1], [1, 0], [1, 0]]

    disagree = ClusterAssignment(labels={(0, 0): 0, (0, 1): 1, (1, 0): 0, (1, 1): 1},
                                 centroids=np.zeros((2, 2)), inertia=0.0)
    assert relabel(chunks, disagree, 2).matrix[2].tolist() == [0.5, 0.5]


def test_relabel_merges_same_cluster_by_max():
    """Two local speakers in one cluster combine by per-frame maximum"""
    chunk = ChunkResult(0, FrameActivity(np.array([[1, 0], [0, 1], [0, 0]]), 0.1))
    asg = ClusterAssignment(labels={(0, 0): 0, (0, 1): 0}, centroids=np.zeros((2, 1)),
                            inertia=0.0)
    merged = relabel([chunk], asg, 2)
    assert merged.matrix.tolist() == [[1, 0], [1, 0], [0, 0]]


def test_relabel_drops_speakers_without_embedding():
    """Active local speakers with no cluster contribute nothing"""
    chunk = ChunkResult(0, FrameActivity(np.array([[1, 1], [0, 1]]), 0.1))
    asg = ClusterAssignment(labels={(0, 0): 0}, centroids=np.zeros((1, 1)), inertia=0.0)
    assert relabel([chunk], asg, 1).matrix.tolist() == [[1], [0]]


def test_relabel_rejects_mixed_frame_durations():
    """All chunks must share one frame duration"""
    chunks = [ChunkResult(0, FrameActivity(np.ones((2, 1)), 0.1)),
              ChunkResult(1, FrameActivity(np.ones((2, 1)), 0.2, 0.2))]
    asg = ClusterAssignment(labels={(0, 0): 0, (1, 0): 0}, centroids=np.zeros((1, 1)),
                            inertia=0.0)
    with pytest.raises(ValidationError):
        relabel(chunks, asg, 1)


def test_to_timeline_runs():
    """Runs of active frames become segments with absolute times"""
    activity = FrameActivity(np.array([[1, 0], [1, 1], [0, 1], [0, 0], [1, 0]]), 0.5, 1.0)
    timeline = to_timeline(activity, speaker_names=["a", "b"], file_id="f")
    assert _spans(timeline) == [("a", 1.0, 2.0), ("a", 3.0, 3.5), ("b", 1.5, 2.5)]
    assert timeline.file_id == "f"


def test_to_timeline_threshold_is_inclusive():
    """Values equal to the threshold count as active"""
    activity = FrameActivity(np.array([[0.5], [0.49]]), 0.1)
    assert _spans(to_timeline(activity)) == [("spk0", 0.0, 0.1)]


def test_to_timeline_name_count_must_match():
    """One name per activity column"""
    with pytest.raises(ValidationError):
        to_timeline(FrameActivity(np.ones((2, 2)), 0.1), speaker_names=["a"])


def test_filter_segments_bridges_then_drops():
    """Short gaps are bridged before short segments are dropped"""
    timeline = Timeline("f", [
        Segment(0.0, 1.0, "A", "f"),
        Segment(1.1, 0.9, "A", "f"),
        Segment(5.0, 0.2, "A", "f"),
        Segment(0.5, 0.3, "B", "f"),
    ])
    bridged = filter_segments(timeline, min_dur=0.4, max_gap=0.2)
    assert _spans(bridged) == [("A", 0.0, 2.0)]
    plain = filter_segments(timeline, min_dur=0.4, max_gap=0.0)
    assert _spans(plain) == [("A", 0.0, 1.0), ("A", 1.1, 2.0)]


def test_filter_segments_keeps_exact_minimum():
    """A segment exactly min_dur long survives"""
    timeline = Timeline("f", [Segment(0.0, 0.4, "A", "f")])
    assert len(filter_segments(timeline, min_dur=0.4)) == 1


def test_to_timeline_matches_frame_recount():
    """Per speaker, segment time equals the active frame count and covers exactly the active frames"""
    rng = np.random.default_rng(17)
    for _ in range(200):
        frames, speakers = int(rng.integers(1, 60)), int(rng.integers(1, 4))
        matrix = rng.integers(0, 5, size=(frames, speakers)) / 4
        start = 0.02 * int(rng.integers(0, 100))
        timeline = to_timeline(FrameActivity(matrix, 0.02, start))
        by_speaker = timeline.by_speaker()
        for j in range(speakers):
            segments = by_speaker.get(f"spk{j}", [])
            active = matrix[:, j] >= 0.5
            assert sum(s.duration for s in segments) == pytest.approx(0.02 * active.sum(), abs=1e-6)
            for f in range(frames):
                center = start + (f + 0.5) * 0.02
                covered = any(s.onset <= center < s.offset for s in segments)
                assert covered == bool(active[f])


def _random_timeline(rng):
    matrix = (rng.random(size=(int(rng.integers(1, 200)), 2)) < 0.6).astype(float)
    return to_timeline(FrameActivity(matrix, 0.1), speaker_names=["A", "B"], file_id="f")


def test_filter_segments_is_idempotent():
    """A second filtering pass changes nothing"""
    rng = np.random.default_rng(29)
    for _ in range(300):
        timeline = _random_timeline(rng)
        min_dur = float(rng.choice([0.0, 0.2, 0.3, 0.5]))
        max_gap = float(rng.choice([0.0, 0.1, 0.2, 0.35]))
        once = filter_segments(timeline, min_dur, max_gap)
        twice = filter_segments(once, min_dur, max_gap)
        assert _spans(twice) == _spans(once)


def test_filter_segments_output_respects_limits():
    """Kept segments meet min_dur and same-speaker gaps are at least max_gap"""
    rng = np.random.default_rng(31)
    for _ in range(200):
        filtered = filter_segments(_random_timeline(rng), 0.3, 0.2)
        for segments in filtered.by_speaker().values():
            assert all(s.duration >= 0.3 - 1e-9 for s in segments)
            for before, after in zip(segments, segments[1:]):
                assert after.onset - before.offset >= 0.2 - 1e-9


def test_stitch_pipeline_resolves_swapped_speakers(swapped_chunks):
    """Cross-chunk speaker identity follows the embeddings"""
    config = StitchConfig(k=2, min_duration=0.0, speaker_names=("doctor", "patient"))
    timeline = stitch_pipeline(swapped_chunks, config, file_id="rec")
    assert _spans(timeline) == [
        ("doctor", 0.0, 1.0), ("doctor", 3.0, 4.0), ("patient", 1.0, 3.0),
    ]


def test_stitch_pipeline_chunk_order_irrelevant(swapped_chunks):
    """Input chunk order does not change the result"""
    config = StitchConfig(min_duration=0.0)
    forward = stitch_pipeline(swapped_chunks, config)
    backward = stitch_pipeline(list(reversed(swapped_chunks)), config)
    assert _spans(forward) == _spans(backward)


def test_stitch_pipeline_local_permutation_invariant(swapped_chunks):
    """Permuting local speakers inside a chunk changes at most the global names"""
    config = StitchConfig(min_duration=0.0)
    reference = stitch_pipeline(swapped_chunks, config, file_id="rec")
    first = swapped_chunks[0]
    permuted = ChunkResult(0, FrameActivity(first.activity.matrix[:, [1, 0]], 0.1, 0.0),
                           {0: first.embeddings[1], 1: first.embeddings[0]})
    other = stitch_pipeline([permuted, swapped_chunks[1]], config, file_id="rec")
    assert compute_der(reference, other, collar=0.0).der == 0.0


def test_stitch_pipeline_without_embeddings():
    """No embeddings yields an empty timeline"""
    chunk = ChunkResult(0, FrameActivity(np.ones((5, 2)), 0.1))
    assert len(stitch_pipeline([chunk], file_id="x")) == 0


def test_stitch_pipeline_clamps_k():
    """k larger than the embedding count is reduced"""
    chunk = ChunkResult(0, FrameActivity(np.ones((10, 1)), 0.1), {0: np.array([1.0, 0.0])})
    timeline = stitch_pipeline([chunk], StitchConfig(k=3))
    assert _spans(timeline) == [("spk0", 0.0, 1.0)]


def test_stitch_recovers_synthetic_reference():
    """Stitching a generated 30-minute conversation reproduces the reference within 1% DER"""
    truth = gen_conversation(SynthConfig(duration=1800.0, seed=4))
    config = StitchConfig(speaker_names=("doctor", "patient"))
    hypothesis = stitch_pipeline(truth.chunks, config, file_id=truth.file_id)
    assert compute_der(truth.timeline, hypothesis, collar=0.25).der <= 0.01


def test_chunk_bundle_roundtrip(tmp_path, swapped_chunks):
    """A written bundle loads back to the same activity and embeddings"""
    manifest = write_chunk_bundle(tmp_path / "chunks", "rec", swapped_chunks)
    bundle = load_chunk_bundle(manifest)
    assert bundle.file_id == "rec"
    assert [c.chunk_id for c in bundle.chunks] == [0, 1]
    for loaded, original in zip(bundle.chunks, swapped_chunks):
        assert np.array_equal(loaded.activity.matrix, original.activity.matrix)
        assert loaded.start_time == pytest.approx(original.start_time)
        assert loaded.activity.frame_duration == pytest.approx(0.1)
        for speaker, vector in original.embeddings.items():
            assert np.allclose(loaded.embeddings[speaker], vector)


def test_stitch_config_from_settings():
    """Settings keys map onto the stitch config; overrides win"""
    settings = Settings({"K": "3", "SPEAKER_NAMES": "a,b,c", "MIN_DURATION": "0.2"})
    config = StitchConfig.from_settings(settings, seed=9, k=None)
    assert config.k == 3
    assert config.seed == 9
    assert config.speaker_names == ("a", "b", "c")
    assert config.min_duration == pytest.approx(0.2)

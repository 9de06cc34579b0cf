"""
Cascade runner: stitch -> normalize -> score, one dialogue directory at a time
"""
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import structlog

from .config import Settings, config
from .der import DEFAULT_COLLAR, DerBreakdown, compute_der
from .errors import DialogKitError, MissingInputError, ValidationError
from .report import run_table, write_json
from .segio import (
    TranscriptSegment,
    emit_rttm,
    emit_transcript,
    parse_rttm,
    parse_transcript,
    read_text,
)
from .snippets import DEFAULT_CONTEXT, align_segments, emit_snippets, extract_snippets
from .stitch import StitchConfig, load_chunk_bundle, stitch_pipeline
from .tcpwer import DEFAULT_COLLAR as DEFAULT_TC_COLLAR
from .tcpwer import compute_tcpwer, load_streams
from .textmetrics import HEADLINES, RougeScore, macro_mean, read_conditions, score_corpus
from .textprep import NormalizationProfile, load_profile, normalize

logger = structlog.get_logger(__name__)

METRICS = ("der", "tcpwer", "rouge")

# candidate files per input, first existing wins
INPUTS = {
    'diarization': ("chunks/manifest.json", "diarization.rttm"),
    'asr': ("words.jsonl", "transcript.jsonl"),
    'conditions': ("conditions.jsonl",),
    'reference_rttm': ("reference.rttm",),
    'reference_words': ("reference.words.jsonl", "reference.transcript.jsonl"),
    'reference_conditions': ("reference.conditions.jsonl",),
}
NEEDS = {
    'der': ('reference_rttm', 'diarization'),
    'tcpwer': ('reference_words', 'asr'),
    'rouge': ('reference_conditions', 'conditions'),
}


@dataclass
class RunConfig:
    refs_dir: Path
    output_dir: Path
    diarization_dir: Optional[Path] = None
    asr_dir: Optional[Path] = None
    conditions_dir: Optional[Path] = None
    dialogues: Optional[Tuple[str, ...]] = None
    metrics: Tuple[str, ...] = METRICS
    stitch: StitchConfig = field(default_factory=StitchConfig)
    collar: float = DEFAULT_COLLAR
    score_overlap: bool = True
    tc_collar: float = DEFAULT_TC_COLLAR
    normalize: bool = False
    profile: NormalizationProfile = field(default_factory=NormalizationProfile)
    headline: str = "f1"
    snippets: bool = False
    snippet_context: int = DEFAULT_CONTEXT
    keep_going: bool = False
    jobs: int = 1

    KEYS = ("REFS_DIR", "OUTPUT_DIR", "DIARIZATION_DIR", "ASR_DIR", "CONDITIONS_DIR", "METRICS",
            "COLLAR", "SCORE_OVERLAP", "TC_COLLAR", "NORMALIZE", "PROFILE", "HEADLINE",
            "SNIPPETS", "SNIPPET_CONTEXT", "KEEP_GOING", "JOBS")

    def validate(self):
        unknown = set(self.metrics) - set(METRICS)
        if unknown or not self.metrics:
            raise ValidationError(f"metrics must be a non-empty subset of {METRICS}, got {self.metrics}")
        if self.headline not in HEADLINES:
            raise ValidationError(f"headline must be one of {HEADLINES}, got {self.headline!r}")
        if self.collar < 0 or self.tc_collar < 0:
            raise ValidationError("collars must be non-negative")
        if self.jobs < 1 or self.snippet_context < 0:
            raise ValidationError("jobs must be >= 1 and snippet_context >= 0")
        missing = [
            f"{name} directory not found: {path}"
            for name, path in (('reference', self.refs_dir), ('diarization', self.diarization_dir),
                               ('asr', self.asr_dir), ('conditions', self.conditions_dir))
            if path is not None and not Path(path).is_dir()
        ]
        if missing:
            raise MissingInputError(missing)

    def resolved(self) -> "RunConfig":
        """Absolute paths; stage directories default to the reference directory"""
        refs = Path(self.refs_dir).resolve()
        return RunConfig(
            refs_dir=refs,
            output_dir=Path(self.output_dir).resolve(),
            diarization_dir=Path(self.diarization_dir).resolve() if self.diarization_dir else refs,
            asr_dir=Path(self.asr_dir).resolve() if self.asr_dir else refs,
            conditions_dir=Path(self.conditions_dir).resolve() if self.conditions_dir else refs,
            dialogues=self.dialogues, metrics=tuple(self.metrics), stitch=self.stitch,
            collar=self.collar, score_overlap=self.score_overlap, tc_collar=self.tc_collar,
            normalize=self.normalize, profile=self.profile, headline=self.headline,
            snippets=self.snippets, snippet_context=self.snippet_context,
            keep_going=self.keep_going, jobs=self.jobs,
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            'refs_dir': str(self.refs_dir),
            'diarization_dir': str(self.diarization_dir),
            'asr_dir': str(self.asr_dir),
            'conditions_dir': str(self.conditions_dir),
            'metrics': list(self.metrics),
            'stitch': {
                'k': self.stitch.k, 'seed': self.stitch.seed, 'n_init': self.stitch.n_init,
                'max_iter': self.stitch.max_iter, 'threshold': self.stitch.threshold,
                'min_duration': self.stitch.min_duration, 'max_gap': self.stitch.max_gap,
                'speaker_names': list(self.stitch.speaker_names or []),
            },
            'collar': self.collar,
            'score_overlap': self.score_overlap,
            'tc_collar': self.tc_collar,
            'normalize': self.normalize,
            'profile': {
                'unicode_form': self.profile.unicode_form,
                'punctuation': "".join(sorted(self.profile.punctuation)),
                'collapse_whitespace': self.profile.collapse_whitespace,
                'danda_policy': self.profile.danda_policy,
            },
            'headline': self.headline,
            'snippets': self.snippets,
            'snippet_context': self.snippet_context,
        }

    @classmethod
    def from_settings(cls, settings: Settings, **overrides) -> "RunConfig":
        profile_path = settings.get_path("PROFILE")
        metrics = settings.get_str("METRICS")
        values = dict(
            refs_dir=settings.get_path("REFS_DIR", config.data_dir),
            output_dir=settings.get_path("OUTPUT_DIR", config.output_dir),
            diarization_dir=settings.get_path("DIARIZATION_DIR"),
            asr_dir=settings.get_path("ASR_DIR"),
            conditions_dir=settings.get_path("CONDITIONS_DIR"),
            metrics=tuple(m.strip() for m in metrics.split(",")) if metrics else METRICS,
            stitch=StitchConfig.from_settings(settings),
            collar=settings.get_float("COLLAR", DEFAULT_COLLAR),
            score_overlap=settings.get_bool("SCORE_OVERLAP", True),
            tc_collar=settings.get_float("TC_COLLAR", DEFAULT_TC_COLLAR),
            normalize=settings.get_bool("NORMALIZE", False),
            profile=load_profile(profile_path) if profile_path else NormalizationProfile(),
            headline=settings.get_str("HEADLINE", "f1"),
            snippets=settings.get_bool("SNIPPETS", False),
            snippet_context=settings.get_int("SNIPPET_CONTEXT", DEFAULT_CONTEXT),
            keep_going=settings.get_bool("KEEP_GOING", False),
            jobs=settings.get_int("JOBS", 1),
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass
class RunResult:
    exit_status: int
    report: Dict[str, Any]
    report_dir: Path


class PipelineRunner:
    """Runs the cascade over every dialogue and writes per-dialogue and corpus reports"""

    def __init__(self, run_config: RunConfig):
        run_config.validate()
        self.config = run_config.resolved()
        self.run_id = hashlib.sha256(
            json.dumps(self.config.to_record(), sort_keys=True).encode('utf-8')
        ).hexdigest()[:12]
        logger.info("runner_initialized", run_id=self.run_id, refs_dir=str(self.config.refs_dir))

    def _stage_dir(self, name: str) -> Path:
        return {
            'diarization': self.config.diarization_dir,
            'asr': self.config.asr_dir,
            'conditions': self.config.conditions_dir,
        }.get(name, self.config.refs_dir)

    def discover_dialogues(self) -> List[str]:
        if self.config.dialogues:
            return sorted(self.config.dialogues)
        found = sorted(
            d.name for d in self.config.refs_dir.iterdir()
            if d.is_dir() and any((d / name).exists()
                                  for key in INPUTS if key.startswith('reference')
                                  for name in INPUTS[key])
        )
        if not found:
            raise MissingInputError([f"no dialogue directories with reference files in {self.config.refs_dir}"])
        return found

    def locate(self, dialogue: str, name: str) -> Optional[Path]:
        base = self._stage_dir(name) / dialogue
        for candidate in INPUTS[name]:
            if (base / candidate).exists():
                return base / candidate
        return None

    def missing_inputs(self, dialogue: str) -> List[str]:
        missing = []
        for metric in self.config.metrics:
            for name in NEEDS[metric]:
                if self.locate(dialogue, name) is None:
                    options = " or ".join(str(self._stage_dir(name) / dialogue / c) for c in INPUTS[name])
                    missing.append(f"{dialogue}: {metric} needs {options}")
        return missing

    def run(self) -> RunResult:
        dialogues = self.discover_dialogues()
        missing = [item for d in dialogues for item in self.missing_inputs(d)]
        if missing and not self.config.keep_going:
            raise MissingInputError(missing)

        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            results = list(pool.map(self.process_dialogue, dialogues))

        corpus = {
            'run_id': self.run_id,
            'config': self.config.to_record(),
            'dialogues': results,
            'aggregate': self._aggregate(results),
        }
        write_json(self.config.output_dir / "report.json", corpus)
        (self.config.output_dir / "report.txt").write_text(run_table(corpus), encoding='utf-8')

        complete = all(
            d.get(metric) is not None for d in results for metric in self.config.metrics
        )
        logger.info("run_finished", run_id=self.run_id, dialogues=len(results), complete=complete)
        return RunResult(0 if complete else 1, corpus, self.config.output_dir)

    def process_dialogue(self, dialogue: str) -> Dict[str, Any]:
        """Score one dialogue; failures become diagnostics when keep_going is set"""
        log = logger.bind(run_id=self.run_id, dialogue=dialogue)
        record: Dict[str, Any] = {
            'dialogue': dialogue,
            'run_id': self.run_id,
            'config': self.config.to_record(),
            'inputs': {},
            'diagnostics': [],
        }
        steps = {'der': self._score_der, 'tcpwer': self._score_tcpwer, 'rouge': self._score_rouge}
        for metric in METRICS:
            if metric not in self.config.metrics:
                continue
            record[metric] = None
            paths = {name: self.locate(dialogue, name) for name in NEEDS[metric]}
            absent = [name for name, path in paths.items() if path is None]
            if absent:
                record['diagnostics'].append(f"{metric}: missing {', '.join(absent)}")
                log.warning("metric_skipped", metric=metric, missing=absent)
                continue
            record['inputs'].update({name: str(path) for name, path in paths.items()})
            try:
                record[metric] = steps[metric](dialogue, paths)
            except DialogKitError as e:
                if not self.config.keep_going:
                    raise
                record['diagnostics'].append(f"{metric}: {e}")
                log.error("metric_failed", metric=metric, error=str(e))

        if self.config.snippets:
            self._write_snippets(dialogue, record)
        if self.config.normalize:
            self._write_normalized(dialogue)

        write_json(self.config.output_dir / dialogue / "report.json", record)
        return record

    def _output(self, dialogue: str, name: str) -> Path:
        path = self.config.output_dir / dialogue / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _score_der(self, dialogue: str, paths: Dict[str, Path]) -> Dict[str, Any]:
        ref = parse_rttm(read_text(paths['reference_rttm']), str(paths['reference_rttm']))
        source = paths['diarization']
        if source.name == "manifest.json":
            bundle = load_chunk_bundle(source)
            hyp = stitch_pipeline(bundle.chunks, self.config.stitch, bundle.file_id or ref.file_id)
            # stitched output is materialized so later stages can be swapped
            self._output(dialogue, "diarization.rttm").write_text(emit_rttm(hyp), encoding='utf-8')
        else:
            hyp = parse_rttm(read_text(source), str(source))
        return compute_der(ref, hyp, self.config.collar, self.config.score_overlap).to_record()

    def _normalizer(self):
        if not self.config.normalize:
            return None
        profile = self.config.profile
        return lambda word: normalize(word, profile)

    def _score_tcpwer(self, dialogue: str, paths: Dict[str, Path]) -> Dict[str, Any]:
        ref = load_streams(read_text(paths['reference_words']), str(paths['reference_words']))
        hyp = load_streams(read_text(paths['asr']), str(paths['asr']))
        return compute_tcpwer(ref, hyp, self.config.tc_collar, self._normalizer()).to_record()

    def _score_rouge(self, dialogue: str, paths: Dict[str, Path]) -> Dict[str, Any]:
        refs = read_conditions(read_text(paths['reference_conditions']), str(paths['reference_conditions']))
        hyps = read_conditions(read_text(paths['conditions']), str(paths['conditions']))
        ref, hyp = _conditions_for(refs, dialogue), _conditions_for(hyps, dialogue)
        corpus = score_corpus({dialogue: ref}, {dialogue: hyp}, self.config.headline, self.config.profile)
        scored = corpus.per_dialogue[0]
        return {'rouge1': scored.rouge1.to_record(), 'rougeL': scored.rougeL.to_record()}

    def _transcripts(self, dialogue: str):
        asr = self._stage_dir('asr') / dialogue / "transcript.jsonl"
        gt = self.config.refs_dir / dialogue / "reference.transcript.jsonl"
        if not asr.exists() or not gt.exists():
            return None
        return (parse_transcript(read_text(asr), source=str(asr)),
                parse_transcript(read_text(gt), source=str(gt)))

    def _write_snippets(self, dialogue: str, record: Dict[str, Any]):
        transcripts = self._transcripts(dialogue)
        if transcripts is None:
            record['diagnostics'].append("snippets: transcript.jsonl or reference.transcript.jsonl missing")
            return
        asr, gt = transcripts
        if len(asr) != len(gt):
            asr, gt = align_segments(asr, gt, self.config.profile)
        pairs = extract_snippets(asr, gt, self.config.snippet_context, self.config.profile)
        self._output(dialogue, "snippets.jsonl").write_text(emit_snippets(pairs), encoding='utf-8')
        record['snippets'] = len(pairs)

    def _write_normalized(self, dialogue: str):
        path = self._stage_dir('asr') / dialogue / "transcript.jsonl"
        if not path.exists():
            return
        segments = [
            TranscriptSegment(s.index, s.speaker, normalize(s.text, self.config.profile), s.onset, s.offset)
            for s in parse_transcript(read_text(path), source=str(path))
        ]
        self._output(dialogue, "transcript.normalized.jsonl").write_text(
            emit_transcript(segments), encoding='utf-8')

    def _aggregate(self, results: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
        aggregate: Dict[str, Any] = {}
        ders = [r['der'] for r in results if r.get('der')]
        if ders:
            aggregate['der'] = DerBreakdown.from_components(
                sum(d['miss'] for d in ders), sum(d['false_alarm'] for d in ders),
                sum(d['confusion'] for d in ders), sum(d['total_ref'] for d in ders),
                collar=self.config.collar, score_overlap=self.config.score_overlap,
            ).to_record()
        wers = [r['tcpwer'] for r in results if r.get('tcpwer')]
        if wers:
            errors = sum(w['substitutions'] + w['deletions'] + w['insertions'] for w in wers)
            words = sum(w['ref_words'] for w in wers)
            aggregate['tcpwer'] = {
                'substitutions': sum(w['substitutions'] for w in wers),
                'deletions': sum(w['deletions'] for w in wers),
                'insertions': sum(w['insertions'] for w in wers),
                'ref_words': words,
                'tcpwer': errors / words if words else (None if errors else 0.0),
            }
        rouges = [r['rouge'] for r in results if r.get('rouge')]
        if rouges:
            aggregate['rouge'] = {
                name: macro_mean([RougeScore(**scores[name]) for scores in rouges]).to_record()
                for name in ('rouge1', 'rougeL')
            }
        return aggregate


def _conditions_for(conditions: Dict[str, str], dialogue: str) -> str:
    """Entry keyed by the dialogue id, or the only entry of a single-record file"""
    if dialogue in conditions:
        return conditions[dialogue]
    if len(conditions) == 1:
        return next(iter(conditions.values()))
    return ""

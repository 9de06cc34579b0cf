"""
Command-line entry point: `dialogkit <subcommand> ...`
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import structlog

from . import __version__
from .config import Settings, config
from .der import DEFAULT_COLLAR, score_files
from .errors import DialogKitError, MissingInputError
from .report import REPORT_FORMATS, der_table, dumps, rouge_table, tcpwer_table
from .runner import METRICS, PipelineRunner, RunConfig
from .segio import (
    TranscriptSegment,
    emit_rttm,
    emit_transcript,
    parse_rttm_by_file,
    parse_transcript,
    read_text,
)
from .snippets import DEFAULT_CONTEXT, align_segments, emit_snippets, extract_snippets
from .stitch import StitchConfig, load_chunk_bundle, stitch_pipeline
from .synth import (
    PerturbConfig,
    SynthConfig,
    generate_corpus,
    perturb,
    read_reference,
    write_dialogue,
    write_hypothesis,
)
from .tcpwer import DEFAULT_COLLAR as DEFAULT_TC_COLLAR
from .tcpwer import compute_tcpwer, load_streams
from .textmetrics import HEADLINES, read_conditions, score_corpus
from .textprep import NormalizationProfile, load_profile, normalize

logger = structlog.get_logger(__name__)


def _status(message: str):
    print(message, file=sys.stderr)


def _settings(path: Optional[str], *key_sets: Sequence[str]) -> Settings:
    if not path:
        return Settings.empty()
    settings = Settings.from_file(path)
    settings.check_keys([key for keys in key_sets for key in keys])
    return settings


def _profile(args) -> NormalizationProfile:
    return load_profile(args.profile) if getattr(args, 'profile', None) else NormalizationProfile()


def _write_or_print(text: str, out: Optional[str]):
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding='utf-8')
    else:
        sys.stdout.write(text)


def cmd_stitch(args) -> int:
    settings = _settings(args.config, StitchConfig.KEYS)
    stitch_config = StitchConfig.from_settings(
        settings, k=args.k, seed=args.seed, threshold=args.threshold,
        min_duration=args.min_duration, max_gap=args.max_gap,
        speaker_names=tuple(args.speaker_names.split(",")) if args.speaker_names else None,
    )
    bundle = load_chunk_bundle(args.manifest)
    timeline = stitch_pipeline(bundle.chunks, stitch_config, bundle.file_id)
    _write_or_print(emit_rttm(timeline), args.out)
    _status(f"✅ Stitched {len(bundle.chunks)} chunks into {len(timeline)} segments")
    return 0


def cmd_score_der(args) -> int:
    refs = parse_rttm_by_file(read_text(args.ref), args.ref)
    hyps = parse_rttm_by_file(read_text(args.hyp), args.hyp)
    summary = score_files(refs, hyps, args.collar, args.overlap)
    if args.format == "json":
        text = dumps({
            'per_file': {f: b.to_record() for f, b in summary.per_file.items()},
            'pooled': summary.pooled.to_record(),
        })
    else:
        text = der_table(summary) + "\n"
    _write_or_print(text, args.out)
    return 0


def cmd_score_tcpwer(args) -> int:
    ref = load_streams(read_text(args.ref), args.ref)
    hyp = load_streams(read_text(args.hyp), args.hyp)
    profile = _profile(args)
    normalizer = (lambda word: normalize(word, profile)) if args.normalize else None
    report = compute_tcpwer(ref, hyp, args.collar, normalizer)
    text = dumps(report.to_record()) if args.format == "json" else tcpwer_table(report) + "\n"
    _write_or_print(text, args.out)
    return 0


def cmd_score_rouge(args) -> int:
    refs = read_conditions(read_text(args.ref), args.ref)
    hyps = read_conditions(read_text(args.hyp), args.hyp)
    corpus = score_corpus(refs, hyps, args.headline, _profile(args))
    text = dumps(corpus.to_record()) if args.format == "json" else rouge_table(corpus) + "\n"
    _write_or_print(text, args.out)
    return 0


def cmd_normalize(args) -> int:
    profile = _profile(args)
    source = read_text(args.input)
    if args.transcript:
        segments = [
            TranscriptSegment(s.index, s.speaker, normalize(s.text, profile), s.onset, s.offset)
            for s in parse_transcript(source, source=args.input)
        ]
        text = emit_transcript(segments)
    else:
        text = "".join(normalize(line, profile) + "\n" for line in source.splitlines())
    _write_or_print(text, args.out)
    return 0


def cmd_snippets(args) -> int:
    profile = _profile(args)
    asr = parse_transcript(read_text(args.asr), strict=not args.align, source=args.asr)
    gt = parse_transcript(read_text(args.gt), strict=not args.align, source=args.gt)
    if args.align:
        asr, gt = align_segments(asr, gt, profile)
    pairs = extract_snippets(asr, gt, args.context, profile)
    _write_or_print(emit_snippets(pairs), args.out)
    _status(f"✅ {len(pairs)} snippets from {len(asr)} segments")
    return 0


def cmd_synth_gen(args) -> int:
    settings = _settings(args.config, SynthConfig.KEYS)
    synth_config = SynthConfig.from_settings(settings, seed=args.seed, duration=args.duration)
    dialogues = generate_corpus(synth_config, args.count, args.jobs)
    for dialogue in dialogues:
        write_dialogue(args.out, dialogue)
    _status(f"✅ Generated {len(dialogues)} dialogues in {args.out}")
    return 0


def _dialogue_dirs(root: Path) -> List[Path]:
    if (root / "reference.rttm").exists():
        return [root]
    found = sorted(d for d in root.iterdir() if (d / "reference.rttm").exists())
    if not found:
        raise MissingInputError([f"no reference.rttm under {root}"])
    return found


def cmd_synth_perturb(args) -> int:
    settings = _settings(args.config, PerturbConfig.KEYS)
    perturb_config = PerturbConfig.from_settings(settings, seed=args.seed)
    dirs = _dialogue_dirs(Path(args.input))
    for directory in dirs:
        truth = read_reference(directory)
        write_hypothesis(args.out, perturb(truth, perturb_config), truth)
    _status(f"✅ Perturbed {len(dirs)} dialogues into {args.out}")
    return 0


def cmd_run(args) -> int:
    settings = _settings(args.config, RunConfig.KEYS, StitchConfig.KEYS)
    run_config = RunConfig.from_settings(
        settings,
        refs_dir=Path(args.refs) if args.refs else None,
        output_dir=Path(args.out) if args.out else None,
        diarization_dir=Path(args.diarization) if args.diarization else None,
        asr_dir=Path(args.asr) if args.asr else None,
        conditions_dir=Path(args.conditions) if args.conditions else None,
        dialogues=tuple(args.dialogue) if args.dialogue else None,
        metrics=tuple(args.metrics.split(",")) if args.metrics else None,
        normalize=args.normalize,
        profile=load_profile(args.profile) if args.profile else None,
        headline=args.headline,
        snippets=args.snippets,
        keep_going=args.keep_going,
        jobs=args.jobs,
    )
    result = PipelineRunner(run_config).run()
    report_path = result.report_dir / ("report.json" if args.format == "json" else "report.txt")
    sys.stdout.write(report_path.read_text(encoding='utf-8'))
    if result.exit_status == 0:
        _status(f"✅ Run {result.report['run_id']} complete: {result.report_dir}")
    else:
        _status(f"❌ Run {result.report['run_id']} incomplete, see diagnostics in {result.report_dir}")
    return result.exit_status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialogkit",
        description="Diarization stitching and scoring for speaker-attributed clinical dialogue",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="override DIALOGKIT_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stitch", help="cluster and merge chunk-local diarization")
    p.add_argument("--manifest", required=True, help="chunk bundle manifest.json")
    p.add_argument("--out", help="output RTTM (stdout if omitted)")
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-duration", type=float)
    p.add_argument("--max-gap", type=float)
    p.add_argument("--speaker-names", help="comma-separated names for the global speakers")
    p.set_defaults(handler=cmd_stitch)

    p = sub.add_parser("score-der", help="diarization error rate")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float, default=DEFAULT_COLLAR)
    p.add_argument("--overlap", dest="overlap", action="store_true", default=True,
                   help="score overlapping reference speech (default)")
    p.add_argument("--no-overlap", dest="overlap", action="store_false")
    p.add_argument("--format", choices=REPORT_FORMATS, default="table")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_score_der)

    p = sub.add_parser("score-tcpwer", help="time-constrained permutation WER")
    p.add_argument("--ref", required=True, help="reference words or transcript JSONL")
    p.add_argument("--hyp", required=True, help="hypothesis words or transcript JSONL")
    p.add_argument("--collar", type=float, default=DEFAULT_TC_COLLAR)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--profile")
    p.add_argument("--format", choices=REPORT_FORMATS, default="table")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_score_tcpwer)

    p = sub.add_parser("score-rouge", help="ROUGE-1 / ROUGE-L of condition lists")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--headline", choices=HEADLINES, default="f1")
    p.add_argument("--profile")
    p.add_argument("--format", choices=REPORT_FORMATS, default="table")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_score_rouge)

    p = sub.add_parser("normalize", help="unicode and punctuation normalization")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--profile")
    p.add_argument("--transcript", action="store_true",
                   help="input is transcript JSONL; normalize each segment's text")
    p.set_defaults(handler=cmd_normalize)

    p = sub.add_parser("snippets", help="contrastive ASR / ground-truth snippets")
    p.add_argument("--asr", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--context", type=int, default=DEFAULT_CONTEXT)
    p.add_argument("--align", action="store_true",
                   help="align differently segmented transcripts before diffing")
    p.add_argument("--profile")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_snippets)

    synth = sub.add_parser("synth", help="synthetic dialogues").add_subparsers(dest="synth_command",
                                                                               required=True)
    p = synth.add_parser("gen", help="generate conversations")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_synth_gen)

    p = synth.add_parser("perturb", help="inject boundary, label and word errors")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_synth_perturb)

    p = sub.add_parser("run", help="full cascade over a corpus")
    p.add_argument("--config")
    p.add_argument("--refs", help=f"reference corpus (default {config.data_dir})")
    p.add_argument("--diarization", help="diarization inputs (default: --refs)")
    p.add_argument("--asr", help="ASR inputs (default: --refs)")
    p.add_argument("--conditions", help="extracted conditions (default: --refs)")
    p.add_argument("--out", help=f"report directory (default {config.output_dir})")
    p.add_argument("--dialogue", action="append", help="restrict to a dialogue id (repeatable)")
    p.add_argument("--metrics", help=f"comma-separated subset of {','.join(METRICS)}")
    p.add_argument("--normalize", action="store_true", default=None)
    p.add_argument("--profile")
    p.add_argument("--headline", choices=HEADLINES)
    p.add_argument("--snippets", action="store_true", default=None)
    p.add_argument("--keep-going", action="store_true", default=None)
    p.add_argument("--jobs", type=int)
    p.add_argument("--format", choices=REPORT_FORMATS, default="table")
    p.set_defaults(handler=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    try:
        config.setup_logging(args.log_level)
        return args.handler(args)
    except MissingInputError as e:
        _status("❌ Missing inputs:")
        for item in e.missing:
            _status(f"   - {item}")
        return 1
    except (DialogKitError, OSError) as e:
        logger.error("command_failed", command=args.command, error=str(e))
        _status(f"❌ {e}")
        return 1
    except KeyboardInterrupt:
        _status("\n⚠️  Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())

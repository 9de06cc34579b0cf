import json
import shutil

import pytest

from dialogkit.config import Settings
from dialogkit.der import compute_der
from dialogkit.errors import MissingInputError, ParseError, ValidationError
from dialogkit.runner import PipelineRunner, RunConfig
from dialogkit.segio import parse_rttm, read_text
from dialogkit.stitch import StitchConfig
from dialogkit.synth import (
    PerturbConfig,
    SynthConfig,
    generate_corpus,
    perturb,
    write_dialogue,
    write_hypothesis,
)


@pytest.fixture(scope="module")
def corpus():
    """Two short synthetic dialogues"""
    return generate_corpus(SynthConfig(duration=60.0, seed=21, file_id="dlg"), 2)


@pytest.fixture(scope="module")
def generated_dir(tmp_path_factory, corpus):
    """Generator output: references, chunk bundles and truth system files"""
    root = tmp_path_factory.mktemp("generated")
    for dialogue in corpus:
        write_dialogue(root, dialogue)
    return root


@pytest.fixture(scope="module")
def truth_dir(tmp_path_factory, corpus):
    """Zero-noise hypotheses: every system output equals the truth"""
    root = tmp_path_factory.mktemp("truth")
    for dialogue in corpus:
        write_hypothesis(root, perturb(dialogue, PerturbConfig()), dialogue)
    return root


@pytest.fixture(scope="module")
def noisy_dir(tmp_path_factory, corpus):
    """Hypotheses with boundary, label and word noise"""
    root = tmp_path_factory.mktemp("noisy")
    noise = PerturbConfig(boundary_jitter_sd=0.5, label_flip_rate=0.5, word_sub_rate=0.2, seed=4)
    for dialogue in corpus:
        write_hypothesis(root, perturb(dialogue, noise), dialogue)
    return root


def _run(tmp_path, **kwargs):
    return PipelineRunner(RunConfig(output_dir=tmp_path / "out", **kwargs)).run()


def test_truth_against_itself(tmp_path, truth_dir):
    """Perfect system outputs score DER 0, tcpWER 0 and ROUGE 1"""
    result = _run(tmp_path, refs_dir=truth_dir)
    assert result.exit_status == 0
    assert [d['dialogue'] for d in result.report['dialogues']] == ["dlg_000", "dlg_001"]
    for dialogue in result.report['dialogues']:
        assert dialogue['der']['der'] == 0.0
        assert dialogue['tcpwer']['tcpwer'] == 0.0
        assert dialogue['rouge']['rouge1']['f1'] == 1.0
        assert dialogue['rouge']['rougeL']['f1'] == 1.0
        assert dialogue['diagnostics'] == []
    aggregate = result.report['aggregate']
    assert aggregate['der']['der'] == 0.0
    assert aggregate['tcpwer']['tcpwer'] == 0.0
    assert aggregate['rouge']['rouge1']['f1'] == 1.0
    assert (result.report_dir / "report.json").exists()
    assert (result.report_dir / "report.txt").exists()
    assert (result.report_dir / "dlg_000" / "report.json").exists()


def test_generated_dir_is_stitched(tmp_path, generated_dir):
    """Chunk bundles are stitched and the stitched RTTM is written out"""
    result = _run(tmp_path, refs_dir=generated_dir, metrics=("der",))
    assert result.exit_status == 0
    for dialogue in result.report['dialogues']:
        assert dialogue['der']['der'] <= 0.01
        assert dialogue['inputs']['diarization'].endswith("manifest.json")
        stitched = result.report_dir / dialogue['dialogue'] / "diarization.rttm"
        assert parse_rttm(read_text(stitched)).file_id == dialogue['dialogue']


def test_report_matches_standalone_scoring(tmp_path, noisy_dir):
    """Runner DER equals scoring the same files directly"""
    result = _run(tmp_path, refs_dir=noisy_dir, metrics=("der",))
    for dialogue in result.report['dialogues']:
        base = noisy_dir / dialogue['dialogue']
        ref = parse_rttm(read_text(base / "reference.rttm"))
        hyp = parse_rttm(read_text(base / "diarization.rttm"))
        assert dialogue['der'] == compute_der(ref, hyp).to_record()


def test_repeated_runs_are_byte_identical(tmp_path, noisy_dir):
    """Identical inputs give identical reports"""
    first = PipelineRunner(RunConfig(refs_dir=noisy_dir, output_dir=tmp_path / "a")).run()
    second = PipelineRunner(RunConfig(refs_dir=noisy_dir, output_dir=tmp_path / "b")).run()
    for name in ("report.json", "report.txt", "dlg_001/report.json"):
        assert (first.report_dir / name).read_bytes() == (second.report_dir / name).read_bytes()


def test_swapping_diarization_only_changes_der(tmp_path, truth_dir, noisy_dir):
    """Replacing one stage input leaves the other metrics untouched"""
    base = _run(tmp_path / "base", refs_dir=truth_dir).report['aggregate']
    swapped = _run(tmp_path / "swap", refs_dir=truth_dir, diarization_dir=noisy_dir).report['aggregate']
    assert swapped['tcpwer'] == base['tcpwer']
    assert swapped['rouge'] == base['rouge']
    assert swapped['der']['der'] > base['der']['der']


def test_swapping_asr_only_changes_tcpwer(tmp_path, truth_dir, noisy_dir):
    """An alternative ASR directory only moves tcpWER"""
    base = _run(tmp_path / "base", refs_dir=truth_dir).report['aggregate']
    swapped = _run(tmp_path / "swap", refs_dir=truth_dir, asr_dir=noisy_dir).report['aggregate']
    assert swapped['der'] == base['der']
    assert swapped['rouge'] == base['rouge']
    assert swapped['tcpwer']['tcpwer'] > 0.0


def test_missing_inputs_abort(tmp_path, truth_dir):
    """Absent stage inputs are itemized and stop the run"""
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(MissingInputError) as excinfo:
        _run(tmp_path, refs_dir=truth_dir, conditions_dir=empty, metrics=("rouge",))
    assert len(excinfo.value.missing) == 2
    assert "dlg_000" in excinfo.value.missing[0]


def test_keep_going_reports_partial_results(tmp_path, truth_dir):
    """With keep_going, missing inputs become diagnostics and the exit status is 1"""
    empty = tmp_path / "empty"
    empty.mkdir()
    result = _run(tmp_path, refs_dir=truth_dir, conditions_dir=empty, keep_going=True)
    assert result.exit_status == 1
    dialogue = result.report['dialogues'][0]
    assert dialogue['rouge'] is None
    assert dialogue['der']['der'] == 0.0
    assert dialogue['diagnostics'] == ["rouge: missing conditions"]
    assert "Diagnostics:" in (result.report_dir / "report.txt").read_text(encoding='utf-8')


def test_bad_input_file(tmp_path, truth_dir):
    """Malformed files raise unless keep_going is set"""
    broken = tmp_path / "broken"
    shutil.copytree(truth_dir, broken)
    (broken / "dlg_000" / "diarization.rttm").write_text("SPEAKER dlg_000 1 x 1 <NA> <NA> a <NA> <NA>\n",
                                                         encoding='utf-8')
    with pytest.raises(ParseError):
        _run(tmp_path, refs_dir=broken, metrics=("der",))
    result = _run(tmp_path, refs_dir=broken, metrics=("der",), keep_going=True)
    assert result.exit_status == 1
    assert result.report['dialogues'][0]['diagnostics'][0].startswith("der:")
    assert result.report['dialogues'][1]['der']['der'] == 0.0


def test_snippets_and_normalized_transcripts(tmp_path, noisy_dir):
    """Optional outputs land next to the per-dialogue report"""
    result = _run(tmp_path, refs_dir=noisy_dir, metrics=("tcpwer",), snippets=True, normalize=True)
    for dialogue in result.report['dialogues']:
        out = result.report_dir / dialogue['dialogue']
        assert (out / "snippets.jsonl").exists()
        assert (out / "transcript.normalized.jsonl").exists()
        assert dialogue['snippets'] >= 1


def test_dialogue_selection(tmp_path, truth_dir):
    """Only the requested dialogues are scored"""
    result = _run(tmp_path, refs_dir=truth_dir, dialogues=("dlg_001",))
    assert [d['dialogue'] for d in result.report['dialogues']] == ["dlg_001"]


def test_run_config_validation(tmp_path, truth_dir):
    """Bad metrics and missing directories are rejected up front"""
    with pytest.raises(ValidationError):
        PipelineRunner(RunConfig(refs_dir=truth_dir, output_dir=tmp_path, metrics=("bleu",)))
    with pytest.raises(MissingInputError):
        PipelineRunner(RunConfig(refs_dir=tmp_path / "nope", output_dir=tmp_path))


def test_run_config_from_settings(tmp_path):
    """Settings keys and overrides combine"""
    settings = Settings({"METRICS": "der, rouge", "COLLAR": "0.5", "K": "2", "KEEP_GOING": "yes"})
    run_config = RunConfig.from_settings(settings, refs_dir=tmp_path, output_dir=tmp_path, jobs=2)
    assert run_config.metrics == ("der", "rouge")
    assert run_config.collar == 0.5
    assert run_config.keep_going is True
    assert run_config.jobs == 2
    assert run_config.refs_dir == tmp_path


def test_dialogue_reports_record_seed_and_config(tmp_path, generated_dir):
    """Every per-dialogue report carries the run configuration, stitch seed included"""
    result = _run(tmp_path, refs_dir=generated_dir, metrics=("der",), stitch=StitchConfig(seed=13))
    for dialogue in result.report['dialogues']:
        path = result.report_dir / dialogue['dialogue'] / "report.json"
        on_disk = json.loads(path.read_text(encoding='utf-8'))
        assert on_disk['config']['stitch']['seed'] == 13
        assert on_disk['config'] == result.report['config']

"""
Report rendering: machine-readable JSON records and plain-text tables
"""
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from .der import DerBreakdown, DerSummary
from .tcpwer import TcpWerReport
from .textmetrics import CorpusRouge

REPORT_FORMATS = ("table", "json")


def dumps(record: Any) -> str:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline"""
    return json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Union[str, Path], record: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(record), encoding='utf-8')
    return path


def _percent(value: Optional[float]) -> str:
    if value is None:
        return "-"
    if value == float('inf'):
        return "inf"
    return f"{100 * value:.2f}%"


def _table(headers: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    rows = [list(map(str, row)) for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)),
             "  ".join("-" * w for w in widths)]
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows)
    return "\n".join(lines)


def der_table(summary: Union[DerBreakdown, DerSummary]) -> str:
    if isinstance(summary, DerBreakdown):
        items = [("ALL", summary)]
    else:
        items = list(summary.per_file.items()) + [("ALL", summary.pooled)]
    return _table(
        ["file", "miss", "false_alarm", "confusion", "total_ref", "DER"],
        [(name, f"{b.miss:.3f}", f"{b.false_alarm:.3f}", f"{b.confusion:.3f}",
          f"{b.total_ref:.3f}", _percent(b.der)) for name, b in items],
    )


def tcpwer_table(report: TcpWerReport) -> str:
    mapping = ", ".join(f"{h}->{r}" for h, r in sorted(report.assignment.items())) or "-"
    return _table(
        ["S", "D", "I", "ref_words", "tcpWER", "collar", "assignment"],
        [(report.substitutions, report.deletions, report.insertions, report.ref_words,
          _percent(report.tcpwer), f"{report.collar:g}", mapping)],
    )


def rouge_table(corpus: CorpusRouge) -> str:
    rows = [
        (d.dialogue, f"{d.rouge1.headline(corpus.headline):.4f}", f"{d.rougeL.headline(corpus.headline):.4f}")
        for d in corpus.per_dialogue
    ]
    rows.append(("MEAN", f"{corpus.rouge1.headline(corpus.headline):.4f}",
                 f"{corpus.rougeL.headline(corpus.headline):.4f}"))
    return _table(["dialogue", f"ROUGE-1 {corpus.headline}", f"ROUGE-L {corpus.headline}"], rows)


def run_table(corpus: Dict[str, Any]) -> str:
    """Plain-text summary of a pipeline run record"""
    headline = corpus['config'].get('headline', 'f1')

    def metric(record: Optional[Dict], *path: str) -> str:
        for key in path:
            if record is None:
                return "-"
            record = record.get(key)
        if record is None:
            return "-"
        return f"{record:.4f}" if path[0] == 'rouge' else _percent(record)

    rows = []
    for dialogue in corpus['dialogues']:
        rows.append((
            dialogue['dialogue'],
            metric(dialogue, 'der', 'der'),
            metric(dialogue, 'tcpwer', 'tcpwer'),
            metric(dialogue, 'rouge', 'rouge1', headline),
            metric(dialogue, 'rouge', 'rougeL', headline),
            str(len(dialogue['diagnostics'])),
        ))
    aggregate = corpus['aggregate']
    rows.append((
        "ALL",
        metric(aggregate, 'der', 'der'),
        metric(aggregate, 'tcpwer', 'tcpwer'),
        metric(aggregate, 'rouge', 'rouge1', headline),
        metric(aggregate, 'rouge', 'rougeL', headline),
        str(sum(len(d['diagnostics']) for d in corpus['dialogues'])),
    ))
    header = [f"run {corpus['run_id']}"]
    table = _table(["dialogue", "DER", "tcpWER", f"ROUGE-1 {headline}", f"ROUGE-L {headline}",
                    "issues"], rows)
    notes: List[str] = [
        f"{d['dialogue']}: {message}" for d in corpus['dialogues'] for message in d['diagnostics']
    ]
    return "\n".join(header + [table] + (["", "Diagnostics:"] + notes if notes else [])) + "\n"

"""Report rendering: delimited machine output, aligned text tables, and
matplotlib figures written next to the data files.

Rates in the text tables are shown to 0.1%; the TSV files carry full
precision.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .scoring import ExperimentReport
from .tokenization import StatsSummary


def write_tsv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(value) for value in row) + "\n")
    return path


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_tsv(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    header = lines[0].split("\t")
    return header, [line.split("\t") for line in lines[1:]]


def render_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Fixed-width text table; floats shown to one decimal."""
    def fmt(value):
        if isinstance(value, float):
            return f"{value:.1f}"
        return str(value)

    cells = [[fmt(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells)
    return "\n".join(lines) + "\n"


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def loss_curve_figure(steps: Sequence[int], losses: Sequence[float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("mean per-utterance loss (nats)")
    ax.set_title("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def wer_by_language_figure(report: ExperimentReport, path: Path) -> Path:
    """Grouped bars: one cluster per language, one bar per system."""
    systems = list(report.systems)
    languages = sorted({lang for s in report.systems.values() for lang in s.per_language})
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(languages), 4))
    width = 0.8 / max(len(systems), 1)
    for i, name in enumerate(systems):
        result = report.systems[name]
        xs = [j + i * width for j in range(len(languages))]
        ys = [result.per_language[lang].wer_percent if lang in result.per_language else 0.0
              for lang in languages]
        ax.bar(xs, ys, width=width, label=name)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(languages))])
    ax.set_xticklabels(languages)
    ax.set_ylabel("error rate (%)")
    ax.set_title("per-language error rate by system")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def tokens_per_second_figure(stats: Mapping[str, StatsSummary], path: Path) -> Path:
    """Per-language token rates for each vocabulary, with the summary band."""
    names = list(stats)
    languages = sorted({lang for s in stats.values() for lang in s.per_language})
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(languages), 4))
    width = 0.8 / max(len(names), 1)
    for i, name in enumerate(names):
        summary = stats[name]
        xs = [j + i * width for j in range(len(languages))]
        ys = [summary.per_language.get(lang, 0.0) for lang in languages]
        ax.bar(xs, ys, width=width,
               label=f"{name} ({summary.mean:.1f}±{summary.std:.1f})")
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(languages))])
    ax.set_xticklabels(languages)
    ax.set_ylabel("tokens / second")
    ax.set_title("tokenization rate by language")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def stats_rows(stats: Mapping[str, StatsSummary]) -> list[list]:
    rows: list[list] = []
    for name, summary in stats.items():
        for lang, rate in summary.per_language.items():
            rows.append([name, lang, rate])
        rows.append([name, "__summary_mean__", summary.mean])
        rows.append([name, "__summary_std__", summary.std])
        rows.append([name, "__summary_max__", summary.max])
        rows.append([name, "__summary_min__", summary.min])
    return rows


def write_stats_report(stats: Mapping[str, StatsSummary], directory: Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [
        write_tsv(directory / "tokens_per_second.tsv",
                  ["vocabulary", "language", "tokens_per_second"], stats_rows(stats)),
        tokens_per_second_figure(stats, directory / "tokens_per_second.png"),
    ]
    return paths


def write_breakdown_tsv(path: Path, per_language, pooled) -> Path:
    header = ["language", "reference_length", "insertions", "deletions",
              "substitutions", "ins_rate", "del_rate", "sub_rate", "wer_percent"]
    rows = []
    for lang, b in per_language.items():
        rows.append([lang, b.reference_length, b.insertions, b.deletions, b.substitutions,
                     b.ins_rate, b.del_rate, b.sub_rate, b.wer_percent])
    rows.append(["__pooled__", pooled.reference_length, pooled.insertions, pooled.deletions,
                 pooled.substitutions, pooled.ins_rate, pooled.del_rate, pooled.sub_rate,
                 pooled.wer_percent])
    return write_tsv(path, header, rows)


def write_comparison_report(report: ExperimentReport, directory: Path) -> list[Path]:
    """Full comparison bundle: breakdown TSVs, improvements, text table, figures."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    breakdown_rows = []
    for name, result in report.systems.items():
        write_breakdown_tsv(directory / f"breakdown_{name}.tsv",
                            result.per_language, result.pooled)
        paths.append(directory / f"breakdown_{name}.tsv")
        for lang, b in result.per_language.items():
            breakdown_rows.append([name, lang, b.wer_percent, b.ins_rate, b.del_rate, b.sub_rate])
        breakdown_rows.append([name, "__macro__", result.macro_wer, result.macro_ins_rate,
                               result.macro_del_rate, result.macro_sub_rate])
    paths.append(write_tsv(directory / "systems.tsv",
                           ["system", "language", "wer_percent", "ins_rate", "del_rate", "sub_rate"],
                           breakdown_rows))
    improvement_rows = [
        [a, b, value] for (a, b), value in report.improvements.items()
    ]
    paths.append(write_tsv(directory / "improvements.tsv",
                           ["system", "baseline", "relative_improvement_percent"],
                           improvement_rows))
    paths.append(write_tsv(directory / "tokens_per_second.tsv",
                           ["vocabulary", "language", "tokens_per_second"],
                           stats_rows(report.tokens_per_second)))
    table = render_table(
        ["system", "language", "wer%", "ins%", "del%", "sub%"],
        breakdown_rows,
    )
    (directory / "comparison.txt").write_text(table, encoding="utf-8")
    paths.append(directory / "comparison.txt")
    paths.append(wer_by_language_figure(report, directory / "wer_by_language.png"))
    paths.append(tokens_per_second_figure(report.tokens_per_second,
                                          directory / "tokens_per_second.png"))
    return paths

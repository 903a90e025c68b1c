"""Plots and tables from a run's tracking exports.

Every figure is written next to the CSV it is drawn from. Figures are
rendered with the Agg backend and no timestamp metadata, so regenerating
them from the same CSVs gives identical bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evolution import OPERATORS  # noqa: E402

_PNG_META = {"Software": None}


def _read(path: Path) -> list[dict[str, str]]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


def _write(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _num(s: str) -> float | None:
    return float(s) if s not in ("", None) else None


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def accuracy_report(table: Path, out_stem: Path, title: str) -> list[Path]:
    """Best and mean accuracy (1 - error) against generation."""
    rows = _read(table)
    data = []
    for r in rows:
        be, me = _num(r["best_error"]), _num(r["mean_error"])
        data.append([int(r["generation"]), be, me, None if be is None else 1 - be, None if me is None else 1 - me])
    csv_path = _write(out_stem.with_suffix(".csv"),
                      ["generation", "best_error", "mean_error", "best_accuracy", "mean_accuracy"],
                      [[g, _fmt(be), _fmt(me), _fmt(ba), _fmt(ma)] for g, be, me, ba, ma in data])
    fig, ax = plt.subplots(figsize=(6, 4))
    gens = [d[0] for d in data]
    ax.plot(gens, [d[3] for d in data], label="best")
    ax.plot(gens, [d[4] for d in data], label="mean")
    ax.set_xlabel("generation")
    ax.set_ylabel("accuracy (1 - error)")
    ax.set_title(title)
    ax.legend()
    return [csv_path, _save(fig, out_stem.with_suffix(".png"))]


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(x)


def operator_report(tables: Sequence[Path], out_stem: Path, title: str) -> list[Path]:
    """Operator applications and cumulative fitness deltas, summed over tables."""
    apps = {op: 0 for op in OPERATORS}
    deltas = {op: [] for op in OPERATORS}
    for t in tables:
        for r in _read(t):
            apps[r["operator"]] += int(r["applications"])
            deltas[r["operator"]].append(float(r["cumulative_fitness_delta"]))
    import math

    totals = {op: math.fsum(deltas[op]) for op in OPERATORS}
    csv_path = _write(out_stem.with_suffix(".csv"), ["operator", "applications", "cumulative_fitness_delta"],
                      [[op, apps[op], repr(totals[op])] for op in OPERATORS])
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    a1.bar(list(OPERATORS), [apps[o] for o in OPERATORS])
    a1.set_title("applications")
    a2.bar(list(OPERATORS), [totals[o] for o in OPERATORS])
    a2.set_title("cumulative fitness delta")
    for a in (a1, a2):
        a.tick_params(axis="x", rotation=30)
    fig.suptitle(title)
    fig.tight_layout()
    return [csv_path, _save(fig, out_stem.with_suffix(".png"))]


COMPLEXITY_COLUMNS = ("lloc", "cyclomatic", "difficulty", "volume", "maintainability_index")


def complexity_report(tables: Sequence[Path], out_stem: Path, title: str) -> list[Path]:
    rows = []
    for t in tables:
        for r in _read(t):
            if r.get("parsed") == "False" or r["accuracy"] == "":
                continue
            rows.append([t.parent.parent.parent.name, r["candidate_id"], r["accuracy"]] + [r[c] for c in COMPLEXITY_COLUMNS])
    csv_path = _write(out_stem.with_suffix(".csv"), ["farm", "candidate_id", "accuracy", *COMPLEXITY_COLUMNS], rows)
    fig, axes = plt.subplots(1, len(COMPLEXITY_COLUMNS), figsize=(4 * len(COMPLEXITY_COLUMNS), 4))
    for i, col in enumerate(COMPLEXITY_COLUMNS):
        axes[i].scatter([float(r[3 + i]) for r in rows], [float(r[2]) for r in rows], s=6)
        axes[i].set_xlabel(col)
        axes[i].set_ylabel("accuracy")
    fig.suptitle(title)
    fig.tight_layout()
    return [csv_path, _save(fig, out_stem.with_suffix(".png"))]


def persona_mechanism_report(matrix: Path, out_stem: Path) -> list[Path]:
    rows = _read(matrix)
    cells: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        err = _num(r["best_error"])
        if err is not None:
            cells.setdefault((r["persona"], r["mechanism"]), []).append(1 - err)
    personas = sorted({k[0] for k in cells})
    mechs = sorted({k[1] for k in cells})
    table = [[p, m, f"(P:{p}, N:{m})", repr(sum(cells[(p, m)]) / len(cells[(p, m)])), len(cells[(p, m)])]
             for p in personas for m in mechs if (p, m) in cells]
    csv_path = _write(out_stem.with_suffix(".csv"), ["persona", "mechanism", "label", "mean_best_accuracy", "farms"], table)
    fig, ax = plt.subplots(figsize=(6, 4))
    grid = [[sum(cells.get((p, m), [0.0])) / max(1, len(cells.get((p, m), []))) for m in mechs] for p in personas]
    im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(len(mechs)), mechs)
    ax.set_yticks(range(len(personas)), personas)
    for i in range(len(personas)):
        for j in range(len(mechs)):
            ax.text(j, i, f"{grid[i][j]:.3f}", ha="center", va="center", color="w")
    fig.colorbar(im, ax=ax, label="mean best accuracy")
    ax.set_title("nudge accuracy by persona and mechanism")
    fig.tight_layout()
    return [csv_path, _save(fig, out_stem.with_suffix(".png"))]


def emit_reports(run_dir: str | Path) -> list[Path]:
    """Write all report pairs that the run's tracking exports support."""
    run = Path(run_dir)
    out = run / "reports"
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for number, name in (("2", "baseline"), ("3", "global")):
        farm_dirs = sorted((run / f"stage{number}").glob("farm_*"), key=lambda p: int(p.name[5:]))
        tracking = [d / "evolution" / "tracking" for d in farm_dirs if (d / "evolution" / "tracking").is_dir()]
        for t in tracking:
            farm = t.parent.parent.name
            written += accuracy_report(t / "fitness_by_generation.csv", out / f"accuracy_{name}_{farm}",
                                       f"{name} search, {farm}")
        if tracking:
            written += operator_report([t / "operators.csv" for t in tracking], out / f"operators_{name}",
                                       f"{name} search operators")
            written += complexity_report([t / "complexity.csv" for t in tracking], out / f"complexity_{name}",
                                         f"{name} search: complexity vs accuracy")
    matrix = run / "stage4" / "matrix.csv"
    if matrix.is_file():
        written += persona_mechanism_report(matrix, out / "persona_mechanism")
        cells = sorted(p for p in (run / "stage4").glob("farm_*/*/tracking"))
        if cells:
            written += operator_report([c / "operators.csv" for c in cells], out / "operators_nudge", "nudge operators")
    return written

"""Derived quantities from training and evaluation result files.

Covers four reproductions: checkpoint-window smoothing of noisy learning
curves, time-to-baseline speedups read off piecewise-linear interpolants,
cost/accuracy Pareto frontiers, and shot-averaged benchmark tables with
deltas between datasets.

Rounding conventions matter here because the inputs are decimal-precision
transcriptions. All published-table arithmetic runs in ``Decimal`` (floats
round-trip through ``repr`` so 1-decimal inputs stay exact): per-task cells
are exact means of the 0-shot and 5-shot cells, row averages are the mean of
the per-task cells after rounding each half-up to 1 decimal (the precision
tables are printed at), and dataset deltas subtract the 1-decimal-rounded row
averages. Speedups display floor-rounded to 1 decimal, so a 7.76x speedup
prints as "7.7x" rather than overstating.

File formats: curves are CSV ``tokens,accuracy`` per run (optional leading
``# kind: raw|smoothed`` comment); tables are CSV
``dataset,scale,task,shots,accuracy`` with an empty shots field meaning
shot-averaged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import Decimal, ROUND_DOWN, ROUND_HALF_UP
from pathlib import Path
from typing import Iterable, Sequence

from .errors import KeyMismatch, MissingScale, SchemaViolation, UnreadableFile, UnsortedInput

AVG_TASK = "avg"

ParetoPoint = tuple[float, float, str]  # (cost, accuracy, label)


def _dec(x: float | int | str) -> Decimal:
    return Decimal(str(x))


def round_half_up(x: float, places: int = 1) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(_dec(x).quantize(quantum, rounding=ROUND_HALF_UP))


# -- learning curves -----------------------------------------------------------

@dataclass(frozen=True)
class LearningCurve:
    run_id: str
    points: tuple[tuple[int, float], ...]  # (tokens_seen, accuracy), tokens strictly increasing

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError(f"curve {self.run_id!r} has no points")
        tokens = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(tokens, tokens[1:])):
            raise UnsortedInput(f"curve {self.run_id!r}: tokens must be strictly increasing")
        for _, acc in self.points:
            if not 0.0 <= acc <= 100.0:
                raise ValueError(f"curve {self.run_id!r}: accuracy {acc} outside [0, 100]")

    @property
    def final_tokens(self) -> int:
        return self.points[-1][0]

    @property
    def final_accuracy(self) -> float:
        return self.points[-1][1]


def load_curve(path: Path | str, run_id: str | None = None) -> tuple[LearningCurve, str]:
    """Read a curve CSV; returns (curve, kind) with kind 'raw' unless flagged."""
    path = Path(path)
    kind = "raw"
    points: list[tuple[int, float]] = []
    try:
        with open(path, encoding="utf-8") as fh:
            rows = []
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    flag = line.lstrip("# ").strip()
                    if flag.startswith("kind:"):
                        kind = flag.split(":", 1)[1].strip()
                    continue
                rows.append(line)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    if not rows or rows[0].lower().replace(" ", "") != "tokens,accuracy":
        raise SchemaViolation(f"{path}: expected 'tokens,accuracy' header")
    for row in rows[1:]:
        try:
            tok, acc = row.split(",")
            points.append((int(float(tok)), float(acc)))
        except ValueError as exc:
            raise SchemaViolation(f"{path}: bad curve row {row!r}") from exc
    return LearningCurve(run_id=run_id or path.stem, points=tuple(points)), kind


def save_curve(curve: LearningCurve, path: Path | str, kind: str = "raw") -> None:
    lines = [f"# kind: {kind}", "tokens,accuracy"]
    lines += [f"{t},{a}" for t, a in curve.points]
    from .io_utils import atomic_write_text

    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def smooth_curve(
    checkpoints: LearningCurve | Sequence[tuple[int, float]],
    window_edges: Sequence[int],
) -> LearningCurve:
    """Average checkpoints within token windows, one point per non-empty window.

    Windows are (0, e1], (e1, e2], ... for strictly increasing right edges;
    each output point sits at its window's right edge and carries the
    arithmetic mean of the member accuracies. Empty windows are omitted.
    """
    if isinstance(checkpoints, LearningCurve):
        run_id = checkpoints.run_id
        points = checkpoints.points
    else:
        run_id = "smoothed"
        points = tuple(checkpoints)
        tokens = [t for t, _ in points]
        if any(b <= a for a, b in zip(tokens, tokens[1:])):
            raise UnsortedInput("checkpoint tokens must be strictly increasing")
    edges = list(window_edges)
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
        raise UnsortedInput("window edges must be strictly increasing and non-empty")

    members: dict[int, list[float]] = {edge: [] for edge in edges}
    for tokens_seen, accuracy in points:
        if tokens_seen <= 0 or tokens_seen > edges[-1]:
            raise ValueError(f"checkpoint at {tokens_seen} tokens falls outside all windows")
        for lo, hi in zip([0] + edges, edges):
            if lo < tokens_seen <= hi:
                members[hi].append(accuracy)
                break
    smoothed = tuple(
        (edge, float(sum(_dec(a) for a in members[edge]) / len(members[edge])))
        for edge in edges
        if members[edge]
    )
    return LearningCurve(run_id=run_id, points=smoothed)


# -- speedup -------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedupResult:
    candidate_run: str
    baseline_run: str
    baseline_final_accuracy: float
    crossing_tokens: int | None
    speedup: float | None

    def to_dict(self) -> dict:
        return {
            "candidate_run": self.candidate_run,
            "baseline_run": self.baseline_run,
            "baseline_final_accuracy": self.baseline_final_accuracy,
            "crossing_tokens": self.crossing_tokens,
            "speedup": self.speedup,
            "display": format_speedup(self.speedup),
        }


def first_crossing(curve: LearningCurve, target: float) -> float | None:
    """Smallest t where the piecewise-linear interpolant first reaches target.

    Curves are not assumed monotone; the first crossing is taken literally.
    Returns None when the curve never reaches the target.
    """
    pts = curve.points
    for i, (tokens, acc) in enumerate(pts):
        if acc >= target:
            if i == 0:
                return float(tokens)
            t0, a0 = pts[i - 1]
            # a0 < target <= acc here, so the segment crosses exactly once
            return t0 + (target - a0) * (tokens - t0) / (acc - a0)
    return None


def speedup_to_baseline(candidate: LearningCurve, baseline: LearningCurve) -> SpeedupResult:
    """Tokens the baseline spent divided by tokens the candidate needed to
    first reach the baseline's final accuracy."""
    target = baseline.final_accuracy
    crossing = first_crossing(candidate, target)
    if crossing is None:
        return SpeedupResult(
            candidate_run=candidate.run_id,
            baseline_run=baseline.run_id,
            baseline_final_accuracy=target,
            crossing_tokens=None,
            speedup=None,
        )
    crossing_tokens = int(round_half_up(crossing, 0))
    speedup = baseline.final_tokens / crossing_tokens if crossing_tokens > 0 else None
    return SpeedupResult(
        candidate_run=candidate.run_id,
        baseline_run=baseline.run_id,
        baseline_final_accuracy=target,
        crossing_tokens=crossing_tokens,
        speedup=speedup,
    )


def format_speedup(speedup: float | None) -> str:
    """Conservative display: floor to 1 decimal, e.g. 7.76 -> '7.7x'."""
    if speedup is None:
        return "n/a"
    return f"{_dec(speedup).quantize(Decimal('0.1'), rounding=ROUND_DOWN)}x"


# -- Pareto frontier --------------------------------------------------------------

def dominates(p: ParetoPoint, q: ParetoPoint) -> bool:
    """p strictly dominates q: no worse on both axes, better on one."""
    return p[0] <= q[0] and p[1] >= q[1] and (p[0] < q[0] or p[1] > q[1])


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Points not strictly dominated, in input order; duplicates keep the first.

    Sweep in (cost asc, accuracy desc) order tracking the best accuracy seen,
    which visits any dominator of a point before the point itself.
    """
    order = sorted(range(len(points)), key=lambda i: (points[i][0], -points[i][1], i))
    best_accuracy = float("-inf")
    kept: list[int] = []
    for i in order:
        if points[i][1] > best_accuracy:
            kept.append(i)
            best_accuracy = points[i][1]
    return [points[i] for i in sorted(kept)]


def load_pareto_points(path: Path | str) -> list[ParetoPoint]:
    path = Path(path)
    points: list[ParetoPoint] = []
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(reader.fieldnames) < {"cost", "accuracy", "label"}:
                raise SchemaViolation(f"{path}: expected 'cost,accuracy,label' header")
            for row in reader:
                points.append((float(row["cost"]), float(row["accuracy"]), row["label"]))
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except ValueError as exc:
        raise SchemaViolation(f"{path}: bad point row: {exc}") from exc
    return points


# -- benchmark tables --------------------------------------------------------------

TableKey = tuple[str, str, str, int | None]  # (dataset, scale, task, shots)


@dataclass
class BenchmarkTable:
    rows: dict[TableKey, float]

    def __post_init__(self) -> None:
        for key, acc in self.rows.items():
            if not 0.0 <= acc <= 100.0:
                raise ValueError(f"accuracy {acc} outside [0, 100] at {key}")

    def datasets(self) -> list[str]:
        return sorted({k[0] for k in self.rows})

    def scales(self, dataset: str | None = None) -> list[str]:
        return sorted({k[1] for k in self.rows if dataset is None or k[0] == dataset})

    def tasks(self) -> list[str]:
        return sorted({k[2] for k in self.rows if k[2] != AVG_TASK})

    def cell(self, dataset: str, scale: str, task: str, shots: int | None = None) -> float:
        return self.rows[(dataset, scale, task, shots)]


def load_benchmark_table(path: Path | str) -> BenchmarkTable:
    path = Path(path)
    rows: dict[TableKey, float] = {}
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            expected = {"dataset", "scale", "task", "shots", "accuracy"}
            if reader.fieldnames is None or set(reader.fieldnames) != expected:
                raise SchemaViolation(f"{path}: expected header {sorted(expected)}")
            for row in reader:
                shots = int(row["shots"]) if row["shots"].strip() else None
                key = (row["dataset"], row["scale"], row["task"], shots)
                if key in rows:
                    raise SchemaViolation(f"{path}: duplicate key {key}")
                rows[key] = float(row["accuracy"])
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except ValueError as exc:
        raise SchemaViolation(f"{path}: bad table row: {exc}") from exc
    return BenchmarkTable(rows=rows)


def save_benchmark_table(table: BenchmarkTable, path: Path | str) -> None:
    lines = ["dataset,scale,task,shots,accuracy"]
    for (dataset, scale, task, shots), acc in sorted(
        table.rows.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], str(kv[0][3]))
    ):
        shots_field = "" if shots is None else str(shots)
        lines.append(f"{dataset},{scale},{task},{shots_field},{acc}")
    from .io_utils import atomic_write_text

    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def average_shots(table0: BenchmarkTable, table5: BenchmarkTable) -> BenchmarkTable:
    """Per-cell mean of the 0-shot and 5-shot tables, plus recomputed row averages.

    Input key sets must be identical apart from the shots coordinate. The
    output drops the shots coordinate; any 'avg' cells in the inputs are
    ignored and the per-row average is recomputed as the mean of the
    1-decimal-rounded task cells (stored unrounded; round for display).
    """
    def stripped(table: BenchmarkTable) -> dict[tuple[str, str, str], Decimal]:
        out: dict[tuple[str, str, str], Decimal] = {}
        for (dataset, scale, task, _), acc in table.rows.items():
            key = (dataset, scale, task)
            if key in out:
                raise KeyMismatch(f"multiple shots entries collapse onto {key}")
            out[key] = _dec(acc)
        return out

    zero = stripped(table0)
    five = stripped(table5)
    if set(zero) != set(five):
        missing = set(zero).symmetric_difference(five)
        raise KeyMismatch(f"tables disagree on keys, e.g. {sorted(missing)[:3]}")

    cells: dict[TableKey, float] = {}
    by_row: dict[tuple[str, str], list[Decimal]] = {}
    for (dataset, scale, task), acc0 in zero.items():
        if task == AVG_TASK:
            continue
        mean = (acc0 + five[(dataset, scale, task)]) / 2
        cells[(dataset, scale, task, None)] = float(mean)
        by_row.setdefault((dataset, scale), []).append(
            mean.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
        )
    for (dataset, scale), rounded in by_row.items():
        cells[(dataset, scale, AVG_TASK, None)] = float(sum(rounded) / len(rounded))
    return BenchmarkTable(rows=cells)


def row_average(table: BenchmarkTable, dataset: str, scale: str) -> float:
    """Mean over the task cells after rounding each to 1 decimal (half-up)."""
    rounded = [
        _dec(acc).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
        for (d, s, task, _), acc in table.rows.items()
        if d == dataset and s == scale and task != AVG_TASK
    ]
    if not rounded:
        raise MissingScale(f"no cells for dataset {dataset!r} at scale {scale!r}")
    return float(sum(rounded) / len(rounded))


def delta_vs_baseline(
    avg_table: BenchmarkTable, dataset_a: str, dataset_b: str
) -> dict[str, float]:
    """Per-scale difference of 1-decimal-rounded row averages (a minus b)."""
    scales_a = set(avg_table.scales(dataset_a))
    scales_b = set(avg_table.scales(dataset_b))
    if not scales_a:
        raise MissingScale(f"dataset {dataset_a!r} not in table")
    if not scales_b:
        raise MissingScale(f"dataset {dataset_b!r} not in table")
    deltas: dict[str, float] = {}
    for scale in sorted(scales_a | scales_b):
        if scale not in scales_a or scale not in scales_b:
            raise MissingScale(
                f"scale {scale!r} missing for {dataset_a!r} or {dataset_b!r}"
            )
        a = _dec(round_half_up(row_average(avg_table, dataset_a, scale), 1))
        b = _dec(round_half_up(row_average(avg_table, dataset_b, scale), 1))
        deltas[scale] = float(a - b)
    return deltas


# -- optional SVG plots -------------------------------------------------------------

def plot_curves_svg(curves: Iterable[LearningCurve], path: Path | str) -> None:
    """Line chart of learning curves; requires the 'plot' extra (matplotlib)."""
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for curve in curves:
        xs = [t for t, _ in curve.points]
        ys = [a for _, a in curve.points]
        ax.plot(xs, ys, marker="o", label=curve.run_id)
    ax.set_xlabel("tokens seen")
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    _save_svg(fig, path)


def plot_scatter_svg(points: Sequence[ParetoPoint], frontier: Sequence[ParetoPoint], path: Path | str) -> None:
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.scatter([p[0] for p in points], [p[1] for p in points], label="all points")
    fx = sorted(frontier)
    ax.plot([p[0] for p in fx], [p[1] for p in fx], color="tab:red", marker="s", label="frontier")
    for cost, acc, label in points:
        ax.annotate(label, (cost, acc), fontsize=7)
    ax.set_xlabel("cost")
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    _save_svg(fig, path)


def _matplotlib():
    try:
        import matplotlib

        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "synthpipe"
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise SchemaViolation(
            "plotting requires matplotlib (install the 'plot' extra)"
        ) from exc
    return plt


def _save_svg(fig, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # strip the embedded date so identical inputs produce identical bytes
    fig.savefig(path, format="svg", metadata={"Date": None})

#!/usr/bin/env python3
"""Recompute the headline aggregates from the bundled reference result files.

Reads data/reference_results/ (benchmark tables transcribed at 1-decimal
print precision, scaffold learning curves through the published crossing
points, and the model cost/accuracy points) and prints: time-to-baseline
speedups, shot-averaged row accuracies, dataset deltas, and the Pareto
frontier.

Usage:
  python scripts/analyze_reference_results.py
  python scripts/analyze_reference_results.py --data data/reference_results
"""

from __future__ import annotations

import argparse
from pathlib import Path

from synthpipe import analysis


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--data",
        type=Path,
        default=Path(__file__).parents[1] / "data" / "reference_results",
    )
    args = parser.parse_args()
    data = args.data

    print("== time-to-baseline speedups (8b candidate) ==")
    candidate, _ = analysis.load_curve(data / "curves" / "beyondweb_8b.csv")
    for baseline_name in ("rpj_8b", "nemotron_synth_8b"):
        baseline, _ = analysis.load_curve(data / "curves" / f"{baseline_name}.csv")
        result = analysis.speedup_to_baseline(candidate, baseline)
        print(
            f"  vs {baseline_name:<18} target {result.baseline_final_accuracy:>5.1f}%"
            f"  crossing {result.crossing_tokens / 1e9:6.1f}B tokens"
            f"  speedup {result.speedup:.2f} ({analysis.format_speedup(result.speedup)})"
        )

    print("\n== shot-averaged accuracies ==")
    t0 = analysis.load_benchmark_table(data / "accuracy_0shot.csv")
    t5 = analysis.load_benchmark_table(data / "accuracy_5shot.csv")
    averaged = analysis.average_shots(t0, t5)
    scales = averaged.scales()
    header = "  dataset           " + "".join(f"{s:>8}" for s in scales)
    print(header)
    for dataset in averaged.datasets():
        row = "".join(
            f"{analysis.round_half_up(analysis.row_average(averaged, dataset, s)):>8.1f}"
            for s in scales
        )
        print(f"  {dataset:<18}{row}")

    print("\n== deltas (pp) ==")
    for baseline in ("nemotron_synth", "rpj"):
        deltas = analysis.delta_vs_baseline(averaged, "beyondweb", baseline)
        pretty = ", ".join(f"{s}: {d:+.1f}" for s, d in deltas.items())
        print(f"  beyondweb vs {baseline:<15} {pretty}")

    print("\n== cost/accuracy Pareto frontier ==")
    points = analysis.load_pareto_points(data / "model_cost_accuracy.csv")
    frontier = analysis.pareto_frontier(points)
    for cost, accuracy, label in frontier:
        print(f"  {label:<22} cost {cost:.1e}  accuracy {accuracy:.1f}%")


if __name__ == "__main__":
    main()

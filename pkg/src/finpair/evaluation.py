"""Metrics, seed aggregation, min-max normalized reporting, and ablation runners.

The multi-level ablation reuses one built dataset and varies which text
levels feed the pooled vector (summaries for every level already exist, so
arms are pure masks). The retrieval-size sweep instead rebuilds the
company-level content per N through a caller-supplied builder, since N
changes what was retrieved and summarized upstream.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .forecasting import TrainConfig, TrainingError, WindowSample, evaluate_mse, train

log = logging.getLogger(__name__)

# The seven multi-level arms: progressively added from the macro end, then
# progressively removed from the macro end.
MULTILEVEL_ARMS: tuple[tuple[str, ...], ...] = (
    ("macro",),
    ("macro", "sector"),
    ("macro", "sector", "related"),
    ("macro", "sector", "related", "target"),
    ("sector", "related", "target"),
    ("related", "target"),
    ("target",),
)

RETRIEVAL_SIZE_ARMS: tuple[int, ...] = (0, 10, 15, 20)


def arm_label(arm: tuple[str, ...] | int) -> str:
    if isinstance(arm, int):
        return f"N={arm}"
    return "+".join(arm) if arm else "none"


@dataclass(frozen=True)
class AblationPlan:
    arms: tuple

    def __post_init__(self) -> None:
        if not self.arms:
            raise ValueError("ablation plan needs at least one arm")
        if len(set(self.arms)) != len(self.arms):
            raise ValueError("ablation arms must be distinct")


def multilevel_plan() -> AblationPlan:
    return AblationPlan(arms=MULTILEVEL_ARMS)


def retrieval_size_plan() -> AblationPlan:
    return AblationPlan(arms=RETRIEVAL_SIZE_ARMS)


def mse(pred: np.ndarray, true: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    return float(np.mean((pred - true) ** 2))


def mae(pred: np.ndarray, true: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    return float(np.mean(np.abs(pred - true)))


def minmax_normalize(values: Sequence[float]) -> list[float]:
    """(x - min) / (max - min) across arms; all-equal input maps to all 0.0."""
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ValueError("min-max normalization needs at least 2 values")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    return [(v - lo) / (hi - lo) for v in values]


@dataclass
class RunCell:
    model: str
    arm: str
    seed: int
    mse: float | None
    mae: float | None
    error: str | None = None


@dataclass
class MetricReport:
    cells: list[RunCell] = field(default_factory=list)

    def aggregated(self) -> dict[tuple[str, str], tuple[float, float]]:
        """(model, arm) -> (mean mse, mean mae) over seeds, invariant to seed order."""
        grouped: dict[tuple[str, str], list[tuple[float, float]]] = {}
        for cell in self.cells:
            if cell.error is None:
                grouped.setdefault((cell.model, cell.arm), []).append((cell.mse, cell.mae))
        return {
            key: (float(np.mean([m for m, _ in vals])), float(np.mean([a for _, a in vals])))
            for key, vals in grouped.items()
        }

    def normalized_mse(self) -> dict[tuple[str, str], float]:
        """Per model-config, min-max normalized mean MSE across its arms."""
        aggregated = self.aggregated()
        by_model: dict[str, list[tuple[str, float]]] = {}
        for (model, arm), (mean_mse, _) in aggregated.items():
            by_model.setdefault(model, []).append((arm, mean_mse))
        out: dict[tuple[str, str], float] = {}
        for model, pairs in by_model.items():
            if len(pairs) < 2:
                continue
            normalized = minmax_normalize([v for _, v in pairs])
            for (arm, _), value in zip(pairs, normalized):
                out[(model, arm)] = value
        return out


def run_ablation(
    plan: AblationPlan,
    build_samples: Callable[[object, int], tuple[Sequence[WindowSample], Sequence[WindowSample], Sequence[WindowSample]]],
    train_config: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    model_name: str = "ref_linear",
) -> MetricReport:
    """Train and test one cell per (arm, seed); failures mark the cell, not the run.

    build_samples(arm, seed) returns (train, val, test) samples for that arm.
    """
    report = MetricReport()
    for arm in plan.arms:
        label = arm_label(arm)
        for seed in seeds:
            try:
                train_samples, val_samples, test_samples = build_samples(arm, seed)
                model, _ = train(train_samples, val_samples, train_config, seed=seed)
                test_mse = evaluate_mse(model, test_samples)
                predictions = np.stack([model.forward(s.input, s.text_vector) for s in test_samples])
                targets = np.stack([s.target for s in test_samples])
                cell = RunCell(model=model_name, arm=label, seed=seed, mse=test_mse, mae=mae(predictions, targets))
            except (TrainingError, ValueError) as exc:
                log.warning("ablation cell (%s, seed %d) failed: %s", label, seed, exc)
                cell = RunCell(model=model_name, arm=label, seed=seed, mse=None, mae=None, error=str(exc))
            report.cells.append(cell)
    return report


def format_percent(rate: float) -> str:
    return f"{rate * 100:.1f}%"


def format_improvement(base: float, tuned: float) -> str:
    """Signed percentage-point gain, consistent with the displayed percentages."""
    delta = round(tuned * 100, 1) - round(base * 100, 1)
    return f"{delta:+.1f}%p"


def report_hit_rate_table(
    rates: Mapping[str, tuple[float, float]],
) -> list[dict[str, str]]:
    """Rows of Company / Base / Fine-Tuned / IMP from per-company rate pairs."""
    rows = []
    for company in sorted(rates):
        base, tuned = rates[company]
        rows.append(
            {
                "company": company,
                "base": format_percent(base),
                "fine_tuned": format_percent(tuned),
                "imp": format_improvement(base, tuned),
            }
        )
    return rows


def write_runs_csv(path: str | Path, report: MetricReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "arm", "seed", "mse", "mae"])
        for cell in report.cells:
            if cell.error is None:
                writer.writerow([cell.model, cell.arm, cell.seed, repr(cell.mse), repr(cell.mae)])
            else:
                writer.writerow([cell.model, cell.arm, cell.seed, "failed", "failed"])


def read_runs_csv(path: str | Path) -> MetricReport:
    report = MetricReport()
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            failed = row["mse"] == "failed"
            report.cells.append(
                RunCell(
                    model=row["model"],
                    arm=row["arm"],
                    seed=int(row["seed"]),
                    mse=None if failed else float(row["mse"]),
                    mae=None if failed else float(row["mae"]),
                    error="failed" if failed else None,
                )
            )
    return report


def write_report_csv(path: str | Path, report: MetricReport, decimals: int = 4) -> None:
    """Aggregated per (model, arm) table with normalized MSE, 4 decimal places."""
    aggregated = report.aggregated()
    normalized = report.normalized_mse()
    arm_order: list[tuple[str, str]] = []
    for cell in report.cells:
        key = (cell.model, cell.arm)
        if key not in arm_order:
            arm_order.append(key)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "arm", "mean_mse", "mean_mae", "normalized_mse"])
        for key in arm_order:
            if key not in aggregated:
                writer.writerow([key[0], key[1], "failed", "failed", ""])
                continue
            mean_mse, mean_mae = aggregated[key]
            norm = normalized.get(key)
            writer.writerow(
                [
                    key[0],
                    key[1],
                    f"{mean_mse:.{decimals}f}",
                    f"{mean_mae:.{decimals}f}",
                    "" if norm is None else f"{norm:.{decimals}f}",
                ]
            )


def write_plot_data_csv(path: str | Path, report: MetricReport) -> None:
    """Arm index vs normalized-MSE mean and stddev across model-configs."""
    normalized = report.normalized_mse()
    arm_order: list[str] = []
    for cell in report.cells:
        if cell.arm not in arm_order:
            arm_order.append(cell.arm)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm_index", "arm", "normalized_mse_mean", "normalized_mse_std"])
        for index, arm in enumerate(arm_order):
            values = [v for (model, a), v in normalized.items() if a == arm]
            if not values:
                writer.writerow([index, arm, "", ""])
                continue
            writer.writerow([index, arm, repr(float(np.mean(values))), repr(float(np.std(values)))])

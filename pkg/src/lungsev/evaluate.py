"""Cohort-level agreement statistics between two sets of severity reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateDataError, InputError
from .severity import SeverityReport
from .stats import (
    PERCENT_BIN_EDGES,
    SCORE_BIN_EDGES,
    PairedSeries,
    RegressionFit,
    bin_counts,
    chi2_contingency,
    kendall_tau,
    linfit,
    pearson,
)

METRICS = ("po", "pho", "lss", "lhos")

# Metrics with a linear-fit panel in the summary.
FIT_METRICS = ("po", "pho")

MIN_CASES = 3


@dataclass(frozen=True)
class MetricStats:
    """Agreement statistics for one severity metric across a cohort.

    Any statistic whose preconditions fail (constant series, empty
    contingency support, ...) is left as None with the reason recorded
    in the matching *_undefined field.
    """

    metric: str
    pearson_r: float | None = None
    pearson_p: float | None = None
    pearson_undefined: str | None = None
    kendall_tau: float | None = None
    kendall_p: float | None = None
    kendall_undefined: str | None = None
    chi2: float | None = None
    chi2_dof: int | None = None
    chi2_p: float | None = None
    chi2_undefined: str | None = None
    fit: RegressionFit | None = None
    fit_undefined: str | None = None

    def to_json_dict(self) -> dict:
        out: dict = {
            "pearson_r": self.pearson_r,
            "pearson_p": self.pearson_p,
            "kendall_tau": self.kendall_tau,
            "kendall_p": self.kendall_p,
            "chi2": self.chi2,
            "chi2_dof": self.chi2_dof,
            "chi2_p": self.chi2_p,
        }
        for key in ("pearson", "kendall", "chi2"):
            reason = getattr(self, key + "_undefined")
            if reason is not None:
                out[key + "_undefined"] = reason
        if self.metric in FIT_METRICS:
            if self.fit is not None:
                out["beta0"] = self.fit.beta0
                out["beta0_ci"] = list(self.fit.beta0_ci)
                out["beta1"] = self.fit.beta1
                out["beta1_ci"] = list(self.fit.beta1_ci)
                out["r2"] = self.fit.r2
                out["mean_abs_error"] = self.fit.mean_error
                out["rmse_about_fit"] = self.fit.rmse_about_fit
            else:
                out["fit_undefined"] = self.fit_undefined
        return out


@dataclass(frozen=True)
class CaseRow:
    """Ground-truth and predicted metric values for one case."""

    case_id: str
    positive: bool
    gt: dict[str, float]
    pred: dict[str, float]

    def to_json_dict(self) -> dict:
        out: dict = {"case_id": self.case_id, "positive": self.positive}
        for metric in METRICS:
            out[metric + "_gt"] = self.gt[metric]
            out[metric + "_pred"] = self.pred[metric]
        return out


@dataclass(frozen=True)
class EvaluationSummary:
    n_cases: int
    n_positive: int
    metrics: dict[str, MetricStats]
    cases: tuple[CaseRow, ...]

    def to_json_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "n_positive": self.n_positive,
            "metrics": {m: self.metrics[m].to_json_dict() for m in METRICS},
            "cases": [row.to_json_dict() for row in self.cases],
        }


def _metric_value(report: SeverityReport, metric: str) -> float:
    value = getattr(report, metric)
    return float(value)


def _edges_for(metric: str) -> Sequence[float]:
    return PERCENT_BIN_EDGES if metric in FIT_METRICS else SCORE_BIN_EDGES


def _metric_stats(
    metric: str,
    rows: Sequence[CaseRow],
    positive_rows: Sequence[CaseRow],
) -> MetricStats:
    gt_all = [row.gt[metric] for row in rows]
    pred_all = [row.pred[metric] for row in rows]
    gt_pos = [row.gt[metric] for row in positive_rows]
    pred_pos = [row.pred[metric] for row in positive_rows]

    fields: dict = {"metric": metric}

    try:
        series = PairedSeries(gt_pos, pred_pos)
        r, p = pearson(series)
        fields["pearson_r"] = r
        fields["pearson_p"] = p
    except DegenerateDataError as exc:
        fields["pearson_undefined"] = str(exc)

    try:
        series = PairedSeries(gt_pos, pred_pos)
        tau, p = kendall_tau(series)
        fields["kendall_tau"] = tau
        fields["kendall_p"] = p
    except DegenerateDataError as exc:
        fields["kendall_undefined"] = str(exc)

    edges = _edges_for(metric)
    try:
        result = chi2_contingency(bin_counts(gt_all, edges), bin_counts(pred_all, edges))
        fields["chi2"] = result.chi2
        fields["chi2_dof"] = result.dof
        fields["chi2_p"] = result.p_value
    except DegenerateDataError as exc:
        fields["chi2_undefined"] = str(exc)

    if metric in FIT_METRICS:
        try:
            fields["fit"] = linfit(PairedSeries(gt_pos, pred_pos))
        except DegenerateDataError as exc:
            fields["fit_undefined"] = str(exc)

    return MetricStats(**fields)


def evaluate_reports(
    gt_reports: Mapping[str, SeverityReport],
    pred_reports: Mapping[str, SeverityReport],
    positive_ids: Iterable[str] | None = None,
) -> EvaluationSummary:
    """Pair reports by case id and compute per-metric agreement statistics.

    Correlations and the linear fit use positive cases only when
    positive_ids is given; the contingency test always uses the full
    cohort. Without positive_ids every case is treated as positive.
    """
    gt_ids = set(gt_reports)
    pred_ids = set(pred_reports)
    if gt_ids != pred_ids:
        missing_pred = sorted(gt_ids - pred_ids)
        missing_gt = sorted(pred_ids - gt_ids)
        parts = []
        if missing_pred:
            parts.append("missing predictions for " + ", ".join(missing_pred))
        if missing_gt:
            parts.append("missing ground truth for " + ", ".join(missing_gt))
        raise InputError("case id mismatch: " + "; ".join(parts))
    case_ids = sorted(gt_ids)
    if len(case_ids) < MIN_CASES:
        raise InputError(f"need at least {MIN_CASES} paired cases, got {len(case_ids)}")

    if positive_ids is None:
        positive = set(case_ids)
    else:
        positive = set(positive_ids)
        unknown = sorted(positive - set(case_ids))
        if unknown:
            raise InputError("positive list names unknown cases: " + ", ".join(unknown))
        if len(positive) < MIN_CASES:
            raise InputError(
                f"need at least {MIN_CASES} positive cases for correlations, got {len(positive)}"
            )

    rows = tuple(
        CaseRow(
            case_id=cid,
            positive=cid in positive,
            gt={m: _metric_value(gt_reports[cid], m) for m in METRICS},
            pred={m: _metric_value(pred_reports[cid], m) for m in METRICS},
        )
        for cid in case_ids
    )
    positive_rows = [row for row in rows if row.positive]

    metrics = {m: _metric_stats(m, rows, positive_rows) for m in METRICS}
    return EvaluationSummary(
        n_cases=len(rows),
        n_positive=len(positive_rows),
        metrics=metrics,
        cases=rows,
    )


SCATTER_HEADER = ("case_id", "metric", "gt", "pred", "gt_jittered", "pred_jittered")


def scatter_rows(summary: EvaluationSummary, jitter_pct: float = 0.2, seed: int = 0) -> list[tuple]:
    """Per-case scatter points with a small uniform display jitter.

    The jitter exists purely to separate overlapping markers; the
    unjittered columns are the values every statistic is computed from.
    """
    if not np.isfinite(jitter_pct) or jitter_pct < 0:
        raise InputError(f"jitter_pct must be a nonnegative finite value, got {jitter_pct}")
    rng = np.random.default_rng(seed)
    rows: list[tuple] = []
    for case in summary.cases:
        for metric in METRICS:
            gt = case.gt[metric]
            pred = case.pred[metric]
            gt_j = gt + float(rng.uniform(-jitter_pct, jitter_pct))
            pred_j = pred + float(rng.uniform(-jitter_pct, jitter_pct))
            rows.append((case.case_id, metric, gt, pred, gt_j, pred_j))
    return rows


def write_scatter_csv(rows: Iterable[tuple], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SCATTER_HEADER)
        for row in rows:
            writer.writerow(row)

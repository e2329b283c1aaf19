"""ROC metrics (AUC, standardized partial AUC) and the report builder.

AUC is the Mann-Whitney statistic with 0.5 credit for ties, computed
from tied ranks. Partial AUC integrates the ROC polygon over false
positive rates in [0, p] (trapezoids, linear interpolation at p) and is
McClish-standardized back to [0, 1] so that chance scores 0.5.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadP, OneClassOnly


def _as_score_label_arrays(pairs):
    scores = np.asarray([s for s, _l in pairs], dtype=np.float64)
    labels = np.asarray([bool(l) for _s, l in pairs], dtype=bool)
    return scores, labels


def _tied_ranks(values):
    """1-based ranks, ties averaged."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(pairs):
    """Area under the ROC curve for (score, is_anomaly) pairs.

    Equals the probability that a random anomaly outscores a random
    normal, ties counting one half.
    """
    scores, labels = _as_score_label_arrays(pairs)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs at least one normal and one anomaly")
    ranks = _tied_ranks(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(pairs):
    """ROC polygon vertices from (0,0) upward, thresholds descending,
    tied scores grouped into single segments. Returns (fpr, tpr)."""
    scores, labels = _as_score_label_arrays(pairs)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC needs at least one normal and one anomaly")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = labels[order]
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    group_ends = np.concatenate([distinct, [len(scores) - 1]])
    tp = np.cumsum(sorted_pos)[group_ends]
    fp = (group_ends + 1) - tp
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    return fpr, tpr


def pauc(pairs, p=0.1, standardized=True):
    """Partial AUC over false-positive rate [0, p].

    standardized=True rescales with the McClish transform
    0.5 * (1 + (A - p^2/2) / (p - p^2/2)); standardized=False returns
    the raw partial area (debugging aid).
    """
    if not (0.0 < p <= 1.0):
        raise BadP(f"p = {p} outside (0, 1]")
    fpr, tpr = roc_points(pairs)
    area = 0.0
    for k in range(1, len(fpr)):
        f0, f1 = fpr[k - 1], fpr[k]
        t0, t1 = tpr[k - 1], tpr[k]
        if f1 <= p:
            area += (f1 - f0) * (t0 + t1) / 2.0
            continue
        if f0 < p:
            t_at_p = t0 + (t1 - t0) * (p - f0) / (f1 - f0)
            area += (p - f0) * (t0 + t_at_p) / 2.0
        break
    if not standardized:
        return float(area)
    min_area = p * p / 2.0
    max_area = p
    return float(0.5 * (1.0 + (area - min_area) / (max_area - min_area)))


@dataclass
class EvalReport:
    """AUC/pAUC per (machine, section, mode) plus the two mean levels."""

    per_section: dict
    per_machine: dict
    overall: dict
    p: float = 0.1


def summarize(per_section, p=0.1):
    """Arithmetic means: sections -> machine, machines -> overall."""
    by_machine = {}
    for (machine, _section, mode), (a, pa) in per_section.items():
        by_machine.setdefault((machine, mode), []).append((a, pa))
    per_machine = {
        key: (float(np.mean([a for a, _ in vals])), float(np.mean([pa for _, pa in vals])))
        for key, vals in by_machine.items()
    }
    by_mode = {}
    for (_machine, mode), (a, pa) in per_machine.items():
        by_mode.setdefault(mode, []).append((a, pa))
    overall = {
        mode: (float(np.mean([a for a, _ in vals])), float(np.mean([pa for _, pa in vals])))
        for mode, vals in by_mode.items()
    }
    return EvalReport(per_section=dict(per_section), per_machine=per_machine,
                      overall=overall, p=p)


def build_report(grouped_scores, p=0.1):
    """grouped_scores: {(machine, section, mode): [(score, is_anomaly), ...]}.

    Computes AUC and pAUC per group and both mean levels; OneClassOnly
    failures are re-raised naming the offending group.
    """
    per_section = {}
    for key in sorted(grouped_scores):
        pairs = grouped_scores[key]
        try:
            per_section[key] = (auc(pairs), pauc(pairs, p=p))
        except OneClassOnly as exc:
            machine, section, mode = key
            raise OneClassOnly(
                f"{machine}/section {section}/mode {mode}: {exc}") from exc
    return summarize(per_section, p=p)


def format_report(report):
    """Aligned text tables: per-section detail, then machine x mode means
    in the published layout (cells are AUC/pAUC in percent)."""
    lines = [f"Per-section AUC/pAUC (%)  (p = {report.p})"]
    lines.append(f"  {'machine':<12} {'section':<8} {'mode':<5} {'AUC':>7} {'pAUC':>7}")
    for (machine, section, mode), (a, pa) in sorted(report.per_section.items()):
        lines.append(f"  {machine:<12} {section:<8} {mode:<5} {100 * a:>7.2f} {100 * pa:>7.2f}")
    machines = sorted({m for m, _ in report.per_machine})
    modes = sorted({mode for _, mode in report.per_machine})
    lines.append("")
    lines.append(f"Machine means, AUC/pAUC (%)  (p = {report.p})")
    header = "  " + f"{'mode':<6}" + "".join(f"{m:>16}" for m in machines) + f"{'Average':>16}"
    lines.append(header)
    for mode in modes:
        row = f"  {mode:<6}"
        for m in machines:
            a, pa = report.per_machine[(m, mode)]
            row += f"{100 * a:>9.2f}/{100 * pa:<6.2f}"
        a, pa = report.overall[mode]
        row += f"{100 * a:>9.2f}/{100 * pa:<6.2f}"
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


def write_report_csv(report, path):
    """report.csv rows machine,section,mode,auc,pauc; per-machine means get
    section "mean", the overall means appear under machine "overall"."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write("machine,section,mode,auc,pauc\n")
        for (machine, section, mode), (a, pa) in sorted(report.per_section.items()):
            f.write(f"{machine},{section},{mode},{a:.6f},{pa:.6f}\n")
        for (machine, mode), (a, pa) in sorted(report.per_machine.items()):
            f.write(f"{machine},mean,{mode},{a:.6f},{pa:.6f}\n")
        for mode, (a, pa) in sorted(report.overall.items()):
            f.write(f"overall,mean,{mode},{a:.6f},{pa:.6f}\n")

"""Per-clip anomaly scores and the normalized ensemble.

Two detectors per clip: the reconstruction error through the clip's own
section decoder, and the classifier-confidence score log((1-p)/p) with
p the mean probability assigned to the true section. The ensemble
mean-variance normalizes both streams within a grouping (per section by
default) and averages them.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import GroupTooSmall

LABEL_NORMAL = "normal"
LABEL_ANOMALY = "anomaly"
LABEL_UNKNOWN = "unknown"

SCORE_MODES = ("gae", "ac", "ens")


@dataclass
class ScoreRecord:
    clip_id: str
    section_id: int
    section_code: str
    label: str
    a_rec: float
    a_aux: float
    a_ens: float | None = None


def score_rec(model, rows, section):
    """Mean per-row squared reconstruction error via decoder `section`."""
    model._check_section(section)
    rows = np.asarray(rows, dtype=model.dtype)
    z = model.encode(rows)
    recon = model.decode_group(z, section)
    err = recon - rows
    return float(np.einsum("ij,ij->i", err, err).mean())


def score_aux(model, rows, section, aggregate="mean_prob"):
    """Classifier-confidence score log((1-p)/p) for the clip's section.

    aggregate="mean_prob" (default) averages the per-row probability of
    the section and applies the log-odds once; "mean_score" averages the
    per-row log-odds instead.
    """
    model._check_section(section)
    z = model.encode(np.asarray(rows, dtype=model.dtype))
    probs = model.classifier_probs(z)[:, section].astype(np.float64)
    if aggregate == "mean_prob":
        p = np.clip(probs.mean(), nn.PROB_CLIP, 1.0 - nn.PROB_CLIP)
        return float(np.log((1.0 - p) / p))
    if aggregate == "mean_score":
        p = np.clip(probs, nn.PROB_CLIP, 1.0 - nn.PROB_CLIP)
        return float(np.log((1.0 - p) / p).mean())
    raise ValueError(f"unknown aggregate {aggregate!r}")


def mv_normalize(values):
    """Shift/scale to mean 0, population variance 1; all-equal -> zeros."""
    values = np.asarray(values, dtype=np.float64)
    std = values.std()
    if std == 0.0:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def ensemble(records, grouping="section"):
    """Fill a_ens on each record: the mean of the mv-normalized a_rec and
    a_aux streams, normalized within each group ("section" or "global")."""
    if grouping == "global":
        groups = {None: list(records)}
    elif grouping == "section":
        groups = {}
        for r in records:
            groups.setdefault(r.section_id, []).append(r)
    else:
        raise ValueError(f"unknown grouping {grouping!r}")
    for key, members in groups.items():
        if len(members) < 2:
            raise GroupTooSmall(
                f"normalization group {key!r} has {len(members)} record(s); need >= 2")
        rec_n = mv_normalize([r.a_rec for r in members])
        aux_n = mv_normalize([r.a_aux for r in members])
        for r, a, b in zip(members, rec_n, aux_n):
            r.a_ens = float((a + b) / 2.0)
    return records


def score_clip(model, fm, aggregate="mean_prob"):
    """Both detector scores for one FeatureMatrix; returns a ScoreRecord
    with the label left unknown (the evaluator joins labels later)."""
    a_rec = score_rec(model, fm.rows, fm.section_id)
    a_aux = (score_aux(model, fm.rows, fm.section_id, aggregate=aggregate)
             if model.classifier is not None else 0.0)
    return ScoreRecord(clip_id=fm.clip_id, section_id=fm.section_id,
                       section_code=fm.section_code, label=LABEL_UNKNOWN,
                       a_rec=a_rec, a_aux=a_aux)


def write_score_csvs(records, machine, out_dir, modes=SCORE_MODES):
    """DCASE-submission-shaped CSVs: anomaly_score_<machine>_section_<NN>_<mode>.csv
    with `<wav filename>,<score>` rows and no header. Returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_section = {}
    for r in records:
        by_section.setdefault(r.section_code or f"{r.section_id:02d}", []).append(r)
    attr = {"gae": "a_rec", "ac": "a_aux", "ens": "a_ens"}
    written = []
    for code in sorted(by_section):
        rows = sorted(by_section[code], key=lambda r: r.clip_id)
        for mode in modes:
            path = out_dir / f"anomaly_score_{machine}_section_{code}_{mode}.csv"
            with open(path, "w", encoding="utf-8") as f:
                for r in rows:
                    value = getattr(r, attr[mode])
                    if value is None:
                        raise ValueError(f"mode {mode}: record {r.clip_id} not ensembled")
                    f.write(f"{r.clip_id}.wav,{value:.10g}\n")
            written.append(path)
    return written

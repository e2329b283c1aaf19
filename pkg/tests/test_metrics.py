"""AUC/pAUC against brute-force oracles, plus report assembly."""

import numpy as np
import pytest

from aegm.errors import BadP, OneClassOnly
from aegm.metrics import (auc, build_report, format_report, pauc, roc_points,
                          summarize, write_report_csv)


def brute_auc(pairs):
    """O(n^2) pair counting: anomaly > normal scores 1, ties 0.5."""
    pos = [s for s, l in pairs if l]
    neg = [s for s, l in pairs if not l]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))


def brute_pauc(pairs, p):
    """Direct threshold enumeration -> ROC vertices -> exact polygon area
    over fpr in [0, p], then the same standardization map."""
    n_pos = sum(1 for _s, l in pairs if l)
    n_neg = len(pairs) - n_pos
    pts = [(0.0, 0.0)]
    for th in sorted({s for s, _l in pairs}, reverse=True):
        tp = sum(1 for s, l in pairs if l and s >= th)
        fp = sum(1 for s, l in pairs if not l and s >= th)
        pts.append((fp / n_neg, tp / n_pos))
    area = 0.0
    for (f0, t0), (f1, t1) in zip(pts, pts[1:]):
        if f1 <= p:
            area += (f1 - f0) * (t0 + t1) / 2.0
        else:
            if f0 < p:
                t_at = t0 + (t1 - t0) * (p - f0) / (f1 - f0)
                area += (p - f0) * (t0 + t_at) / 2.0
            break
    return 0.5 * (1.0 + (area - p * p / 2.0) / (p - p * p / 2.0))


def random_instance(rng):
    n = int(rng.integers(2, 51))
    n_pos = int(rng.integers(1, n))
    labels = np.zeros(n, dtype=bool)
    labels[:n_pos] = True
    rng.shuffle(labels)
    if rng.random() < 0.5:
        scores = rng.integers(0, 8, size=n).astype(float)  # heavy ties
    else:
        scores = rng.normal(size=n)
    return list(zip(scores.tolist(), labels.tolist()))


class TestAuc:
    def test_perfect_separation(self):
        pairs = [(0.1, False), (0.2, False), (0.8, True), (0.9, True)]
        assert auc(pairs) == 1.0

    def test_label_swap_reverses(self):
        pairs = [(0.1, True), (0.2, True), (0.8, False), (0.9, False)]
        assert auc(pairs) == 0.0

    def test_pair_counting_fixture(self):
        # normals [1, 3], anomalies [2, 4]: 3 of 4 pairs favor the anomaly
        pairs = [(1.0, False), (3.0, False), (2.0, True), (4.0, True)]
        assert auc(pairs) == 0.75

    def test_one_class_only(self):
        with pytest.raises(OneClassOnly):
            auc([(0.5, True), (0.6, True)])

    def test_matches_brute_force(self, rng):
        for _ in range(150):
            pairs = random_instance(rng)
            assert auc(pairs) == pytest.approx(brute_auc(pairs), abs=1e-12)

    def test_invariant_under_monotone_transform(self, rng):
        for _ in range(50):
            pairs = random_instance(rng)
            warped = [(np.exp(0.7 * s) + 3.0, l) for s, l in pairs]
            assert auc(pairs) == pytest.approx(auc(warped), abs=1e-12)

    def test_flip_complement_for_tie_free_scores(self, rng):
        scores = rng.permutation(20).astype(float)
        labels = np.array([True] * 8 + [False] * 12)
        rng.shuffle(labels)
        pairs = list(zip(scores, labels))
        flipped = [(s, not l) for s, l in pairs]
        assert auc(pairs) + auc(flipped) == pytest.approx(1.0, abs=1e-12)


class TestPauc:
    def test_perfect_separation(self):
        pairs = [(0.1, False), (0.2, False), (0.8, True), (0.9, True)]
        assert pauc(pairs, p=0.1) == pytest.approx(1.0, abs=1e-12)

    def test_p_one_equals_auc(self, rng):
        for _ in range(100):
            pairs = random_instance(rng)
            assert pauc(pairs, p=1.0) == pytest.approx(auc(pairs), abs=1e-12)

    def test_matches_roc_polygon_oracle(self, rng):
        for _ in range(150):
            pairs = random_instance(rng)
            for p in (0.1, 0.31, 0.5):
                assert pauc(pairs, p=p) == pytest.approx(brute_pauc(pairs, p), abs=1e-12)

    def test_interleaved_integer_fixture(self):
        pairs = [(float(i), i % 2 == 1) for i in range(20)]
        assert pauc(pairs, p=0.1) == pytest.approx(brute_pauc(pairs, 0.1), abs=1e-12)

    def test_chance_scores_one_half(self):
        # a single tied score group: the ROC is the diagonal
        pairs = [(1.0, True)] * 5 + [(1.0, False)] * 5
        assert pauc(pairs, p=0.1) == pytest.approx(0.5, abs=1e-12)
        assert auc(pairs) == pytest.approx(0.5, abs=1e-12)

    def test_raw_area_is_exposed(self):
        pairs = [(0.1, False), (0.2, False), (0.8, True), (0.9, True)]
        assert pauc(pairs, p=0.1, standardized=False) == pytest.approx(0.1, abs=1e-12)

    def test_bad_p(self):
        pairs = [(0.1, False), (0.9, True)]
        with pytest.raises(BadP):
            pauc(pairs, p=0.0)
        with pytest.raises(BadP):
            pauc(pairs, p=1.5)

    def test_roc_points_start_and_end(self, rng):
        pairs = random_instance(rng)
        fpr, tpr = roc_points(pairs)
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0
        assert (np.diff(fpr) >= 0).all() and (np.diff(tpr) >= 0).all()


class TestReport:
    def test_singleton_machine_mean(self):
        report = build_report({("pump", "00", "gae"):
                               [(0.1, False), (0.9, True)]})
        assert report.per_machine[("pump", "gae")] == report.per_section[("pump", "00", "gae")]

    def test_section_means(self):
        per_section = {
            ("fan", "00", "gae"): (0.6, 0.5),
            ("fan", "01", "gae"): (0.7, 0.6),
            ("fan", "02", "gae"): (0.8, 0.7),
        }
        report = summarize(per_section)
        a, pa = report.per_machine[("fan", "gae")]
        assert a == pytest.approx(0.7)
        assert pa == pytest.approx(0.6)

    def test_one_class_names_the_group(self):
        with pytest.raises(OneClassOnly, match="fan/section 01/mode gae"):
            build_report({("fan", "01", "gae"): [(0.5, True), (0.2, True)]})

    def test_published_row_arithmetic(self):
        # the reference per-machine averages reproduce the published
        # row average (the printed average is rounded from unrounded
        # inputs, hence the 0.01 slack)
        ae_row = {
            "ToyCar": (63.19, 52.42), "ToyTrain": (63.00, 54.90),
            "Fan": (64.03, 53.58), "Gearbox": (66.76, 52.80),
            "Pump": (63.66, 54.74), "Slider": (69.16, 56.40),
            "Valve": (53.74, 50.61),
        }
        per_section = {(m, "00", "ae"): (a / 100, pa / 100) for m, (a, pa) in ae_row.items()}
        report = summarize(per_section)
        a, pa = report.overall["ae"]
        assert 100 * a == pytest.approx(63.36, abs=0.01)
        assert 100 * pa == pytest.approx(53.63, abs=0.01)

    def test_format_and_csv(self, tmp_path):
        report = build_report({
            ("fan", "00", "gae"): [(0.1, False), (0.9, True)],
            ("fan", "00", "ac"): [(0.3, False), (0.2, True)],
        })
        text = format_report(report)
        assert "fan" in text and "Average" in text
        out = tmp_path / "report.csv"
        write_report_csv(report, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "machine,section,mode,auc,pauc"
        assert any(line.startswith("fan,00,gae,") for line in lines)
        assert any(line.startswith("overall,mean,") for line in lines)

#!/usr/bin/env python3
"""Independent oracle for the study report.

Plants per-subject timing errors on a frozen clip set, writes the prediction
records, and computes the expected report numbers with numpy and scipy.

    python3 scripts/study_oracle.py crates/autopreview/tests/fixtures
"""

import csv
import json
import sys
from pathlib import Path

import numpy as np
from scipy.stats import mannwhitneyu

# Mean planted error per subject, seconds.
SMALL = {
    "treatment": {"t1": 0.20, "t2": 0.35, "t3": 0.15, "t4": 0.45, "t5": 0.30},
    "comparison": {"c1": 0.90, "c2": 0.60, "c3": 1.20, "c4": 0.80, "c5": 0.40},
}
LARGE = {
    "treatment": {f"t{i}": e for i, e in enumerate([0.2, 0.35, 0.15, 0.45, 0.3, 0.5, 0.25, 0.7], 1)},
    "comparison": {f"c{i}": e for i, e in enumerate([0.9, 0.6, 1.2, 0.8, 0.4, 0.55, 1.0, 0.65], 1)},
}
# Subjects that copy another subject's answers, to force tied errors.
LARGE_COPIES = {"t7": "t3", "c8": "t8"}


def plant(clips, plan, rng, copies=None):
    rows = {}
    for group, subjects in plan.items():
        for sid, err in subjects.items():
            out = []
            for clip in clips:
                e = max(0.0, err + rng.normal(0.0, 0.08))
                sign = 1.0 if rng.random() < 0.5 else -1.0
                t_pred = min(5.0, max(0.0, clip["t_gt"] + sign * e))
                out.append((clip["clip_id"], round(t_pred, 3), int(rng.integers(0, 11)), group))
            rows[sid] = out
    for sid, src in (copies or {}).items():
        group = rows[sid][0][3]
        rows[sid] = [(c, t, k, group) for (c, t, k, _) in rows[src]]
    return rows


def write_records(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id", "clip_id", "t_pred", "confidence", "group"])
        for sid in sorted(rows):
            for clip_id, t_pred, conf, group in rows[sid]:
                w.writerow([sid, clip_id, repr(t_pred), conf, group])


def read_records(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def hedges(a, b):
    a, b = np.asarray(a), np.asarray(b)
    na, nb = len(a), len(b)
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    return float((a.mean() - b.mean()) / np.sqrt(pooled) * (1 - 3 / (4 * (na + nb) - 9)))


def between(t, c):
    exact = len(t) + len(c) <= 12
    res = mannwhitneyu(t, c, alternative="two-sided", method="exact" if exact else "asymptotic", use_continuity=True)
    u1 = float(res.statistic)  # pairs with treatment above comparison
    u_treatment = len(t) * len(c) - u1
    return {
        "hedges_g": hedges(t, c),
        "u_statistic": min(u1, u_treatment),
        "u_treatment": u_treatment,
        "p_value": float(res.pvalue),
        "method": "exact" if exact else "normal_approx",
    }


def expected(records, clips):
    t_gt = {c["clip_id"]: c["t_gt"] for c in clips}
    subjects = {}
    for r in records:
        s = subjects.setdefault(r["subject_id"], {"group": r["group"], "err": [], "conf": []})
        s["err"].append(abs(float(r["t_pred"]) - t_gt[r["clip_id"]]))
        s["conf"].append(float(r["confidence"]))
    out_subjects = {}
    for sid, s in subjects.items():
        err, conf = np.array(s["err"]), np.array(s["conf"])
        out_subjects[sid] = {
            "group": s["group"],
            "unweighted_error_s": float(err.mean()),
            "weighted_error_s": float((err * conf).sum() / conf.sum()) if conf.sum() > 0 else None,
            "mean_confidence": float(conf.mean()),
        }
    groups = {}
    for g in ("comparison", "treatment"):
        members = [v for v in out_subjects.values() if v["group"] == g]
        groups[g] = {
            "unweighted_error_s": float(np.mean([m["unweighted_error_s"] for m in members])),
            "weighted_error_s": float(np.mean([m["weighted_error_s"] for m in members])),
            "mean_confidence": float(np.mean([m["mean_confidence"] for m in members])),
        }
    per = lambda g, k: [v[k] for _, v in sorted(out_subjects.items()) if v["group"] == g]
    return {
        "subjects": out_subjects,
        "groups": groups,
        "unweighted_error": between(per("treatment", "unweighted_error_s"), per("comparison", "unweighted_error_s")),
        "weighted_error": between(per("treatment", "weighted_error_s"), per("comparison", "weighted_error_s")),
    }


def main(fixtures):
    fixtures = Path(fixtures)
    clips = json.loads((fixtures / "clips" / "manifest.json").read_text())["clips"]
    rng = np.random.default_rng(20240611)
    for name, plan, copies in (("synthetic", SMALL, None), ("synthetic_large", LARGE, LARGE_COPIES)):
        path = fixtures / f"{name}.csv"
        write_records(path, plant(clips, plan, rng, copies))
        exp = expected(read_records(path), clips)
        (fixtures / f"{name}_expected.json").write_text(json.dumps(exp, indent=2, sort_keys=True) + "\n")
        print(name, json.dumps(exp["unweighted_error"]))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/autopreview/tests/fixtures")

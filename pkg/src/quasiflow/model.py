"""Gradient-boosted classifier training and minority-class evaluation."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError
from .features import FeatureMatrix

MODEL_MAGIC = b"QFGB"
MODEL_VERSION = 1


@dataclass
class ModelParams:
    rounds: int = 500
    max_depth: int = 8
    learning_rate: float = 0.1
    early_stopping: int = 50
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    class_weight: bool = True
    threads: int = 1


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    tn = int(np.sum(~y_true & ~y_pred))
    return tp, fp, fn, tn


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def best_threshold(y_true, scores) -> tuple[float, float]:
    """Threshold maximising minority F1 for the rule ``score >= threshold``.

    Candidate cuts sit at distinct score values, so any strictly increasing
    transform of the scores selects the same predictions.
    """
    y = np.asarray(y_true).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    pos = int(y.sum())
    if pos == 0 or len(s) == 0:
        return float("inf"), 0.0
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    k = np.arange(1, len(s) + 1)
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    f1 = np.where(last, 2.0 * tp / (k + pos), -1.0)
    i = int(np.argmax(f1))
    return float(s_sorted[i]), float(f1[i])


@dataclass
class Classifier:
    booster: object
    names: list[str]
    threshold: float
    best_iteration: int
    seed: int

    def predict_proba(self, fm: FeatureMatrix) -> np.ndarray:
        import xgboost as xgb

        if fm.names != self.names:
            raise DataError("feature columns differ from training")
        d = xgb.DMatrix(fm.X, missing=np.nan)
        return self.booster.predict(d, iteration_range=(0, self.best_iteration + 1))

    def save(self, path) -> None:
        raw = bytes(self.booster.save_raw("ubj"))
        meta = json.dumps({"names": self.names, "threshold": self.threshold,
                           "best_iteration": self.best_iteration, "seed": self.seed}).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIQQ", MODEL_MAGIC, MODEL_VERSION, len(meta), len(raw)))
            fh.write(meta)
            fh.write(raw)

    @classmethod
    def load(cls, path) -> "Classifier":
        import xgboost as xgb

        with open(path, "rb") as fh:
            magic, version, n_meta, n_raw = struct.unpack("<4sIQQ", fh.read(struct.calcsize("<4sIQQ")))
            if magic != MODEL_MAGIC or version != MODEL_VERSION:
                raise DataError(f"{path}: not a classifier file (v{MODEL_VERSION})")
            meta = json.loads(fh.read(n_meta))
            booster = xgb.Booster()
            booster.load_model(bytearray(fh.read(n_raw)))
        return cls(booster, meta["names"], meta["threshold"], meta["best_iteration"], meta["seed"])


def train_classifier(train: FeatureMatrix, valid: FeatureMatrix, params: ModelParams | None = None,
                     seed: int = 0) -> Classifier:
    """Logistic-loss boosted trees, early-stopped on validation minority F1."""
    import xgboost as xgb

    params = params or ModelParams()
    n_pos = int(train.y.sum())
    n_neg = len(train.y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("training data must contain both classes")
    booster_params = {
        "objective": "binary:logistic",
        "tree_method": "hist",
        "max_depth": params.max_depth,
        "eta": params.learning_rate,
        "subsample": params.subsample,
        "colsample_bytree": params.colsample_bytree,
        "scale_pos_weight": n_neg / n_pos if params.class_weight else 1.0,
        "seed": seed,
        "nthread": params.threads,
        "disable_default_eval_metric": 1,
    }
    dtrain = xgb.DMatrix(train.X, label=train.y, missing=np.nan)
    dvalid = xgb.DMatrix(valid.X, label=valid.y, missing=np.nan)

    def valid_f1(predt, dmat):
        return "best_f1", best_threshold(dmat.get_label(), predt)[1]

    has_valid_pos = valid.y.sum() > 0
    booster = xgb.train(
        booster_params, dtrain, num_boost_round=params.rounds,
        evals=[(dvalid, "valid")] if has_valid_pos else [],
        custom_metric=valid_f1 if has_valid_pos else None,
        maximize=True,
        early_stopping_rounds=params.early_stopping if has_valid_pos else None,
        verbose_eval=False,
    )
    best = int(getattr(booster, "best_iteration", params.rounds - 1)) if has_valid_pos else params.rounds - 1
    clf = Classifier(booster, list(train.names), 0.5, best, seed)
    if has_valid_pos:
        clf.threshold = best_threshold(valid.y, clf.predict_proba(valid))[0]
    return clf


@dataclass
class EvalReport:
    n_test: int
    n_test_positive: int
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    split_sizes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(clf: Classifier, test: FeatureMatrix, threshold_policy: str | float = "tuned",
             split_sizes: dict | None = None) -> EvalReport:
    """Apply the validation-tuned threshold (or a fixed one) to ``test``."""
    p = clf.predict_proba(test)
    thr = clf.threshold if threshold_policy == "tuned" else float(threshold_policy)
    return report_from_scores(test.y, p, thr, split_sizes)


def report_from_scores(y, scores, threshold: float, split_sizes: dict | None = None) -> EvalReport:
    tp, fp, fn, tn = confusion(y, np.asarray(scores) >= threshold)
    precision, recall, f1 = prf(tp, fp, fn)
    return EvalReport(len(y), int(np.sum(y)), float(threshold), tp, fp, fn, tn,
                      precision, recall, f1, dict(split_sizes or {}))


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def format_pm(values, scale: float = 100.0) -> str:
    """Percent mean ± std with two decimals, e.g. ``78.90 ± 0.23``."""
    m, s = mean_std(values)
    return f"{m * scale:.2f} ± {s * scale:.2f}"


@dataclass
class SeedSummary:
    reports: list[EvalReport]

    @property
    def f1(self) -> list[float]:
        return [r.f1 for r in self.reports]

    @property
    def recall(self) -> list[float]:
        return [r.recall for r in self.reports]

    def to_dict(self) -> dict:
        return {
            "per_seed": [r.to_dict() for r in self.reports],
            "f1_mean": mean_std(self.f1)[0],
            "f1_std": mean_std(self.f1)[1],
            "recall_mean": mean_std(self.recall)[0],
            "recall_std": mean_std(self.recall)[1],
            "f1": format_pm(self.f1),
            "recall": format_pm(self.recall),
        }


def train_and_evaluate(train: FeatureMatrix, valid: FeatureMatrix, test: FeatureMatrix,
                       seeds=(0, 1, 2, 3, 4), params: ModelParams | None = None):
    sizes = {"train": len(train), "valid": len(valid), "test": len(test)}
    reports, models = [], []
    for s in seeds:
        clf = train_classifier(train, valid, params, seed=s)
        reports.append(evaluate(clf, test, "tuned", sizes))
        models.append(clf)
    return SeedSummary(reports), models


def check_f1(report: EvalReport) -> bool:
    """F1 equals the harmonic mean of the reported precision and recall."""
    p, r = report.precision, report.recall
    h = 2 * p * r / (p + r) if p + r else 0.0
    return math.isclose(h, report.f1, abs_tol=1e-9)


def ablation_prefixes(groups) -> list[tuple[str, ...]]:
    """Cumulative prefixes of ``groups`` plus (transaction, anomaly) when both appear."""
    from .features import GROUPS

    groups = list(groups)
    unknown = [g for g in groups if g not in GROUPS]
    if unknown:
        raise DataError(f"unknown feature group(s): {', '.join(unknown)}")
    if not groups:
        raise DataError("no feature groups given")
    if len(set(groups)) != len(groups):
        raise DataError("duplicate feature group")
    out = [tuple(groups[: i + 1]) for i in range(len(groups))]
    extra = ("transaction", "anomaly")
    if len(groups) > 1 and set(extra) <= set(groups) and extra not in out:
        out.append(extra)
    return out


def ablation_grid(train: FeatureMatrix, valid: FeatureMatrix, test: FeatureMatrix, groups,
                  seeds=(0, 1, 2, 3, 4), params: ModelParams | None = None) -> list[dict]:
    rows = []
    for prefix in ablation_prefixes(groups):
        sel = [fm.select(prefix) for fm in (train, valid, test)]
        summary, _ = train_and_evaluate(*sel, seeds=seeds, params=params)
        d = summary.to_dict()
        rows.append({
            "groups": "+".join(prefix),
            "n_features": len(sel[0].names),
            "f1_mean": d["f1_mean"], "f1_std": d["f1_std"],
            "recall_mean": d["recall_mean"], "recall_std": d["recall_std"],
            "f1": d["f1"], "recall": d["recall"],
        })
    return rows

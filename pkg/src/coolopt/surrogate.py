"""Accessory-power surrogate: features -> regimes -> monotone booster -> isotonic map.

Also holds the regression/PUE metric suite and the model artifact format.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import LengthMismatch, ModelFormatError, NonPositiveItPower, TooFewSamples
from .features import FeatureConfig, FeatureSchema, build_feature_matrix, build_schema
from .gbt import BoostedEnsemble, TrainConfig, fit_ensemble
from .isotonic import IsotonicMap, apply_isotonic, fit_isotonic
from .regimes import RegimeModel, fit_regimes

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "coolopt-surrogate"
ARTIFACT_VERSION = 1
ENVELOPE_FEATURES = ("t_sup", "q_tot", "mean_delta_t", "q_tot_heat")
MIN_TRAINABLE_ROWS = 1000


@dataclass
class MetricReport:
    mae: float
    rmse: float
    r2: Optional[float]
    smape: float
    wape: Optional[float]
    rmsle: float
    pue_mae: float
    pue_rmse: float
    pue_within_001: float
    n: int = 0

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: d.get(f.name) for f in fields(cls)})


# Table-I style row labels for the flat metrics report
METRIC_LABELS = (
    ("mae", "MAE [MW]"),
    ("rmse", "RMSE [MW]"),
    ("r2", "R2"),
    ("smape", "SMAPE [%]"),
    ("wape", "WAPE"),
    ("rmsle", "RMSLE"),
    ("pue_mae", "PUE MAE"),
    ("pue_rmse", "PUE RMSE"),
    ("pue_within_001", "PUE within +-0.01"),
)


def implied_pue(p_it, p_acc_hat):
    """(IT + accessory) / IT, clipped below at 1.0."""
    p_it = np.asarray(p_it, dtype=float)
    p_acc_hat = np.asarray(p_acc_hat, dtype=float)
    if np.any(~(p_it > 0)):
        raise NonPositiveItPower("IT power must be positive to form a PUE")
    out = np.maximum(1.0, (p_it + p_acc_hat) / p_it)
    return float(out) if out.ndim == 0 else out


def evaluate_metrics(actual, predicted, p_it, pue_tolerance=0.01):
    y = np.asarray(actual, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    p_it = np.asarray(p_it, dtype=float)
    if not (y.shape == yhat.shape == p_it.shape):
        raise LengthMismatch("actual, predicted and p_it must have equal lengths")
    if y.size < 2:
        raise LengthMismatch("need at least two points")
    e = yhat - y
    abs_e = np.abs(e)
    sse = float(np.sum(e ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    denom = np.abs(y) + np.abs(yhat)
    ratio = np.divide(2.0 * abs_e, denom, out=np.zeros_like(denom), where=denom > 0)
    sum_y = float(np.sum(np.abs(y)))
    pue_a = implied_pue(p_it, y)
    pue_p = implied_pue(p_it, yhat)
    dpue = pue_p - pue_a
    return MetricReport(
        mae=float(np.mean(abs_e)),
        rmse=float(np.sqrt(np.mean(e ** 2))),
        r2=None if sst == 0 else 1.0 - sse / sst,
        smape=float(100.0 * np.mean(ratio)),
        wape=None if sum_y == 0 else float(np.sum(abs_e) / sum_y),
        rmsle=float(np.sqrt(np.mean((np.log1p(yhat) - np.log1p(y)) ** 2))),
        pue_mae=float(np.mean(np.abs(dpue))),
        pue_rmse=float(np.sqrt(np.mean(dpue ** 2))),
        pue_within_001=float(np.mean(np.abs(dpue) <= pue_tolerance)),
        n=int(y.size),
    )


@dataclass(frozen=True)
class SurrogateConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    test_fraction: float = 0.2
    split_seed: int = 42
    regime_seed: int = 42


@dataclass
class SurrogateModel:
    ensemble: BoostedEnsemble
    calibrator: IsotonicMap
    regimes: RegimeModel
    schema: FeatureSchema
    feature_config: FeatureConfig
    train_percentiles: dict  # name -> (p1, p99)
    split_seed: int
    regime_seed: int
    metrics: dict  # "train" / "test" -> MetricReport
    t_sup_max: float  # largest supply temperature seen in training rows
    training_report: dict = field(default_factory=dict)

    def raw_predict(self, X):
        return self.ensemble.predict(X)

    def predict(self, X):
        """Calibrated accessory power (MW), floored at zero."""
        out = np.maximum(apply_isotonic(self.calibrator, self.ensemble.predict(X)), 0.0)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def mae_test(self):
        return self.metrics["test"].mae

    def features(self, dataset):
        return build_feature_matrix(dataset, self.schema, self.feature_config, regimes=self.regimes)

    def to_dict(self):
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "schema": self.schema.to_dict(),
            "feature_config": asdict(self.feature_config),
            "train_config": self.training_report.get("config", {}),
            "ensemble": self.ensemble.to_dict(),
            "calibrator": self.calibrator.to_dict(),
            "calibration_fit": "training split, final ensemble raw outputs",
            "regimes": self.regimes.to_dict(),
            "train_percentiles": {k: list(v) for k, v in self.train_percentiles.items()},
            "split_seed": self.split_seed,
            "regime_seed": self.regime_seed,
            "metrics": {k: m.as_dict() for k, m in self.metrics.items()},
            "t_sup_max": self.t_sup_max,
            "training_report": {k: v for k, v in self.training_report.items() if k != "config"},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != ARTIFACT_FORMAT:
            raise ModelFormatError("not a surrogate model artifact")
        if d.get("version") != ARTIFACT_VERSION:
            raise ModelFormatError(f"unsupported artifact version {d.get('version')!r}")
        schema = FeatureSchema.from_dict(d["schema"])
        fcfg = FeatureConfig(**d["feature_config"])
        expected = build_schema(fcfg)
        if expected.names != schema.names or expected.monotone != schema.monotone:
            raise ModelFormatError("artifact schema disagrees with its feature configuration")
        ens = BoostedEnsemble.from_dict(d["ensemble"])
        if ens.feature_count != len(schema):
            raise ModelFormatError("ensemble feature count disagrees with schema")
        report = dict(d.get("training_report", {}))
        report["config"] = d.get("train_config", {})
        return cls(
            ensemble=ens,
            calibrator=IsotonicMap.from_dict(d["calibrator"]),
            regimes=RegimeModel.from_dict(d["regimes"]),
            schema=schema,
            feature_config=fcfg,
            train_percentiles={k: tuple(v) for k, v in d["train_percentiles"].items()},
            split_seed=int(d["split_seed"]),
            regime_seed=int(d["regime_seed"]),
            metrics={k: MetricReport.from_dict(m) for k, m in d["metrics"].items()},
            t_sup_max=float(d["t_sup_max"]),
            training_report=report,
        )

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path):
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(d)


def split_rows(n, test_fraction, seed):
    """Random row split; returns sorted (train, test) index arrays."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train_surrogate(dataset, cfg=None):
    cfg = cfg or SurrogateConfig()
    schema = build_schema(cfg.features)
    fm = build_feature_matrix(dataset, schema, cfg.features)
    rows = np.flatnonzero(fm.trainable)
    if len(rows) < MIN_TRAINABLE_ROWS:
        raise TooFewSamples(f"need at least {MIN_TRAINABLE_ROWS} trainable rows, got {len(rows)}")
    tr_pos, te_pos = split_rows(len(rows), cfg.test_fraction, cfg.split_seed)
    train_idx, test_idx = rows[tr_pos], rows[te_pos]

    q_tot = fm.column("q_tot")
    t_sup = fm.column("t_sup")
    regimes = fit_regimes(np.column_stack([q_tot[train_idx], t_sup[train_idx]]), seed=cfg.regime_seed)
    fm.X[:, schema.index("regime")] = regimes.assign(q_tot, t_sup)

    # train_idx is time-ordered, so the booster's trailing validation slice is contiguous in time
    X_train, y_train = fm.X[train_idx], dataset.p_acc[train_idx]
    ens, report = fit_ensemble(X_train, y_train, schema, cfg.train)
    calibrator = fit_isotonic(ens.predict(X_train), y_train)

    percentiles = {}
    for name in ENVELOPE_FEATURES:
        p1, p99 = np.percentile(fm.column(name)[train_idx], [1, 99])
        percentiles[name] = (float(p1), float(p99))

    model = SurrogateModel(
        ensemble=ens,
        calibrator=calibrator,
        regimes=regimes,
        schema=schema,
        feature_config=cfg.features,
        train_percentiles=percentiles,
        split_seed=cfg.split_seed,
        regime_seed=cfg.regime_seed,
        metrics={},
        t_sup_max=float(t_sup[train_idx].max()),
        training_report=report,
    )
    for name, idx in (("train", train_idx), ("test", test_idx)):
        model.metrics[name] = evaluate_metrics(dataset.p_acc[idx], model.predict(fm.X[idx]), dataset.p_it[idx])
    report["n_train"] = int(len(train_idx))
    report["n_test"] = int(len(test_idx))
    log.info("surrogate trained: test MAE %.4f MW, R2 %s", model.metrics["test"].mae, model.metrics["test"].r2)
    return model


def predict_accessory_power(model, row):
    return model.predict(row)


def metrics_table(model):
    """Rows of (label, train, test) mirroring the usual surrogate metrics table."""
    out = []
    for key, label in METRIC_LABELS:
        out.append((label, getattr(model.metrics["train"], key), getattr(model.metrics["test"], key)))
    return out

"""Run configuration: one YAML file with a section per pipeline stage.

Unset paths default to the stage layout under the output directory, so
``synth -> train -> excess -> cfsearch -> review`` chain without any path
settings.
"""

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .counterfactual import ActionGrid, CounterfactualConfig, GuardrailConfig
from .errors import InvalidConfig
from .excess import TariffSchedule
from .features import FeatureConfig
from .gbt import TrainConfig
from .review import ReviewConfig
from .surrogate import SurrogateConfig
from .synthetic import ScenarioConfig
from .telemetry import ColumnSchema

DEFAULTS = {
    "paths": {
        "out": "out",
        "telemetry": None,  # default: <out>/synth/telemetry.csv
        "model": None,  # default: <out>/train/model.json
        "excess": None,  # default: <out>/excess/intervals.csv
        "ledger": None,  # default: <out>/cfsearch/ledger.csv
    },
    "schema": {"columns": {}, "flow_unit": "L/s"},
    "data": {"strict": False},
    "features": {"lags": [1, 3, 6], "windows": [6, 36], "low_load_threshold": 10.0, "c_w": 0.004186},
    "train": {**asdict(TrainConfig()), "test_fraction": 0.2, "split_seed": 42, "regime_seed": 42},
    "guardrails": {"alpha": 0.97, "delta_t_min": 0.5, "t_sup_max": None, "flow_floor": 0.90},
    "actions": {
        "d_tsup": list(ActionGrid().d_tsup),
        "s_dom": list(ActionGrid().s_dom),
        "s_non": list(ActionGrid().s_non),
        "independent_non": False,
        "chunk_intervals": 512,
    },
    "tariff": {"kind": "flat", "flat_price": 0.06, "tou_periods": [], "demand_rate": None},
    "review": {
        "s_min": 0.02,
        "mae_test": None,
        "hysteresis_idle_steps": 2,
        "ramp_tsup_limit": 0.5,
        "reject_out_of_distribution": True,
    },
    "synth": {"duration_days": 90, "seed": 7, "law": {}, "episodes": []},
}

SECTION_HELP = {
    "paths": "out dir and stage inputs (telemetry CSV, model artifact, excess CSV, ledger CSV)",
    "schema": "CSV header mapping and flow unit (L/s, m3/h, GPM)",
    "data": "strict: fail on the first unparsable row instead of rejecting it",
    "features": "lags and rolling windows in 10-minute steps, low-load threshold MW, C_W",
    "train": "booster hyperparameters, test fraction, split and regime seeds",
    "guardrails": "alpha, delta_t_min K, t_sup_max degC (null: training max), flow_floor",
    "actions": "action grid (d_tsup, s_dom, s_non), independent_non, chunk_intervals",
    "tariff": "kind flat|tou, flat_price $/kWh, tou_periods, demand_rate $/MW-month",
    "review": "s_min MW, mae_test (null: from model), hysteresis steps, ramp limit degC",
    "synth": "scenario for the synth command (any ScenarioConfig field)",
}


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in out:
            raise InvalidConfig(f"unknown key {where}.{key}")
        if isinstance(out[key], dict) and key not in ("columns", "law") and isinstance(value, dict):
            out[key] = _merge(out[key], value, f"{where}.{key}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _synth_merge(base, override):
    # synth accepts any ScenarioConfig field
    allowed = {f.name for f in fields(ScenarioConfig)}
    for key in override or {}:
        if key not in allowed:
            raise InvalidConfig(f"unknown key config.synth.{key}")
    out = copy.deepcopy(base)
    out.update(copy.deepcopy(override or {}))
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        synth = d.pop("synth", None)
        raw = _merge(DEFAULTS, d)
        raw["synth"] = _synth_merge(DEFAULTS["synth"], synth)
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig(f"config {path} must be a mapping")
        return cls.from_dict(data)

    def dump(self):
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=False)

    def override_seed(self, seed):
        self.raw["synth"]["seed"] = int(seed)
        self.raw["train"]["seed"] = int(seed)
        self.raw["train"]["split_seed"] = int(seed)
        self.raw["train"]["regime_seed"] = int(seed)

    def validate(self):
        # building every sub-config runs its own invariant checks
        try:
            self.column_schema()
            self.surrogate_config()
            self.counterfactual_config()
            self.tariff()
            self.review_config()
            self.scenario()
        except InvalidConfig:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from exc
        return self

    # paths
    @property
    def out(self):
        return Path(self.raw["paths"]["out"])

    def set_out(self, path):
        self.raw["paths"]["out"] = str(path)

    def path(self, key):
        explicit = self.raw["paths"].get(key)
        if explicit:
            return Path(explicit)
        defaults = {
            "telemetry": self.out / "synth" / "telemetry.csv",
            "model": self.out / "train" / "model.json",
            "excess": self.out / "excess" / "intervals.csv",
            "ledger": self.out / "cfsearch" / "ledger.csv",
        }
        return defaults[key]

    # sub-configs
    def column_schema(self):
        s = self.raw["schema"]
        return ColumnSchema(columns=dict(s.get("columns") or {}), flow_unit=s.get("flow_unit", "L/s"))

    def feature_config(self):
        return FeatureConfig(**self.raw["features"])

    def surrogate_config(self):
        t = dict(self.raw["train"])
        extra = {k: t.pop(k) for k in ("test_fraction", "split_seed", "regime_seed")}
        if not 0 < extra["test_fraction"] < 1:
            raise InvalidConfig("train.test_fraction must lie in (0, 1)")
        return SurrogateConfig(features=self.feature_config(), train=TrainConfig(**t), **extra)

    def counterfactual_config(self):
        a = self.raw["actions"]
        grid = ActionGrid(d_tsup=tuple(a["d_tsup"]), s_dom=tuple(a["s_dom"]), s_non=tuple(a["s_non"]),
                          independent_non=bool(a["independent_non"]))
        return CounterfactualConfig(grid=grid, guardrails=GuardrailConfig(**self.raw["guardrails"]),
                                    chunk_intervals=int(a["chunk_intervals"]))

    def tariff(self):
        return TariffSchedule(**self.raw["tariff"])

    def review_config(self, model=None):
        cfg = ReviewConfig(**self.raw["review"])
        return cfg.with_model(model) if model is not None else cfg

    def scenario(self):
        return ScenarioConfig(**self.raw["synth"])


def defaults_help():
    lines = ["config sections (YAML; every key optional, defaults shown):"]
    for section, text in SECTION_HELP.items():
        lines.append(f"  {section}: {text}")
        value = DEFAULTS[section]
        for key, v in value.items():
            lines.append(f"      {key}: {v!r}")
    return "\n".join(lines)

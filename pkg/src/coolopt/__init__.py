"""Accessory-power surrogate, excess monitor and counterfactual savings for liquid-cooled plants."""

from .counterfactual import (Action, ActionGrid, CounterfactualConfig, GuardrailConfig, SavingsLedger,
                             enumerate_actions, run_counterfactual)
from .excess import ExcessSeries, TariffSchedule, TouPeriod, compute_excess
from .features import FeatureConfig, build_feature_matrix, build_schema
from .gbt import BoostedEnsemble, TrainConfig, check_monotonicity, fit_ensemble
from .isotonic import IsotonicMap, fit_isotonic, pava
from .regimes import RegimeModel, fit_regimes
from .review import ReviewConfig, build_review
from .surrogate import SurrogateConfig, SurrogateModel, evaluate_metrics, train_surrogate
from .synthetic import Episode, PlantLaw, ScenarioConfig, generate_scenario
from .telemetry import CleanDataset, ColumnSchema, clean_and_order, parse_telemetry_csv

__version__ = "0.1.0"

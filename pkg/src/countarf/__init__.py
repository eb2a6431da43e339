"""Plausible counterfactual explanations for tabular predictors with adversarial random forests."""

__version__ = "0.1.0"

from .arf import ArfModel, ArfParams, ConditionSet, FixedValue, Interval, CategorySet, fit_arf, forde_density, forge_sample
from .candidates import Candidate, CounterfactualSet, default_m_max
from .forest import Forest, ForestParams, fit_forest
from .generator import CountArfConfig, run_countarf, sample_change_set
from .moc import MocConfig, run_moc, run_mocarf
from .objectives import DesiredOutcome, ObjectiveContext
from .tabular import Dataset, Feature, FeatureSchema, load_csv, load_schema

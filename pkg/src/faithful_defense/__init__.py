"""Faithful, minimally revealing explanations for decision-set classifiers,
and the model-extraction game used to measure what they leak."""

from .bitset import CoverageSet
from .dataset import (BinarizationPolicy, BinarizedDataset, Condition, ConditionTable, DataError,
                      Feature, FeatureSchema, RawDataset, binarize, cap, load_csv,
                      satisfied_conditions, support)
from .models import (DecisionSet, GamModel, ModelFormatError, Rule, gam_score,
                     gam_to_decision_set, load_model, predict, save_model)
from .coverage import CoverageInstance, CoverageSolution, brute_force, build_instance, exact, greedy
from .defense import (Defender, DefenseConfig, Explanation, ExplanationHistory, faithful_defense,
                      generate_explanation, baseline_explanation, verify_faithful)
from .attacker import Attacker, AttackerConfig, MarginalModel, estimate_marginals, surrogate_predict
from .cart import train_cart
from .synthetic import SyntheticSpec, generate_synthetic
from .harness import (ExperimentConfig, agreement_metric, coverage_metric, emit_results,
                      explanation_fpr, prepare, recompute_metrics, run_extraction, sweep)

__version__ = "0.1.0"

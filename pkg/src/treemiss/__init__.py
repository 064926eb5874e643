"""Tree-structured modeling, imputation, and inference for nonmonotone missing data."""

from .expfam import Component, FamilySpec, InvalidTiltError, MixtureModel, SupportError, kde_fit
from .fitting import EMConfig, FitError, FittedFullModel, fit_cc_em, fit_full, select_k_bic
from .graphselect import (
    energy_distance,
    energy_permutation_pvalue,
    select_child_based,
    select_energy,
    select_parent_based,
)
from .impute import ImputationSet, impute_conjugate, impute_rejection, pattern_joint
from .inference import BootstrapDraws, bootstrap, bootstrap_mi, covariance_block_check, summarize
from .odds import EdgeOddsModel, OddsConfig, compose, fit_edge
from .patterns import IncompleteDataset, MissingPattern, dominates, potential_parents, read_data_csv
from .sensitivity import SensitivitySpec, perturb, sweep
from .simharness import GeneratorConfig, binomial_benchmark, generate, run_study
from .treegraph import (
    PatternGraph,
    TreeGraph,
    build_ccmv,
    build_lncmv,
    build_rncmv,
    count_trees,
    enumerate_trees,
    merge,
    representor,
    sample_tree_pmf,
    sample_tree_uniform,
    sibling_moral_graph,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "BootstrapDraws",
    "Component",
    "EMConfig",
    "EdgeOddsModel",
    "FamilySpec",
    "FitError",
    "FittedFullModel",
    "GeneratorConfig",
    "ImputationSet",
    "IncompleteDataset",
    "InvalidTiltError",
    "MissingPattern",
    "MixtureModel",
    "OddsConfig",
    "PatternGraph",
    "SensitivitySpec",
    "SupportError",
    "TreeGraph",
    "binomial_benchmark",
    "bootstrap",
    "bootstrap_mi",
    "build_ccmv",
    "build_lncmv",
    "build_rncmv",
    "compose",
    "count_trees",
    "covariance_block_check",
    "dominates",
    "energy_distance",
    "energy_permutation_pvalue",
    "enumerate_trees",
    "fit_cc_em",
    "fit_edge",
    "fit_full",
    "generate",
    "impute_conjugate",
    "impute_rejection",
    "kde_fit",
    "merge",
    "pattern_joint",
    "perturb",
    "potential_parents",
    "read_data_csv",
    "representor",
    "run_study",
    "sample_tree_pmf",
    "sample_tree_uniform",
    "select_child_based",
    "select_energy",
    "select_k_bic",
    "select_parent_based",
    "sibling_moral_graph",
    "summarize",
    "sweep",
    "validate",
    "__version__",
]

"""Seeded experiment drivers; each returns an ExperimentResult that can be written to disk."""
from macrostab.experiments.common import (
    ConfigError, ExperimentConfig, ExperimentResult, clopper_pearson, make_config, non_increasing,
)
from macrostab.experiments.coalescence import run_coalescence
from macrostab.experiments.comparison import run_comparison
from macrostab.experiments.density import run_density
from macrostab.experiments.hydro import run_hydro
from macrostab.experiments.propagation import run_propagation
from macrostab.experiments.stability import run_label_audit, run_stability

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentResult", "clopper_pearson", "make_config",
    "non_increasing", "run_coalescence", "run_comparison", "run_density", "run_hydro",
    "run_label_audit", "run_propagation", "run_stability",
]

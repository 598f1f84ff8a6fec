"""Vine copula structure selection with constant-conditional-correlation tests."""

__version__ = "0.1.0"

from .ccc import CccConfig, CccResult, Partition, build_partition, ccc_statistic, ccc_test
from .dependence import CopulaSample, kendall_tau, to_copula_scale
from .errors import ConnectivityError, DataError, DomainError, NumericError, ParameterError, VineError
from .families import (ALL_FAMILIES, BivariateCopula, Family, FitResult, fit_mle, par_to_tau,
                       select_family, tau_param_convert, tau_to_par)
from .selection import (FittedVine, SelectionConfig, alg1_select, alg2_select, dissmann_select, fit,
                        fit_structure, vine_loglik_aic)
from .structure import Edge, VineStructure, WeightedEdge, allowed_edges, count_structures, max_spanning_tree
from .simulation import (StudyReport, StudyScenario, alpha_sweep, run_study, sample_from_vine,
                         sample_structure, sample_vine_spec)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Joint topology and line-parameter estimation for distribution grids."""

from .errors import (CannotNormalizeError, InsufficientDataError, InvalidArgumentError,
                     IterationFailureError, NongenericTLSError, ParseError, PatopaError,
                     SingularSystemError)
from .estimators import EstimationResult, eiv_log_likelihood, glra_diag, ols, sigma_norm, tls
from .feature_builder import (FeatureSystem, build_features, build_system, feature_gradients,
                              propagate_variances)
from .grid_model import (AdmittanceMatrix, GridTopology, LineParams, assemble_admittance,
                         builtin_feeder, complete_candidate_graph, embed_params, load_feeder,
                         restrict_topology)
from .joint import (NoiseInfo, PatopaOptions, PatopaResult, TopoSearchState,
                    estimate_with_missing_angles, patopa, topo_est, update_topo)
from .metrics import TrialReport, aggregate, jaccard, param_mse, threshold_topology
from .scenario_gen import (MeasurementSet, NoiseSpec, apply_noise, forward_injections,
                           sample_voltage_profiles, simulate, truncated_normal_cdf)

__version__ = "0.1.0"

"""lagscope: temporal dependency discovery in noisy multivariate time series.

Trains sequence regressors (recurrent and convolutional) on lagged windows,
estimates per-(variable, lag) input importance with learned binary masks,
assembles discovered dependencies into a temporal knowledge graph, and
scores graphs against known generating structure.
"""

from .autodiff import Adam, Tensor, backward, no_grad
from .discovery import (DiscoveryConfig, EdgeMatchConfig, GraphEdge,
                        TemporalKnowledgeGraph, discover, score_edges)
from .lbm import (LINEAR_PRESET, NONLINEAR_PRESET, PRESETS, ImportanceMask,
                  LbmConfig, estimate_importance, extract_dependencies)
from .models import (MODEL_KINDS, ModelConfig, TrainConfig, TrainingDivergence,
                     build_model, evaluate_mse, load_model, save_model, train)
from .series import (MultivariateSeries, SupervisedDataset, load_csv,
                     load_sml2010, make_windows, save_csv, split_train_test,
                     standardize)
from .synth import (Edge, GroundTruthGraph, InstabilityError,
                    generate_linear_case, ground_truth_mask, load_graph,
                    nonlinear_graph, sample_linear_system, save_graph,
                    simulate_linear, simulate_nonlinear)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Tensor", "backward", "no_grad",
    "DiscoveryConfig", "EdgeMatchConfig", "GraphEdge",
    "TemporalKnowledgeGraph", "discover", "score_edges",
    "LINEAR_PRESET", "NONLINEAR_PRESET", "PRESETS", "ImportanceMask",
    "LbmConfig", "estimate_importance", "extract_dependencies",
    "MODEL_KINDS", "ModelConfig", "TrainConfig", "TrainingDivergence",
    "build_model", "evaluate_mse", "load_model", "save_model", "train",
    "MultivariateSeries", "SupervisedDataset", "load_csv", "load_sml2010",
    "make_windows", "save_csv", "split_train_test", "standardize",
    "Edge", "GroundTruthGraph", "InstabilityError", "generate_linear_case",
    "ground_truth_mask", "load_graph", "nonlinear_graph",
    "sample_linear_system", "save_graph", "simulate_linear",
    "simulate_nonlinear",
    "__version__",
]

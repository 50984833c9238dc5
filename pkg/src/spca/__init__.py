"""Sequential principal curves analysis."""

from .curve import PcParams, PrincipalCurve, draw_pc, fit_pc_params, project_orthogonal, projection_error
from .data import Dataset, gen_helix, gen_noisy_spiral, gen_swiss_roll, gen_two_cluster, load_csv, save_csv
from .errors import SpcaError
from .evaluation import (QuantizerSpec, bit_allocate, conditional_hist, domain_adapt, knn_classify_spca,
                         mutual_information, quantize_roundtrip)
from .metric import MetricConfig, attach_density, inverse_metric_length, metric_length
from .model import (Response, SpcaModel, fit, inverse, load_model, metric_diagonal, reduce, save_model,
                    transform)

__version__ = "0.1.0"

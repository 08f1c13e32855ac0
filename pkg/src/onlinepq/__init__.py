"""Product quantization with incremental codebook updates for nearest-neighbour search over growing data."""

from .core import (Codebook, DimensionError, InvariantError, OnlinePQError, PQConfig,
                   QuantizationMetrics, split, subspace_error)
from .harness import (ProtocolConfig, ProtocolResult, gen_gaussian_mixture, run_convergence,
                      run_dynamic_protocol, run_window_protocol)
from .io import FormatError, load_codebook, load_store, save_codebook, save_store
from .online import (BatchUpdateReport, UpdateBudget, assign_nearest, select_subcodewords,
                     select_subspaces, update_minibatch, update_streaming)
from .search import (CodeStore, DistanceTable, build_distance_table, encode, encode_batch, exact_topk,
                     quantize, query, recall_at_R, reconstruct)
from .trainer import TrainConfig, lloyd_kmeans, train_codebook
from .window import CapacityError, ProtocolError, SlidingWindow

__version__ = "0.1.0"

__all__ = [
    "BatchUpdateReport", "CapacityError", "CodeStore", "Codebook", "DimensionError", "DistanceTable",
    "FormatError", "InvariantError", "OnlinePQError", "PQConfig", "ProtocolConfig", "ProtocolError",
    "ProtocolResult", "QuantizationMetrics", "SlidingWindow", "TrainConfig", "UpdateBudget",
    "assign_nearest", "build_distance_table", "encode", "encode_batch", "exact_topk",
    "gen_gaussian_mixture", "lloyd_kmeans", "load_codebook", "load_store", "quantize", "query",
    "recall_at_R", "reconstruct", "run_convergence", "run_dynamic_protocol", "run_window_protocol",
    "save_codebook", "save_store", "select_subcodewords", "select_subspaces", "split", "subspace_error",
    "train_codebook", "update_minibatch", "update_streaming",
]

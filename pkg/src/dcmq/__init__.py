"""Cross-modal product-quantization retrieval engine.

Trains small per-modality projection heads and shared PQ codebooks by
distilling a precomputed teacher similarity structure, then serves
binary-code galleries through lookup-table (asymmetric-distance) search.
"""

import os as _os

# DCMQ_THREADS caps BLAS parallelism; 0 means fully sequential (the
# deterministic test default).  Must happen before numpy loads a BLAS.
_threads = _os.environ.get("DCMQ_THREADS")
if _threads is not None:
    _n = max(1, int(_threads)) if _threads.isdigit() else 1
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ[_var] = str(_n)

from .errors import (AlignmentError, CorruptFileError, EngineError,  # noqa: E402
                     FormatError, NumericInputError, ParameterError,
                     ShapeError, TrainingDivergedError,
                     UnsupportedFormatError)
from .numerics import (SeededRng, cosine_sim_matrix, gumbel_softmax,  # noqa: E402
                       l2_normalize, l2_normalize_rows, softmax_temp)
from .targets import (TargetMatrix, compute_similarity, npc,  # noqa: E402
                      target_identity, target_multihot)
from .quantizer import (Codebooks, UsageHistogram, attention_pool,  # noqa: E402
                        hard_assign, hard_assign_batch, init_codebooks,
                        pack_code, pqg_soft_quantize, unpack_code,
                        usage_histogram)
from .student import (MLPHead, StudentModel, TrainConfig, adam_step,  # noqa: E402
                      cross_modal_loss, total_loss, train)
from .index_search import (Index, adc_search, build_index,  # noqa: E402
                           exact_search, make_lookup_table)
from .evalkit import (RelevanceJudge, average_precision_at, map_at,  # noqa: E402
                      precision_curve, recall_at, recall_curve)
from . import io_formats, synth  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "CorruptFileError", "EngineError", "FormatError",
    "NumericInputError", "ParameterError", "ShapeError",
    "TrainingDivergedError", "UnsupportedFormatError",
    "SeededRng", "cosine_sim_matrix", "gumbel_softmax", "l2_normalize",
    "l2_normalize_rows", "softmax_temp",
    "TargetMatrix", "compute_similarity", "npc", "target_identity",
    "target_multihot",
    "Codebooks", "UsageHistogram", "attention_pool", "hard_assign",
    "hard_assign_batch", "init_codebooks", "pack_code", "pqg_soft_quantize",
    "unpack_code", "usage_histogram",
    "MLPHead", "StudentModel", "TrainConfig", "adam_step",
    "cross_modal_loss", "total_loss", "train",
    "Index", "adc_search", "build_index", "exact_search",
    "make_lookup_table",
    "RelevanceJudge", "average_precision_at", "map_at", "precision_curve",
    "recall_at", "recall_curve",
    "io_formats", "synth",
]

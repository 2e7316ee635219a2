"""Sparse query cascades over feature pyramids.

A detection head runs densely on coarse pyramid levels; positions scoring above
a threshold become queries, map to their 2x2 children one level down, and only
those children are computed — with submanifold sparse convolutions (csq),
per-key crops (cq), or masked dense compute (ccq). The analysis module carries
the matching MAC-level cost model and a benchmark harness.
"""

from .analysis import (BenchResult, FlopsReport, bench_csv, bench_json,
                       head_flops_dense, head_flops_sparse, inbounds_pairs,
                       p2_cost_increase, run_benchmark, sigma_sweep)
from .errors import (CascadeQueryError, ConfigurationError, FormatError,
                     ValidationError)
from .model import (Blob, FeaturePyramid, HeadOutput, HeadWeights, level_dims,
                    load_pyramid, load_weights, make_fixture_weights,
                    make_synthetic_pyramid, run_dense_head, run_sparse_head,
                    save_pyramid, save_weights)
from .postproc import (AnchorConfig, Detection, anchor_boxes, box_iou,
                       decode_boxes, detections_from_output,
                       detections_from_result, detections_to_json, encode_boxes,
                       merge_levels, nms)
from .query import (CascadeResult, LevelRecord, QueryConfig, extract_queries,
                    map_queries_to_keys, resolve_threads, run_cascade,
                    run_crop_query, run_dense, run_full_conv_query,
                    run_pipeline)
from .sparse import (KeySet, Rulebook, SparseFeature, build_rulebook, gather,
                     scatter, sparse_conv, sparse_relu)
from .targets import (GroundTruthObject, GroundTruthSet, LossConfig, TargetMaps,
                      beta_schedule, distance_map, focal_loss, is_small_for_level,
                      level_loss, level_scale, query_target,
                      query_target_for_level, small_centers_on_grid, smooth_l1,
                      total_loss)
from .tensor import (ConvWeights, DenseTensor, conv2d, load_tensor, relu,
                     save_tensor, sigmoid)

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig", "BenchResult", "Blob", "CascadeQueryError", "CascadeResult",
    "ConfigurationError", "ConvWeights", "DenseTensor", "Detection",
    "FeaturePyramid", "FlopsReport", "FormatError", "GroundTruthObject",
    "GroundTruthSet", "HeadOutput", "HeadWeights", "KeySet", "LevelRecord",
    "LossConfig", "QueryConfig", "Rulebook", "SparseFeature", "TargetMaps",
    "ValidationError", "anchor_boxes", "bench_csv", "bench_json",
    "beta_schedule", "box_iou", "build_rulebook", "conv2d", "decode_boxes",
    "detections_from_output", "detections_from_result", "detections_to_json",
    "distance_map",
    "encode_boxes", "extract_queries", "focal_loss", "gather",
    "head_flops_dense", "head_flops_sparse", "inbounds_pairs",
    "is_small_for_level", "level_dims", "level_loss", "level_scale",
    "load_pyramid", "load_tensor", "load_weights", "make_fixture_weights",
    "make_synthetic_pyramid", "map_queries_to_keys", "merge_levels", "nms",
    "p2_cost_increase", "query_target", "query_target_for_level", "relu",
    "resolve_threads", "run_benchmark", "run_cascade",
    "run_crop_query", "run_dense", "run_dense_head", "run_full_conv_query",
    "run_pipeline", "run_sparse_head", "save_pyramid", "save_tensor",
    "save_weights", "scatter", "sigma_sweep", "sigmoid", "small_centers_on_grid",
    "smooth_l1", "sparse_conv", "sparse_relu", "total_loss",
]

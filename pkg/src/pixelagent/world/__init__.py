"""Deterministic synthetic pixel world: clips, tools, verifiers, teacher."""

from .clip import Clip, ObjectSpec, generate_clip
from .config import ConfigurationError, NoiseConfig, WorldConfig, dataclass_from_dict
from .teacher import (GenerationError, Query, TeacherConfig, TeacherTrace,
                      accept_trace, build_accepted_pool, default_components,
                      generate_teacher_traces, make_queries, shortest_plan,
                      zscore_components)
from .tools import (ALL_OPS, ANSWER, OCR, PROP, REGION_OPS, SEG, TEMP,
                    TOOL_OPS, TRK, ZOOM, Footprint, Observation,
                    ProtocolError, ToolCall, ViewState, apply_zoom, box_iou,
                    execute_tool, footprint_iou, intersect_rect, temporal_iou)
from .verify import THRESHOLDS, anls, levenshtein, mask_iou, verify_step

__all__ = [
    "ALL_OPS", "ANSWER", "Clip", "ConfigurationError", "Footprint",
    "GenerationError", "NoiseConfig", "OCR", "Observation", "ObjectSpec",
    "PROP", "ProtocolError", "Query", "REGION_OPS", "SEG", "TEMP",
    "THRESHOLDS", "TOOL_OPS", "TRK", "TeacherConfig", "TeacherTrace",
    "ToolCall", "ViewState", "WorldConfig", "ZOOM", "accept_trace", "anls",
    "apply_zoom", "box_iou", "build_accepted_pool", "dataclass_from_dict",
    "default_components", "execute_tool", "footprint_iou", "generate_clip",
    "generate_teacher_traces", "intersect_rect", "levenshtein", "make_queries",
    "mask_iou", "shortest_plan", "temporal_iou", "verify_step",
    "zscore_components",
]

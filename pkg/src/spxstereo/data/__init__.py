"""Synthetic stereo data, file formats and evaluation metrics."""
from .metrics import CSV_HEADER, METRIC_FIELDS, SEE_LABEL, aggregate, discontinuity_band, metrics
from .pfm import encode_pfm, parse_pfm, read_pfm, read_pgm, write_pfm, write_pgm
from .synth import (
    Background,
    DisparityField,
    Region,
    StereoSample,
    gen_stereogram,
    warp_right_to_left,
)

write_pgm_vis = write_pgm

__all__ = [
    "Background",
    "CSV_HEADER",
    "DisparityField",
    "METRIC_FIELDS",
    "Region",
    "SEE_LABEL",
    "StereoSample",
    "aggregate",
    "discontinuity_band",
    "encode_pfm",
    "gen_stereogram",
    "metrics",
    "parse_pfm",
    "read_pfm",
    "read_pgm",
    "warp_right_to_left",
    "write_pfm",
    "write_pgm",
    "write_pgm_vis",
]

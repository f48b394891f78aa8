"""Bone surface delineation in B-mode ultrasound with directed lattice factor graphs."""

__version__ = "0.1.0"

from .imagecore import BFG, BONE, CBG, SHADOW, TISSUE, Delineation, Image, LabelMap, load_image, save_image
from .graphmodel import FactorGraph, GraphParams, build_graph, build_unaries
from .trws import SolverConfig, SolveReport, brute_force_map, solve
from .metrics import MetricsReport, evaluate, mean_metric
from .phantom import PhantomRanges, PhantomSpec, generate, generate_dataset
from .pipeline import ModelPair, RunConfig, delineate_image, preset

__all__ = [
    "BFG", "BONE", "CBG", "SHADOW", "TISSUE", "Delineation", "Image", "LabelMap", "load_image", "save_image",
    "FactorGraph", "GraphParams", "build_graph", "build_unaries",
    "SolverConfig", "SolveReport", "brute_force_map", "solve",
    "MetricsReport", "evaluate", "mean_metric",
    "PhantomRanges", "PhantomSpec", "generate", "generate_dataset",
    "ModelPair", "RunConfig", "delineate_image", "preset",
]

# crf/__init__.py
"""
Edge-segment CRF package.

Contains:
    - graph.py: Edge feature graph construction and weak training labels.
    - model.py: CrfModel weights, joint feature, energy and the model file format.
    - inference.py: Max-product loopy belief propagation and the exhaustive oracle.
    - training.py: Block-coordinate Frank-Wolfe structured SVM learner.
"""

from .graph import EdgeGraph, TrainingSample, as_labeling, build_graph, weak_labels
from .inference import map_inference, map_inference_exact, predict_labels
from .model import CrfModel, TrainingSummary, energy, joint_feature, load_model, save_model
from .training import hamming_accuracy, train_bcfw

__all__ = [
    "CrfModel",
    "EdgeGraph",
    "TrainingSample",
    "TrainingSummary",
    "as_labeling",
    "build_graph",
    "energy",
    "hamming_accuracy",
    "joint_feature",
    "load_model",
    "map_inference",
    "map_inference_exact",
    "predict_labels",
    "save_model",
    "train_bcfw",
    "weak_labels",
]

"""Commonsense affordance estimation on layered 3D scene graphs."""

__version__ = "0.1.0"

from .ontology import Ontology, load_ontology, save_ontology, default_ontology_path
from .scene_graph import Node, SceneGraph, validate, encode_features

__all__ = [
    "Ontology",
    "load_ontology",
    "save_ontology",
    "default_ontology_path",
    "Node",
    "SceneGraph",
    "validate",
    "encode_features",
]

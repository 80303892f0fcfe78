"""Zero-shot semantic navigation at toy scale.

A policy trained only on goal-view (ImageNav) episodes in procedural grid
worlds is evaluated on object-category (ObjectNav) goals through a shared
image/text goal-embedding space.
"""

from __future__ import annotations

__version__ = "0.1.0"

from ._accel import backend
from .embedding import (
    ConceptBag,
    ConceptVocabulary,
    EncoderParams,
    SemanticGoal,
    cosine_similarity,
    encode_image_view,
    encode_text,
)
from .worldsim import AgentPose, GridWorld, KinematicsConfig, corridor_world, generate_world

__all__ = [
    "AgentPose", "ConceptBag", "ConceptVocabulary", "EncoderParams", "GridWorld", "KinematicsConfig",
    "SemanticGoal", "__version__", "backend", "corridor_world", "cosine_similarity", "encode_image_view",
    "encode_text", "generate_world",
]

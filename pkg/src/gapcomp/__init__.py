"""Semantic compression of multimodal embeddings through modality-gap reduction."""

__version__ = "0.1.0"

"""
HSR re-identification toolkit

Hard samples rectification for clustering-based unsupervised re-ID, carried
out entirely in embedding space: density clustering, inter-camera mining,
part-based cluster splitting and a small trainable projector.
"""

__version__ = "1.0.0"

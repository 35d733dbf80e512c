"""Concept prerequisite inference from topic-model concept vectors and a Siamese pair classifier."""

__version__ = "0.1.0"

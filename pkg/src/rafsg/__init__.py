"""Relation-affinity-field scene graphs: dense target encoding, decoding,
losses and scene-graph metrics."""

__version__ = "0.1.0"

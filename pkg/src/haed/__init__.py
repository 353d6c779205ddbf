"""Hierarchical attention encoder-decoder training harness with
implicit-embedding-matrix sampled-softmax pretraining."""

__version__ = "0.1.0"

"""Hierarchical Sparse VAE for token sequences - library and CLI"""
__version__ = "1.0.0"

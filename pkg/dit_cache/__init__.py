"""
dit_cache: learned block-level feature caching for a toy Diffusion Transformer.
"""

__version__ = "0.1.0"

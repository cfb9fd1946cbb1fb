"""Tool-driven agent framework and evaluation harness for question
answering over ultra-high-resolution images."""

__version__ = "0.1.0"

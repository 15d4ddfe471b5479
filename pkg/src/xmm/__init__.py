"""Adapter-based multilingual multimodal transformers for visual question answering."""

__version__ = "0.1.0"

"""Multimodal Raman + metadata diagnostics pipeline with SHAP/LIME explanations."""

__version__ = "0.1.0"

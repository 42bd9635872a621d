"""
MMA-DFER - multimodal adaptation of frozen unimodal encoders
Numeric core, model components, training protocol and experiment CLI
"""

__version__ = "1.0.0"

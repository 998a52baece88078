"""Offline embedding extraction with pretrained encoders.

Runs a pretrained text or image encoder over a response-score dataset and
writes the vectors in the binary embedding format the routing toolkit loads,
plus an optional HTTP service speaking the gateway's embed-upstream contract.
"""
from .extract import ExtractError, ExtractJob, ExtractResult, extract

__version__ = "0.1.0"

__all__ = ["ExtractError", "ExtractJob", "ExtractResult", "extract"]

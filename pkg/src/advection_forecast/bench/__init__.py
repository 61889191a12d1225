"""Synthetic oracle data, quality metrics, evaluation and trend experiments."""

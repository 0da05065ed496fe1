"""Luskin: fairness auditing, synthetic-relabeling repair, and parity tuning
for binary classifiers on tabular data."""

__version__ = "0.1.0"

"""Influenza host prediction toolkit.

Protein sequence ingestion, PSSM and n-gram featurization, from-scratch
classifiers (MLP, CNN, Transformer encoder, random forest, RUSBoost),
nested stratified cross-validation and imbalance-aware metrics.
"""

__version__ = "0.1.0"

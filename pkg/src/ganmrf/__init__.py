"""GAN-based synthesis of MR fingerprinting dictionaries.

Bloch simulation of MRF-FISP fingerprints, a conditional GAN trained to
imitate them, and pattern matching to compare the resulting parameter maps.
"""

from ganmrf.core import (
    ConfigError,
    DataError,
    Dictionary,
    DatasetSplit,
    GridSpec,
    NumericError,
    SequenceParams,
    TissueParams,
    expand_grid,
    normalize_atoms,
    scale_for_training,
    split_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Dictionary",
    "DatasetSplit",
    "GridSpec",
    "NumericError",
    "SequenceParams",
    "TissueParams",
    "expand_grid",
    "normalize_atoms",
    "scale_for_training",
    "split_dataset",
]

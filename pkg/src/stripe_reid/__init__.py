"""Re-identification of stripe-patterned animals from pooled feature grids."""

from .errors import StripeReidError
from .geometry import DEFAULT_PART_MAP, PartMap, Rect, Skeleton
from .manifest import Dataset, Sample, SynthConfig, load_manifest, split_entities, synth_generate

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PART_MAP",
    "Dataset",
    "PartMap",
    "Rect",
    "Sample",
    "Skeleton",
    "StripeReidError",
    "SynthConfig",
    "load_manifest",
    "split_entities",
    "synth_generate",
]

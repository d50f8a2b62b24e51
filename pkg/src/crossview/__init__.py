"""Cross-view drone-to-satellite geo-localization by image retrieval."""

from .partition import PartitionSpec, RegionBox, center_box, split_center_surround
from .style_align import (ColorMapping, apply_mapping, average_mapping,
                          channel_histogram, corpus_mapping, load_mapping,
                          mapping_from_histogram, mapping_from_image, save_mapping)

__all__ = [
    "PartitionSpec", "RegionBox", "center_box", "split_center_surround",
    "ColorMapping", "apply_mapping", "average_mapping", "channel_histogram",
    "corpus_mapping", "load_mapping", "mapping_from_histogram",
    "mapping_from_image", "save_mapping",
]

__version__ = "0.1.0"

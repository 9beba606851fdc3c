"""Patch-embedding archive exporter for frozen vision backbones."""

from .backbones import BACKBONE_IDS, EXPECTED_SCALES, load_backbone
from .export import export
from .verify import verify

__all__ = ["BACKBONE_IDS", "EXPECTED_SCALES", "load_backbone", "export",
           "verify"]
__version__ = "0.1.0"

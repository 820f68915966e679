"""Batch CNN feature-map export for the video-abnormality pipeline.

Frames go through a pretrained image-classification backbone (an AlexNet-style
stack by default); the spatial feature map of the selected layer is written as
an FMAP v1 tensor with dims (T, rows, cols, channels), the interchange format
the analysis pipeline ingests via its feature_source=fmap:<path> config.
"""

from .extract import ExtractionJob, run_extraction
from .errors import ExtractorError, ImageDecodeError, ModelLoadError

__version__ = "0.1.0"

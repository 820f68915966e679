"""Run frames through the backbone and export the spatial feature maps."""

from dataclasses import dataclass

import numpy as np
import torch

from .fmap import write_tensor_atomic
from .model import IMAGENET_MEAN, IMAGENET_STD, load_backbone
from .pgm import load_frames


@dataclass(frozen=True)
class ExtractionJob:
    frames_dir: str
    weights_path: str
    out_path: str
    resize_w: int = 460
    resize_h: int = 350
    layer: str = "pool5"
    batch_size: int = 4
    threads: int = 1  # single-threaded inference keeps outputs bit-reproducible

    def __post_init__(self):
        if self.resize_w < 1 or self.resize_h < 1:
            raise ValueError("resize target must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")


def preprocess(frames: np.ndarray, job: ExtractionJob) -> torch.Tensor:
    """Grayscale u8 (T, H, W) -> normalized (T, 3, resize_h, resize_w) float."""
    x = torch.from_numpy(frames.astype(np.float32) / 255.0).unsqueeze(1)
    x = torch.nn.functional.interpolate(
        x, size=(job.resize_h, job.resize_w), mode="bilinear", align_corners=False
    )
    x = x.repeat(1, 3, 1, 1)  # replicate the gray channel
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (x - mean) / std


def run_extraction(job: ExtractionJob) -> tuple[int, int, int, int]:
    """Extract feature maps and write the FMAP tensor; returns its dims."""
    torch.set_num_threads(job.threads)
    net = load_backbone(job.weights_path, job.layer)
    frames = load_frames(job.frames_dir)
    batches = []
    with torch.no_grad():
        inputs = preprocess(frames, job)
        for start in range(0, inputs.shape[0], job.batch_size):
            out = net(inputs[start : start + job.batch_size])
            batches.append(out.permute(0, 2, 3, 1).contiguous().numpy())  # channel-last
    tensor = np.concatenate(batches, axis=0).astype(np.float32)
    write_tensor_atomic(job.out_path, tensor)
    return tensor.shape

"""Backbone loading and layer selection.

The reference configuration is the classic five-conv-layer AlexNet stack; any
weights file holding its state dict (full model or just the convolutional
`features` module) works. Weights always come from a local path, never the
network.
"""

import torch
from torchvision.models import alexnet

from .errors import ModelLoadError

# slice of torchvision's alexnet.features up to and including the layer
LAYER_SLICES = {
    "pool5": 13,  # last conv stage incl. final max-pool
    "conv5": 12,  # last conv + relu, before the pool
}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def load_backbone(weights_path, layer: str = "pool5") -> torch.nn.Module:
    if layer not in LAYER_SLICES:
        raise ModelLoadError(f"unknown layer {layer!r}; choose from {sorted(LAYER_SLICES)}")
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise ModelLoadError(f"cannot load weights from {weights_path}: {e}") from e
    if not isinstance(state, dict):
        raise ModelLoadError(f"{weights_path}: expected a state dict")

    features = alexnet(weights=None).features
    if any(k.startswith("features.") for k in state):
        state = {k[len("features.") :]: v for k, v in state.items() if k.startswith("features.")}
    try:
        features.load_state_dict(state)
    except RuntimeError as e:
        raise ModelLoadError(f"{weights_path}: state dict does not fit the backbone: {e}") from e

    net = features[: LAYER_SLICES[layer]]
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net

"""Frozen vision backbones and their patch-grid extraction.

Each backbone loads ImageNet pre-trained weights when they are retrievable
and otherwise falls back to a seeded random initialization; the weight source
is always recorded so downstream consumers can tell the difference. Two
architectures are substitutes for the exact checkpoints used in the original
experiments (EsViT Swin-T w14 and EfficientFormer-L3), which have no drop-in
equivalent here; the substitution is recorded as well.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

BACKBONE_IDS = ("deit_base", "esvit_swin_t", "efficientformer_l3", "resnet50")

# (grid size, embedding dim) per exported scale, as declared by each backbone
EXPECTED_SCALES = {
    "deit_base": [(14, 14, 768)],
    "esvit_swin_t": [(7, 7, 768)],
    "efficientformer_l3": [(7, 7, 512)],
    "resnet50": [(28, 28, 512), (14, 14, 1024), (7, 7, 2048)],
}

_INIT_SEED = 0


class BackboneError(Exception):
    pass


def _note(pretrained, extra=""):
    source = "imagenet" if pretrained else "random-init"
    return f"weights={source}" + (f",{extra}" if extra else "")


class DeiTBackbone:
    """Monolithic transformer; one (14, 14, 768) grid per selected encoder
    block. Layer k selects the hidden state after block k (1-based, 12 is the
    final block); the class and distillation tokens are dropped."""

    name = "deit_base"
    num_layers = 12

    def __init__(self, layers=None):
        from transformers import DeiTConfig, DeiTModel

        self.layers = list(layers) if layers else [self.num_layers]
        for layer in self.layers:
            if not 1 <= layer <= self.num_layers:
                raise BackboneError(
                    f"deit_base layer {layer} out of range 1..{self.num_layers}"
                )
        pretrained = True
        try:
            self.model = DeiTModel.from_pretrained(
                "facebook/deit-base-distilled-patch16-224"
            )
        except Exception:
            pretrained = False
            torch.manual_seed(_INIT_SEED)
            self.model = DeiTModel(DeiTConfig())
        self.model.eval()
        self.weight_note = _note(pretrained)
        self.scales = [(14, 14, 768)] * len(self.layers)

    @torch.no_grad()
    def extract(self, batch):
        out = self.model(batch, output_hidden_states=True)
        grids = []
        for layer in self.layers:
            tokens = out.hidden_states[layer][:, 2:, :]  # drop cls + distill
            n, _, d = tokens.shape
            grids.append(tokens.reshape(n, 14, 14, d))
        return grids


class SwinBackbone:
    """Hierarchical transformer stand-in for EsViT Swin-T w14: the plain
    Swin-T trunk, final stage only, (7, 7, 768)."""

    name = "esvit_swin_t"

    def __init__(self, layers=None):
        import torchvision

        if layers not in (None, [], [4]):
            raise BackboneError("esvit_swin_t exports only its final stage")
        pretrained = True
        try:
            weights = torchvision.models.Swin_T_Weights.IMAGENET1K_V1
            self.model = torchvision.models.swin_t(weights=weights)
        except Exception:
            pretrained = False
            torch.manual_seed(_INIT_SEED)
            self.model = torchvision.models.swin_t(weights=None)
        self.model.eval()
        self.weight_note = _note(pretrained, "substitute=torchvision-swin_t")
        self.scales = [(7, 7, 768)]

    @torch.no_grad()
    def extract(self, batch):
        return [self.model.features(batch)]  # already (N, H, W, C)


class _ConvStage(nn.Module):
    def __init__(self, c_in, c_out, stride):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
            nn.BatchNorm2d(c_out),
            nn.GELU(),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.GELU(),
        )

    def forward(self, x):
        return self.body(x)


class EfficientFormerBackbone:
    """Stand-in for EfficientFormer-L3: a seeded four-stage convolutional
    pyramid with the L3 stage widths, final stage (7, 7, 512)."""

    name = "efficientformer_l3"
    widths = (64, 128, 320, 512)

    def __init__(self, layers=None):
        if layers not in (None, [], [4]):
            raise BackboneError("efficientformer_l3 exports only its final stage")
        torch.manual_seed(_INIT_SEED)
        stem = nn.Sequential(
            nn.Conv2d(3, self.widths[0] // 2, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(self.widths[0] // 2, self.widths[0], 3, stride=2, padding=1),
            nn.GELU(),
        )
        stages = [stem, _ConvStage(self.widths[0], self.widths[0], 1)]
        for c_in, c_out in zip(self.widths, self.widths[1:]):
            stages.append(_ConvStage(c_in, c_out, 2))
        self.model = nn.Sequential(*stages)
        self.model.eval()
        self.weight_note = _note(False, "substitute=staged-convnet")
        self.scales = [(7, 7, 512)]

    @torch.no_grad()
    def extract(self, batch):
        return [self.model(batch).permute(0, 2, 3, 1)]


class ResNetBackbone:
    """ResNet-50 feature pyramid; layer k in 2..4 selects residual block k,
    default is the last three blocks."""

    name = "resnet50"
    block_scales = {2: (28, 28, 512), 3: (14, 14, 1024), 4: (7, 7, 2048)}

    def __init__(self, layers=None):
        import torchvision

        self.layers = list(layers) if layers else [2, 3, 4]
        for layer in self.layers:
            if layer not in self.block_scales:
                raise BackboneError(f"resnet50 layer {layer} not in 2..4")
        pretrained = True
        try:
            weights = torchvision.models.ResNet50_Weights.IMAGENET1K_V2
            self.model = torchvision.models.resnet50(weights=weights)
        except Exception:
            pretrained = False
            torch.manual_seed(_INIT_SEED)
            self.model = torchvision.models.resnet50(weights=None)
        self.model.eval()
        self.weight_note = _note(pretrained)
        self.scales = [self.block_scales[k] for k in self.layers]

    @torch.no_grad()
    def extract(self, batch):
        m = self.model
        x = m.maxpool(m.relu(m.bn1(m.conv1(batch))))
        outputs = {}
        x = m.layer1(x)
        for k, block in ((2, m.layer2), (3, m.layer3), (4, m.layer4)):
            x = block(x)
            outputs[k] = x.permute(0, 2, 3, 1)
        return [outputs[k] for k in self.layers]


_CLASSES = {
    "deit_base": DeiTBackbone,
    "esvit_swin_t": SwinBackbone,
    "efficientformer_l3": EfficientFormerBackbone,
    "resnet50": ResNetBackbone,
}


def load_backbone(backbone_id, layers=None):
    if backbone_id not in _CLASSES:
        raise BackboneError(
            f"unknown backbone '{backbone_id}', expected one of {BACKBONE_IDS}"
        )
    return _CLASSES[backbone_id](layers=layers)


def extract_grids(backbone, batch_array):
    """Run the frozen backbone over a (N, 224, 224, 3) float array and return
    one float32 (N, H, W, D) array per exported scale."""
    batch = torch.from_numpy(
        np.ascontiguousarray(batch_array.transpose(0, 3, 1, 2), dtype=np.float32)
    )
    grids = backbone.extract(batch)
    return [g.contiguous().numpy().astype(np.float32) for g in grids]

"""
FCN-8s style segmenter on a 13-convolution VGG-16 encoder.
"""
import logging
from pathlib import Path

import torch
import torch.nn as nn
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

DOWNSAMPLING = 32

# convolutions per pooling stage of VGG-16, and each stage's width in units of base_width
VGG_STAGES = ((2, 1), (2, 2), (3, 4), (3, 8), (3, 8))


def _bilinear_kernel(channels, kernel_size):
    factor = (kernel_size + 1) // 2
    center = factor - 1 if kernel_size % 2 == 1 else factor - 0.5
    og = torch.arange(kernel_size, dtype=torch.float32)
    filt = 1 - torch.abs(og - center) / factor
    kernel = filt[:, None] * filt[None, :]
    weight = torch.zeros(channels, channels, kernel_size, kernel_size)
    for c in range(channels):
        weight[c, c] = kernel
    return weight


class FcnModel(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        width = config.base_width
        classes = config.num_classes

        stages = []
        channels = 3
        for convs, multiple in VGG_STAGES:
            layers = []
            for _ in range(convs):
                layers += [nn.Conv2d(channels, width * multiple, 3, padding=1), nn.ReLU(inplace=True)]
                channels = width * multiple
            layers.append(nn.MaxPool2d(2, stride=2))
            stages.append(nn.Sequential(*layers))
        self.encoder = nn.ModuleList(stages)

        # fully-connected layers recast as 1x1 convolutions
        self.head = nn.Sequential(
            nn.Conv2d(channels, config.head_width, 1),
            nn.ReLU(inplace=True),
            nn.Dropout2d(config.dropout_probability),
            nn.Conv2d(config.head_width, config.head_width, 1),
            nn.ReLU(inplace=True),
            nn.Dropout2d(config.dropout_probability),
            nn.Conv2d(config.head_width, classes, 1),
        )

        self.score_pool4 = nn.Conv2d(width * 8, classes, 1)
        self.score_pool3 = nn.Conv2d(width * 4, classes, 1)
        self.upscore2 = nn.ConvTranspose2d(classes, classes, 4, stride=2, padding=1, bias=False)
        self.upscore_pool4 = nn.ConvTranspose2d(classes, classes, 4, stride=2, padding=1, bias=False)
        self.upscore8 = nn.ConvTranspose2d(classes, classes, 16, stride=8, padding=4, bias=False)

    @property
    def convolutions(self):
        return [m for stage in self.encoder for m in stage if isinstance(m, nn.Conv2d)]

    def forward(self, x):
        height, width = x.shape[-2:]
        if height % DOWNSAMPLING or width % DOWNSAMPLING:
            raise ImproperlyConfigured(
                f"FCN input {width}x{height} must have sides divisible by {DOWNSAMPLING}."
            )
        pooled = []
        for stage in self.encoder:
            x = stage(x)
            pooled.append(x)
        pool3, pool4 = pooled[2], pooled[3]

        score = self.upscore2(self.head(x))
        score = self.upscore_pool4(score + self.score_pool4(pool4))
        return self.upscore8(score + self.score_pool3(pool3))


def _init_random(model):
    for conv in model.convolutions:
        nn.init.kaiming_normal_(conv.weight, mode='fan_out', nonlinearity='relu')
        nn.init.zeros_(conv.bias)
    for layer in model.head:
        if isinstance(layer, nn.Conv2d):
            nn.init.normal_(layer.weight, 0.0, 0.01)
            nn.init.zeros_(layer.bias)


def load_pretrained_encoder(model, path):
    """
    Copy VGG-16 convolution weights into the encoder, matched by layer order.

    Accepts a torchvision-style ``vgg16`` state dict (``features.N.weight``)
    or a dict with the encoder's own keys.

    Raises:
        ImproperlyConfigured: If a weight's shape does not match its layer.
    """
    state = torch.load(Path(path), map_location='cpu')
    if 'state_dict' in state:
        state = state['state_dict']
    weights = [(k, v) for k, v in state.items() if k.endswith('weight') and v.dim() == 4 and v.shape[-1] == 3]
    convs = model.convolutions
    if len(weights) < len(convs):
        raise ImproperlyConfigured(
            f"{path} holds {len(weights)} 3x3 convolution weights, the encoder needs {len(convs)}."
        )
    for index, (conv, (key, weight)) in enumerate(zip(convs, weights), start=1):
        bias = state.get(key[:-len('weight')] + 'bias')
        if weight.shape != conv.weight.shape or (bias is not None and bias.shape != conv.bias.shape):
            raise ImproperlyConfigured(
                f"Encoder conv{index} ({key}) has shape {tuple(weight.shape)}, expected {tuple(conv.weight.shape)}."
            )
        with torch.no_grad():
            conv.weight.copy_(weight)
            if bias is not None:
                conv.bias.copy_(bias)
    logger.info("Initialised the %d encoder convolutions from %s", len(convs), path)


def build_fcn(config, pretrained_encoder=None):
    """
    Build the FCN segmenter.

    Encoder convolutions come from ``pretrained_encoder`` when given, else
    Kaiming-normal; the 1x1 head is normal(0, 0.01); the skip scorers are
    normal(0, ``config.skip_init_std``); the transposed convolutions start as
    bilinear upsamplers.
    """
    model = FcnModel(config)
    _init_random(model)
    if pretrained_encoder is not None:
        load_pretrained_encoder(model, pretrained_encoder)
    for skip in (model.score_pool3, model.score_pool4):
        nn.init.normal_(skip.weight, 0.0, config.skip_init_std)
        nn.init.zeros_(skip.bias)
    for up in (model.upscore2, model.upscore_pool4, model.upscore8):
        with torch.no_grad():
            up.weight.copy_(_bilinear_kernel(config.num_classes, up.kernel_size[0]))
    return model

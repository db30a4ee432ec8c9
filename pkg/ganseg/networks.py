"""
U-shaped generator and patch discriminator of the conditional GAN segmenter.
"""
import math

import torch
import torch.nn as nn


def _norm(channels):
    return nn.InstanceNorm2d(channels, affine=True)


def _widths(base_filters, depth):
    return [base_filters * min(2 ** level, 8) for level in range(depth)]


class UnetGenerator(nn.Module):
    """
    Encoder halving ``side`` down to 1x1 with 4x4 stride-2 convolutions, a
    mirrored decoder of transposed convolutions, and skip connections joining
    each decoder stage with the encoder stage of the same size.

    Input is a ``N x 3 x side x side`` image scaled to [-1, 1]; output a
    ``N x 1 x side x side`` iris score in [0, 1].
    """

    def __init__(self, side, base_filters=64, dropout_probability=0.5, dropout_layers=3):
        super().__init__()
        depth = int(math.log2(side))
        widths = _widths(base_filters, depth)

        downs = [nn.Conv2d(3, widths[0], 4, stride=2, padding=1)]
        for level in range(1, depth):
            layers = [nn.LeakyReLU(0.2), nn.Conv2d(widths[level - 1], widths[level], 4, stride=2, padding=1)]
            if level < depth - 1:
                layers.append(_norm(widths[level]))
            downs.append(nn.Sequential(*layers))
        self.downs = nn.ModuleList(downs)

        ups = []
        for step, level in enumerate(reversed(range(depth))):
            in_channels = widths[level] if level == depth - 1 else 2 * widths[level]
            if level == 0:
                ups.append(nn.Sequential(nn.ReLU(), nn.ConvTranspose2d(in_channels, 1, 4, stride=2, padding=1)))
                continue
            layers = [nn.ReLU(), nn.ConvTranspose2d(in_channels, widths[level - 1], 4, stride=2, padding=1),
                      _norm(widths[level - 1])]
            if step < dropout_layers and dropout_probability > 0:
                layers.append(nn.Dropout(dropout_probability))
            ups.append(nn.Sequential(*layers))
        self.ups = nn.ModuleList(ups)

    def forward(self, x):
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = self.ups[0](skips[-1])
        for up, skip in zip(self.ups[1:], reversed(skips[:-1])):
            x = up(torch.cat([x, skip], dim=1))
        return torch.sigmoid(x)


class PatchDiscriminator(nn.Module):
    """
    Scores overlapping patches of an (image, mask) pair as real or fake.

    The mask channel is rescaled from [0, 1] to [-1, 1] to match the image.
    Output is a grid of logits of side ``side / 2 ** downsamples``.
    """

    def __init__(self, base_filters=64, downsamples=3):
        super().__init__()
        layers = [nn.Conv2d(4, base_filters, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        channels = base_filters
        for level in range(1, downsamples):
            width = base_filters * min(2 ** level, 8)
            layers += [nn.Conv2d(channels, width, 4, stride=2, padding=1), _norm(width), nn.LeakyReLU(0.2)]
            channels = width
        width = base_filters * min(2 ** downsamples, 8)
        layers += [nn.Conv2d(channels, width, 3, padding=1), _norm(width), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(width, 1, 3, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, image, mask):
        return self.model(torch.cat([image, mask * 2 - 1], dim=1))


def init_weights(module, std=0.02):
    """
    Convolutions ~ normal(0, std) with zero bias; norm scales ~ normal(1, std).
    """
    for layer in module.modules():
        if isinstance(layer, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(layer.weight, 0.0, std)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)
        elif isinstance(layer, nn.InstanceNorm2d) and layer.affine:
            nn.init.normal_(layer.weight, 1.0, std)
            nn.init.zeros_(layer.bias)

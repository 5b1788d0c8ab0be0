"""Unet generator and patch discriminator.

Public forward helpers take channels-last ``(B, H, W, 3)`` arrays or tensors
in [0, 1]; the modules themselves are NCHW and rescale inputs to [-1, 1].
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ValidationError

INIT_STD = 0.02


@dataclass
class GeneratorConfig:
    image_size: int = 64
    base_channels: int = 32
    depth: int | None = None

    def __post_init__(self):
        if self.depth is None and isinstance(self.image_size, int) and self.image_size > 4:
            self.depth = int(math.log2(self.image_size)) - 2

    def validate(self):
        s = self.image_size
        if not isinstance(s, int) or s & (s - 1) or not 32 <= s <= 512:
            raise ValidationError(f"image_size must be a power of two in [32, 512], got {s!r}", "image_size")
        if not isinstance(self.depth, int) or self.depth < 2:
            raise ValidationError(f"depth must be >= 2, got {self.depth!r}", "depth")
        if s >> self.depth < 1:
            raise ValidationError(
                f"depth {self.depth} leaves no spatial extent at the bottleneck for size {s}", "depth"
            )
        if not isinstance(self.base_channels, int) or self.base_channels < 1:
            raise ValidationError("base_channels must be a positive integer", "base_channels")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class DiscriminatorConfig:
    base_channels: int = 32
    n_layers: int = 3
    input_channels: int = 6

    def validate(self, image_size=None):
        if not isinstance(self.n_layers, int) or self.n_layers < 1:
            raise ValidationError("n_layers must be >= 1", "n_layers")
        if self.input_channels != 6:
            raise ValidationError("input_channels is fixed at 6 (lit + candidate)", "input_channels")
        if not isinstance(self.base_channels, int) or self.base_channels < 1:
            raise ValidationError("base_channels must be a positive integer", "base_channels")
        if image_size is not None and patch_grid_size(image_size, self.n_layers) < 1:
            raise ValidationError(
                f"{self.n_layers} layers on {image_size}px input leave an empty logit grid", "n_layers"
            )
        return self

    def to_dict(self):
        return asdict(self)


def patch_grid_size(image_size, n_layers):
    """Side of the logit grid: n stride-2 convs halve the size, then two
    4x4 stride-1 pad-1 convs each remove one pixel."""
    return image_size // 2**n_layers - 2


def _norm(ch):
    return nn.InstanceNorm2d(ch, affine=True)


def _channels(base, i):
    return base * min(2**i, 8)


class UnetGenerator(nn.Module):
    """Encoder of ``depth`` stride-2 4x4 convs, mirrored decoder with skips.

    Channel widths double per stage up to 8x ``base_channels``. The outermost
    and innermost encoder blocks carry no normalization, so the net works
    down to a 1x1 bottleneck; the output passes through a sigmoid.
    """

    def __init__(self, base_channels=32, depth=4):
        super().__init__()
        self.depth = depth
        ch = [_channels(base_channels, i) for i in range(depth)]
        downs = []
        for i in range(depth):
            layers = []
            if i > 0:
                layers.append(nn.LeakyReLU(0.2))
            layers.append(nn.Conv2d(3 if i == 0 else ch[i - 1], ch[i], 4, 2, 1))
            if 0 < i < depth - 1:
                layers.append(_norm(ch[i]))
            downs.append(nn.Sequential(*layers))
        ups = []
        for i in range(depth):
            c_in = ch[i] if i == depth - 1 else 2 * ch[i]
            c_out = 3 if i == 0 else ch[i - 1]
            layers = [nn.ReLU(), nn.ConvTranspose2d(c_in, c_out, 4, 2, 1)]
            if i > 0:
                layers.append(_norm(c_out))
            ups.append(nn.Sequential(*layers))
        self.downs = nn.ModuleList(downs)
        self.ups = nn.ModuleList(ups)

    def forward(self, x):
        h = x * 2.0 - 1.0
        skips = []
        for down in self.downs:
            h = down(h)
            skips.append(h)
        for i in reversed(range(self.depth)):
            h = self.ups[i](h)
            if i > 0:
                h = torch.cat([h, skips[i - 1]], dim=1)
        return torch.sigmoid(h)


class PatchDiscriminator(nn.Module):
    def __init__(self, base_channels=32, n_layers=3, input_channels=6):
        super().__init__()
        layers = [nn.Conv2d(input_channels, base_channels, 4, 2, 1), nn.LeakyReLU(0.2)]
        c = base_channels
        for i in range(1, n_layers):
            c_next = _channels(base_channels, i)
            layers += [nn.Conv2d(c, c_next, 4, 2, 1), _norm(c_next), nn.LeakyReLU(0.2)]
            c = c_next
        c_next = _channels(base_channels, n_layers)
        layers += [nn.Conv2d(c, c_next, 4, 1, 1), _norm(c_next), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(c_next, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, lit, candidate):
        x = torch.cat([lit, candidate], dim=1) * 2.0 - 1.0
        return self.net(x)


def init_weights(module, seed):
    """Conv weights ~ N(0, 0.02), biases 0, norm scales 1."""
    g = torch.Generator().manual_seed(int(seed) % 2**63)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=g) * INIT_STD)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return module


def build_generator(cfg, seed=0):
    cfg.validate()
    return init_weights(UnetGenerator(cfg.base_channels, cfg.depth), seed)


def build_discriminator(cfg, seed=0, image_size=None):
    cfg.validate(image_size)
    return init_weights(PatchDiscriminator(cfg.base_channels, cfg.n_layers, cfg.input_channels), seed)


def to_nchw(x):
    t = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x, dtype=torch.float32)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4 or t.shape[-1] != 3:
        raise ValidationError(f"expected (B, H, W, 3) input, got {tuple(t.shape)}", "lit")
    return t.permute(0, 3, 1, 2).contiguous()


def to_nhwc(t):
    return t.permute(0, 2, 3, 1)


def generator_forward(generator, lit, image_size=None):
    """Predicted albedo ``(B, H, W, 3)`` as a numpy array, in eval mode."""
    x = to_nchw(lit)
    if image_size is not None and tuple(x.shape[-2:]) != (image_size, image_size):
        raise ValidationError(
            f"input is {x.shape[-2]}x{x.shape[-1]}, generator expects {image_size}x{image_size}", "lit"
        )
    generator.eval()
    with torch.no_grad():
        out = generator(x)
    return to_nhwc(out).numpy()


def discriminator_forward(discriminator, lit, candidate):
    """Raw patch logits ``(B, h, w)`` as a numpy array, in eval mode."""
    a, b = to_nchw(lit), to_nchw(candidate)
    if a.shape != b.shape:
        raise ValidationError(
            f"lit {tuple(a.shape)} and candidate {tuple(b.shape)} differ in shape", "candidate"
        )
    discriminator.eval()
    with torch.no_grad():
        out = discriminator(a, b)
    return out[:, 0].numpy()

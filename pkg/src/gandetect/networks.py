"""Generator and discriminator-encoder networks.

Two families share one contract: the generator decodes a latent vector into
an image, and the discriminator maps an image to a realness score, a latent
encoding, and a flattened feature vector from the layer feeding the output
heads. The fixed-resolution family is a DCGAN-style stack; the progressive
family grows from 8x8 by doubling blocks blended in with a fade coefficient.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError, StageError
from .validation import is_power_of_two

LATENT_DIM_DEFAULT = 100
CHANNEL_BASE_DEFAULT = 256  # channels at 8x8, halving per doubling of resolution
INIT_STD = 0.02
FIXED_RESOLUTIONS = (8, 16, 32)


def channel_width(resolution, base=CHANNEL_BASE_DEFAULT):
    """Channels used at a given feature-map resolution."""
    return base * 8 // resolution


@dataclass
class DiscriminatorOutput:
    realness: torch.Tensor  # [N]
    encoding: torch.Tensor  # [N, latent_dim]
    features: torch.Tensor  # [N, F], F fixed per resolution


def init_weights(module):
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, INIT_STD)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, INIT_STD)
        nn.init.zeros_(module.bias)


def init_weights_he(module):
    """He-scaled init for the norm-free progressive blocks; keeps activation
    magnitudes of order one through depth."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, a=0.2, nonlinearity="leaky_relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class PixelNorm(nn.Module):
    """Per-position feature normalization used in the progressive generator."""

    def forward(self, x):
        return x / torch.sqrt(x.pow(2).mean(dim=1, keepdim=True) + 1e-8)


def blend_forward(x_lo_path, x_hi_path, alpha):
    """Elementwise (1 - alpha) * low-path + alpha * high-path."""
    if not 0.0 <= float(alpha) <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    lo = torch.as_tensor(x_lo_path)
    hi = torch.as_tensor(x_hi_path)
    if lo.shape != hi.shape:
        raise DimensionError(f"blend paths differ in shape: {tuple(lo.shape)} vs {tuple(hi.shape)}")
    alpha = float(alpha)
    if alpha == 0.0:
        return lo
    if alpha == 1.0:
        return hi
    return (1.0 - alpha) * lo + alpha * hi


def _coerce_latent(z, latent_dim):
    z = torch.as_tensor(z, dtype=torch.float32) if not isinstance(z, torch.Tensor) else z
    if z.ndim == 1:
        z = z[None]
    if z.ndim != 2 or z.shape[1] != latent_dim:
        raise DimensionError(f"expected latent vectors of length {latent_dim}, got {tuple(z.shape)}")
    return z


def _coerce_images(x, resolution, channels=1):
    x = torch.as_tensor(x, dtype=torch.float32) if not isinstance(x, torch.Tensor) else x
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != channels:
        raise DimensionError(f"expected [N, {channels}, H, W] images, got {tuple(x.shape)}")
    if x.shape[2] != resolution or x.shape[3] != resolution:
        raise DimensionError(
            f"expected {resolution}x{resolution} input, got {x.shape[2]}x{x.shape[3]}"
        )
    return x


class Generator(nn.Module):
    """Fixed-resolution decoder from latent vectors to images in (0, 1)."""

    def __init__(self, resolution, latent_dim=LATENT_DIM_DEFAULT,
                 base_channels=CHANNEL_BASE_DEFAULT, out_channels=1):
        super().__init__()
        if resolution not in FIXED_RESOLUTIONS:
            raise ValueError(f"resolution must be one of {FIXED_RESOLUTIONS}, got {resolution}")
        self.resolution = resolution
        self.latent_dim = latent_dim
        w4 = channel_width(4, base_channels)
        layers = [
            nn.ConvTranspose2d(latent_dim, w4, 4, 1, 0),
            nn.BatchNorm2d(w4),
            nn.ReLU(),
        ]
        res, ch = 4, w4
        while res < resolution // 2:
            nxt = channel_width(res * 2, base_channels)
            layers += [
                nn.ConvTranspose2d(ch, nxt, 4, 2, 1),
                nn.BatchNorm2d(nxt),
                nn.ReLU(),
            ]
            res, ch = res * 2, nxt
        layers += [nn.ConvTranspose2d(ch, out_channels, 4, 2, 1), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z[:, :, None, None])


class DiscriminatorEncoder(nn.Module):
    """Fixed-resolution critic with a latent-encoding head on a shared trunk."""

    def __init__(self, resolution, latent_dim=LATENT_DIM_DEFAULT,
                 base_channels=CHANNEL_BASE_DEFAULT, in_channels=1):
        super().__init__()
        if resolution not in FIXED_RESOLUTIONS:
            raise ValueError(f"resolution must be one of {FIXED_RESOLUTIONS}, got {resolution}")
        self.resolution = resolution
        self.latent_dim = latent_dim
        layers = []
        res, ch = resolution, in_channels
        while res > 4:
            nxt = channel_width(res // 2, base_channels)
            layers += [nn.Conv2d(ch, nxt, 4, 2, 1), nn.LeakyReLU(0.2)]
            res, ch = res // 2, nxt
        self.trunk = nn.Sequential(*layers)
        self.realness_head = nn.Conv2d(ch, 1, 4, 1, 0)
        self.encoder_head = nn.Conv2d(ch, latent_dim, 4, 1, 0)

    def forward(self, x) -> DiscriminatorOutput:
        h = self.trunk(x)
        return DiscriminatorOutput(
            realness=self.realness_head(h).flatten(1).squeeze(1),
            encoding=self.encoder_head(h).flatten(1),
            features=h.flatten(1),
        )

    def critic_parameters(self):
        yield from self.trunk.parameters()
        yield from self.realness_head.parameters()

    def encoder_parameters(self):
        yield from self.encoder_head.parameters()


class GanomalyNets(nn.Module):
    """Fixed-resolution generator + discriminator-encoder pair."""

    def __init__(self, generator, discriminator):
        super().__init__()
        self.generator = generator
        self.discriminator = discriminator

    @classmethod
    def build(cls, resolution, latent_dim=LATENT_DIM_DEFAULT,
              base_channels=CHANNEL_BASE_DEFAULT, channels=1, seed=0):
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            g = Generator(resolution, latent_dim, base_channels, out_channels=channels)
            d = DiscriminatorEncoder(resolution, latent_dim, base_channels, in_channels=channels)
            g.apply(init_weights)
            d.apply(init_weights)
        nets = cls(g, d)
        nets.eval()
        return nets

    @property
    def resolution(self):
        return self.generator.resolution

    @property
    def latent_dim(self):
        return self.generator.latent_dim

    def generate(self, z):
        return self.generator(_coerce_latent(z, self.latent_dim))

    def discriminate(self, x) -> DiscriminatorOutput:
        return self.discriminator(_coerce_images(x, self.resolution))

    def encode(self, x):
        return self.discriminate(x).encoding

    def reconstruct(self, x):
        return self.generate(self.encode(x))


class ProgressiveGenerator(nn.Module):
    def __init__(self, stage_resolutions, latent_dim, base_channels, out_channels=1):
        super().__init__()
        self.latent_dim = latent_dim
        w4 = channel_width(4, base_channels)
        self.initial = nn.Sequential(
            nn.ConvTranspose2d(latent_dim, w4, 4, 1, 0), nn.LeakyReLU(0.2), PixelNorm()
        )
        blocks, to_image = [], []
        prev = w4
        for res in stage_resolutions:
            w = channel_width(res, base_channels)
            blocks.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(prev, w, 3, 1, 1), nn.LeakyReLU(0.2), PixelNorm(),
                nn.Conv2d(w, w, 3, 1, 1), nn.LeakyReLU(0.2), PixelNorm(),
            ))
            to_image.append(nn.Sequential(nn.Conv2d(w, out_channels, 1), nn.Sigmoid()))
            prev = w
        self.blocks = nn.ModuleList(blocks)
        self.to_image = nn.ModuleList(to_image)

    def forward(self, z, stage, alpha):
        h = self.initial(z[:, :, None, None])
        h_prev = h
        for k in range(stage + 1):
            h_prev = h
            h = self.blocks[k](h)
        x_hi = self.to_image[stage](h)
        if stage > 0 and alpha < 1.0:
            x_lo = F.interpolate(self.to_image[stage - 1](h_prev), scale_factor=2, mode="nearest")
            return blend_forward(x_lo, x_hi, alpha)
        return x_hi


class ProgressiveDiscriminator(nn.Module):
    def __init__(self, stage_resolutions, latent_dim, base_channels, in_channels=1):
        super().__init__()
        self.latent_dim = latent_dim
        w4 = channel_width(4, base_channels)
        from_image, blocks = [], []
        for res in stage_resolutions:
            w = channel_width(res, base_channels)
            w_out = channel_width(res // 2, base_channels)
            from_image.append(nn.Sequential(nn.Conv2d(in_channels, w, 1), nn.LeakyReLU(0.2)))
            blocks.append(nn.Sequential(
                nn.Conv2d(w, w, 3, 1, 1), nn.LeakyReLU(0.2),
                nn.Conv2d(w, w_out, 3, 1, 1), nn.LeakyReLU(0.2),
                nn.AvgPool2d(2),
            ))
        self.from_image = nn.ModuleList(from_image)
        self.blocks = nn.ModuleList(blocks)
        self.final = nn.Sequential(nn.Conv2d(w4, w4, 3, 1, 1), nn.LeakyReLU(0.2))
        feat_len = 16 * w4
        self.realness_head = nn.Linear(feat_len, 1)
        self.encoder_head = nn.Linear(feat_len, latent_dim)

    def forward(self, x, stage, alpha) -> DiscriminatorOutput:
        h = self.blocks[stage](self.from_image[stage](x))
        if stage > 0 and alpha < 1.0:
            skip = self.from_image[stage - 1](F.avg_pool2d(x, 2))
            h = blend_forward(skip, h, alpha)
        for k in range(stage - 1, -1, -1):
            h = self.blocks[k](h)
        f = self.final(h).flatten(1)
        return DiscriminatorOutput(
            realness=self.realness_head(f).squeeze(1),
            encoding=self.encoder_head(f),
            features=f,
        )

    def critic_parameters(self):
        yield from self.from_image.parameters()
        yield from self.blocks.parameters()
        yield from self.final.parameters()
        yield from self.realness_head.parameters()

    def encoder_parameters(self):
        yield from self.encoder_head.parameters()


class ProgressiveStack(nn.Module):
    """Progressively growing generator/discriminator pair.

    Holds one block per resolution rung from 8x8 up to ``max_resolution``;
    ``active_stage`` selects the rung in use and ``alpha`` blends the newest
    block with the upsampled previous rung while fading in.
    """

    def __init__(self, generator, discriminator, stage_resolutions):
        super().__init__()
        self.generator = generator
        self.discriminator = discriminator
        self.stage_resolutions = list(stage_resolutions)
        self.active_stage = 0
        self.alpha = 1.0  # stage 0 has nothing to fade
        self.iterations_in_stage = 0

    @classmethod
    def build(cls, max_resolution, latent_dim=LATENT_DIM_DEFAULT,
              base_channels=CHANNEL_BASE_DEFAULT, channels=1, seed=0):
        if max_resolution < 8 or not is_power_of_two(max_resolution):
            raise ValueError(f"max_resolution must be a power of two >= 8, got {max_resolution}")
        resolutions = []
        res = 8
        while res <= max_resolution:
            resolutions.append(res)
            res *= 2
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            g = ProgressiveGenerator(resolutions, latent_dim, base_channels, out_channels=channels)
            d = ProgressiveDiscriminator(resolutions, latent_dim, base_channels, in_channels=channels)
            g.apply(init_weights_he)
            d.apply(init_weights_he)
        stack = cls(g, d, resolutions)
        stack.eval()
        return stack

    @property
    def latent_dim(self):
        return self.generator.latent_dim

    @property
    def max_resolution(self):
        return self.stage_resolutions[-1]

    @property
    def active_resolution(self):
        return self.stage_resolutions[self.active_stage]

    @property
    def resolution(self):
        return self.active_resolution

    def set_alpha(self, alpha):
        if not 0.0 <= float(alpha) <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.alpha = float(alpha)

    def grow(self):
        """Activate the next resolution rung; existing parameters are untouched."""
        if self.active_stage + 1 >= len(self.stage_resolutions):
            raise StageError(f"already at maximum resolution {self.active_resolution}")
        self.active_stage += 1
        self.alpha = 0.0
        self.iterations_in_stage = 0
        return self

    def generate(self, z):
        return self.generator(_coerce_latent(z, self.latent_dim), self.active_stage, self.alpha)

    def discriminate(self, x) -> DiscriminatorOutput:
        return self.discriminator(
            _coerce_images(x, self.active_resolution), self.active_stage, self.alpha
        )

    def encode(self, x):
        return self.discriminate(x).encoding

    def reconstruct(self, x):
        return self.generate(self.encode(x))


def grow(stack: ProgressiveStack) -> ProgressiveStack:
    return stack.grow()

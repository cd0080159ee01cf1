"""Multi-frequency partial fusion network: the RAW protection network.

Data flow::

    x [N,3,H,W] -> DT-CWT -> per-level streams
        level 1..3 : 36 channels (3 colours x 6 orientations x re/im)
        lowpass    : 3 channels (treated as the coarsest level)
    -> DSConv-LN-GELU stem (-> c_f) -> n_blocks x [HFC, PFF] -> DSConv-LN-GELU
    -> inverse DT-CWT -> residual added to x

Level 1 is the finest. PFF at level i only reads levels j <= i, so detail
from fine subbands is pushed towards coarse ones and never the other way.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dtcwt import channels_to_pyramid, dtcwt_forward, dtcwt_inverse, pyramid_to_channels


@dataclass
class MpfConfig:
    c_in: int = 3
    c_out: int = 3
    c_f: int = 32
    n_blocks: int = 16
    s: float = 0.25
    levels: int = 3
    hfc_residual: bool = True

    def __post_init__(self):
        fused = self.c_f * self.s
        if self.c_f % 2:
            raise ValueError(f"c_f must be even (HFC halves the features), got {self.c_f}")
        if fused <= 0 or abs(fused - round(fused)) > 1e-9 or round(fused) >= self.c_f:
            raise ValueError(
                f"c_f * s must be a positive integer below c_f; got c_f={self.c_f}, s={self.s}")
        if round(fused) < 4:
            raise ValueError("channel attention needs at least 4 fused channels (c_f * s >= 4)")
        if self.c_in != self.c_out:
            raise ValueError("the residual output requires c_in == c_out")
        if self.levels < 1 or self.n_blocks < 0:
            raise ValueError("levels must be >= 1 and n_blocks >= 0")

    @property
    def fused(self) -> int:
        return int(round(self.c_f * self.s))


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel axis at every pixel."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = (x - mu).pow(2).mean(1, keepdim=True)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return y * self.weight[:, None, None] + self.bias[:, None, None]


class DSConv(nn.Module):
    """Depthwise 3x3 followed by pointwise 1x1."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.depthwise = nn.Conv2d(c_in, c_in, 3, padding=1, groups=c_in, padding_mode="reflect")
        self.pointwise = nn.Conv2d(c_in, c_out, 1)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class DSConvLNGELU(nn.Sequential):
    def __init__(self, c_in: int, c_out: int):
        super().__init__(DSConv(c_in, c_out), LayerNorm2d(c_out), nn.GELU())


class SpectralBranch(nn.Module):
    """Global branch: rFFT, 1x1 convolution over stacked real/imag parts, inverse rFFT."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, 2 * channels, 1, bias=False)

    def forward(self, x):
        h, w = x.shape[-2:]
        spec = torch.fft.rfft2(x, norm="ortho")
        z = torch.cat((spec.real, spec.imag), dim=1)
        z = self.conv(z)
        re, im = z.chunk(2, dim=1)
        return torch.fft.irfft2(torch.complex(re, im), s=(h, w), norm="ortho")


class LocalBranch(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = DSConv(channels, channels)
        self.conv2 = DSConv(channels, channels)

    def forward(self, x):
        return self.conv2(F.gelu(self.conv1(x)))


class HFC(nn.Module):
    """Half Fourier convolution: first half of the channels goes global, second half local."""

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2:
            raise ValueError("HFC needs an even channel count")
        self.half = channels // 2
        self.global_branch = SpectralBranch(self.half)
        self.local_branch = LocalBranch(self.half)

    def forward(self, x):
        if x.shape[1] != 2 * self.half:
            raise ValueError(f"expected {2 * self.half} channels, got {x.shape[1]}")
        a, b = x[:, :self.half], x[:, self.half:]
        return torch.cat((self.global_branch(a), self.local_branch(b)), dim=1)


class ChannelAttention(nn.Module):
    """Global average pool, 1x1 bottleneck (c -> c/4 -> c), sigmoid gate."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels < reduction:
            raise ValueError(f"channel attention needs >= {reduction} channels")
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1)
        self.excite = nn.Conv2d(channels // reduction, channels, 1)

    def gate(self, x):
        pooled = x.mean(dim=(-2, -1), keepdim=True)
        return torch.sigmoid(self.excite(F.relu(self.squeeze(pooled))))

    def forward(self, x):
        return x * self.gate(x)


class PFF(nn.Module):
    """Partial feature fusion for one level.

    ``inputs[j]`` is the feature map of level j+1 (finest first); the level
    index ``level`` is 0-based. Output is ``[reserved, fused]`` where
    ``reserved = inputs[level][:, s*c_f:]`` passes through untouched and
    ``fused`` sums channel-attended, resized ``inputs[j][:, :s*c_f]`` for j <= level.
    """

    def __init__(self, level: int, fused: int):
        super().__init__()
        self.level = level
        self.fused = fused
        self.attn = nn.ModuleList(ChannelAttention(fused) for _ in range(level + 1))

    def forward(self, inputs):
        if len(inputs) <= self.level:
            raise ValueError(f"PFF at level {self.level + 1} needs {self.level + 1} inputs")
        cur = inputs[self.level]
        size = cur.shape[-2:]
        total = 0
        for j, ca in enumerate(self.attn):
            part = inputs[j][:, :self.fused]
            if part.shape[-2:] != size:
                part = F.interpolate(part, size=size, mode="bilinear", align_corners=False)
            total = total + ca(part)
        return torch.cat((cur[:, self.fused:], total), dim=1)


class MPFBlock(nn.Module):
    def __init__(self, n_streams: int, cfg: MpfConfig):
        super().__init__()
        self.residual = cfg.hfc_residual
        self.hfc = nn.ModuleList(HFC(cfg.c_f) for _ in range(n_streams))
        self.pff = nn.ModuleList(PFF(i, cfg.fused) for i in range(n_streams))

    def forward(self, feats):
        mid = []
        for x, hfc in zip(feats, self.hfc):
            y = hfc(x)
            mid.append(x + y if self.residual else y)
        out = [pff(mid) for pff in self.pff]
        for a, b in zip(feats, out):
            assert a.shape == b.shape, "MPF block must preserve feature shape"
        return out


class MPFNet(nn.Module):
    def __init__(self, cfg: MpfConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or MpfConfig()
        n_streams = cfg.levels + 1
        native = [12 * cfg.c_in] * cfg.levels + [cfg.c_in]
        self.stems_in = nn.ModuleList(DSConvLNGELU(c, cfg.c_f) for c in native)
        self.blocks = nn.ModuleList(MPFBlock(n_streams, cfg) for _ in range(cfg.n_blocks))
        self.stems_out = nn.ModuleList(DSConvLNGELU(cfg.c_f, c) for c in native)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="linear")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        # zero output gain: the untrained network is the identity map
        for stem in self.stems_out:
            nn.init.zeros_(stem[1].weight)
            nn.init.zeros_(stem[1].bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        unbatched = x.dim() == 3
        if unbatched:
            x = x[None]
        pyr = dtcwt_forward(x, self.cfg.levels)
        feats = [stem(f) for stem, f in zip(self.stems_in, pyramid_to_channels(pyr))]
        for block in self.blocks:
            feats = block(feats)
        delta = [stem(f) for stem, f in zip(self.stems_out, feats)]
        out = x + dtcwt_inverse(channels_to_pyramid(delta, self.cfg.c_in))
        return out[0] if unbatched else out


def count_parameters(model: nn.Module | None) -> int:
    if model is None:
        return 0
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(model: nn.Module, directory, config: dict, kind: str) -> Path:
    """Write ``weights.pt`` and a JSON ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), directory / "weights.pt")
    manifest = {"kind": kind, "config": config, "parameter_count": count_parameters(model)}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_mpfnet(directory) -> MPFNet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("kind") != "mpfnet":
        raise ValueError(f"{directory} does not hold an MPF-Net checkpoint")
    model = MPFNet(MpfConfig(**manifest["config"]))
    model.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
    if count_parameters(model) != manifest["parameter_count"]:
        raise ValueError("parameter count does not match the manifest")
    return model


def save_mpfnet(model: MPFNet, directory) -> Path:
    return save_checkpoint(model, directory, asdict(model.cfg), "mpfnet")

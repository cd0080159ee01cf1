"""Image containers, Bayer mosaic/demosaic, synthetic RAW and file I/O.

Array convention: channel-first torch tensors, ``[C, H, W]`` or batched
``[N, C, H, W]``. Functions accept either a bare tensor or the matching
container; a container in gives a container out.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
_CHANNEL = {"R": 0, "G": 1, "B": 2}


class ImageFormatError(ValueError):
    pass


class PatternMismatchError(ImageFormatError):
    pass


@dataclass(frozen=True)
class RgbImage:
    data: torch.Tensor  # [3, H, W] in [0, 1]

    def __post_init__(self):
        if self.data.dim() != 3 or self.data.shape[0] != 3:
            raise ValueError(f"RgbImage needs [3, H, W], got {tuple(self.data.shape)}")

    @property
    def shape(self):
        return tuple(self.data.shape[-2:])


@dataclass(frozen=True)
class RawImage:
    data: torch.Tensor  # [1, H, W], normalized to [0, 1]
    pattern: str = "RGGB"
    black_level: int = 0
    white_level: int = 65535

    def __post_init__(self):
        if self.data.dim() != 3 or self.data.shape[0] != 1:
            raise ValueError(f"RawImage needs [1, H, W], got {tuple(self.data.shape)}")
        if self.data.shape[-1] % 2 or self.data.shape[-2] % 2:
            raise ValueError("RAW height and width must be even")
        _check_pattern(self.pattern)
        if self.white_level <= self.black_level:
            raise ValueError("white_level must exceed black_level")

    @property
    def shape(self):
        return tuple(self.data.shape[-2:])

    def to_dn(self) -> np.ndarray:
        """Denormalize to integer sensor values."""
        span = self.white_level - self.black_level
        dn = np.rint(self.data[0].detach().cpu().double().numpy() * span) + self.black_level
        return np.clip(dn, 0, 65535).astype(np.uint16)

    @classmethod
    def from_dn(cls, dn: np.ndarray, pattern="RGGB", black_level=0, white_level=65535) -> "RawImage":
        span = white_level - black_level
        data = (np.asarray(dn, dtype=np.float64) - black_level) / span
        return cls(torch.from_numpy(np.clip(data, 0.0, 1.0))[None].float(), pattern,
                   black_level, white_level)


@dataclass(frozen=True)
class BinaryMask:
    data: torch.Tensor  # [1, H, W], {0,1} for ground truth or [0,1] for predictions

    @property
    def area(self) -> float:
        return float(self.data.float().mean())

    def is_binary(self) -> bool:
        return bool(((self.data == 0) | (self.data == 1)).all())


@dataclass(frozen=True)
class IspParams:
    """Parameters of the built-in conventional pipeline.

    ``gamma`` is ``"srgb"`` (piecewise sRGB curve whose power segment uses
    ``gamma_exponent``, 2.4 nominal) or ``"power"`` (``y = x ** (1 / gamma_exponent)``).
    """

    wb_gains: tuple = (2.0, 1.0, 1.6)
    ccm: tuple = ((1.3, -0.2, -0.1), (-0.1, 1.2, -0.1), (0.0, -0.3, 1.3))
    gamma: str = "srgb"
    gamma_exponent: float = 2.4

    def __post_init__(self):
        object.__setattr__(self, "wb_gains", tuple(float(g) for g in self.wb_gains))
        object.__setattr__(self, "ccm", tuple(tuple(float(v) for v in row) for row in self.ccm))
        if len(self.wb_gains) != 3 or min(self.wb_gains) <= 0:
            raise ValueError("wb_gains must be three positive numbers")
        if len(self.ccm) != 3 or any(len(r) != 3 for r in self.ccm):
            raise ValueError("ccm must be 3x3")
        for row in self.ccm:
            if abs(sum(row) - 1.0) > 1e-6:
                raise ValueError(f"ccm rows must sum to 1, got row {row}")
        if self.gamma not in ("srgb", "power"):
            raise ValueError(f"unknown gamma {self.gamma!r}")
        if self.gamma_exponent <= 0:
            raise ValueError("gamma_exponent must be positive")

    @classmethod
    def identity(cls) -> "IspParams":
        return cls((1.0, 1.0, 1.0), ((1, 0, 0), (0, 1, 0), (0, 0, 1)), "power", 1.0)

    def perturbed(self, rng: np.random.Generator) -> "IspParams":
        """Unseen-ISP variant: white balance within +-20%, gamma exponent within +-10%."""
        gains = tuple(g * rng.uniform(0.8, 1.2) for g in self.wb_gains)
        return IspParams(gains, self.ccm, self.gamma, self.gamma_exponent * rng.uniform(0.9, 1.1))

    def to_dict(self) -> dict:
        return {"wb_gains": list(self.wb_gains), "ccm": [list(r) for r in self.ccm],
                "gamma": self.gamma, "gamma_exponent": self.gamma_exponent}


def _check_pattern(pattern: str) -> None:
    if pattern not in PATTERNS:
        raise ValueError(f"unknown Bayer pattern {pattern!r}; expected one of {PATTERNS}")


def cfa_masks(pattern: str, h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """One-hot colour-filter masks, shape [3, H, W]."""
    _check_pattern(pattern)
    tile = torch.zeros(3, 2, 2, dtype=dtype)
    for k, ch in enumerate(pattern):
        tile[_CHANNEL[ch], k // 2, k % 2] = 1
    return tile.repeat(1, h // 2, w // 2)


def _unwrap(x):
    return x.data if isinstance(x, (RgbImage, RawImage, BinaryMask)) else x


def mosaic(rgb, pattern: str = "RGGB"):
    """Sample an RGB image through a Bayer colour-filter array."""
    x = _unwrap(rgb)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic needs even H and W, got {h}x{w}")
    m = cfa_masks(pattern, h, w, x.dtype).to(x.device)
    raw = (x * m).sum(dim=-3, keepdim=True)
    if isinstance(rgb, RgbImage):
        return RawImage(raw, pattern)
    return raw


_K_RB = torch.tensor([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4
_K_G = torch.tensor([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4


def demosaic_bilinear(raw, pattern: str | None = None):
    """Bilinear demosaic.

    Native sites keep their sample; missing channels average the nearest
    same-channel neighbours. The plane is mirrored at the border (CFA parity
    preserved), which replicates the closest same-channel samples.
    """
    if isinstance(raw, RawImage):
        pattern = raw.pattern
    pattern = pattern or "RGGB"
    x = _unwrap(raw)
    unbatched = x.dim() == 3
    if unbatched:
        x = x[None]
    n, _, h, w = x.shape
    m = cfa_masks(pattern, h, w, x.dtype).to(x.device)
    sparse = x * m  # [N, 3, H, W]
    padded = F.pad(sparse, (1, 1, 1, 1), mode="reflect")
    k = torch.stack((_K_RB, _K_G, _K_RB)).to(x)[:, None]
    out = F.conv2d(padded, k, groups=3)
    if unbatched:
        out = out[0]
    if isinstance(raw, RawImage):
        return RgbImage(out)
    return out


# sRGB transfer function with an adjustable power segment.
def srgb_encode(x: torch.Tensor, exponent: float = 2.4) -> torch.Tensor:
    x = x.clamp(0, 1)
    hi = 1.055 * x.clamp_min(0.0031308) ** (1 / exponent) - 0.055
    return torch.where(x <= 0.0031308, 12.92 * x, hi)


def srgb_decode(y: torch.Tensor, exponent: float = 2.4) -> torch.Tensor:
    y = y.clamp(0, 1)
    hi = ((y.clamp_min(0.04045) + 0.055) / 1.055) ** exponent
    return torch.where(y <= 0.04045, y / 12.92, hi)


def apply_gamma(x: torch.Tensor, params: IspParams) -> torch.Tensor:
    if params.gamma == "srgb":
        return srgb_encode(x, params.gamma_exponent)
    if params.gamma_exponent == 1.0:
        return x
    return x.clamp(0, 1) ** (1 / params.gamma_exponent)


def invert_gamma(y: torch.Tensor, params: IspParams) -> torch.Tensor:
    if params.gamma == "srgb":
        return srgb_decode(y, params.gamma_exponent)
    if params.gamma_exponent == 1.0:
        return y
    return y.clamp(0, 1) ** params.gamma_exponent


def apply_ccm(x: torch.Tensor, ccm) -> torch.Tensor:
    m = torch.as_tensor(ccm, dtype=x.dtype, device=x.device)
    return torch.einsum("ij,...jhw->...ihw", m, x)


def synthesize_raw(rgb, params: IspParams | None = None, pattern: str = "RGGB"):
    """Approximate RAW by running the conventional pipeline backwards.

    Inverse gamma, inverse colour matrix, inverse white balance, clamp to
    [0, 1], then Bayer sampling.
    """
    params = params or IspParams()
    x = _unwrap(rgb)
    ccm = np.asarray(params.ccm, dtype=np.float64)
    if abs(np.linalg.det(ccm)) < 1e-9:
        raise np.linalg.LinAlgError("colour matrix is singular")
    lin = invert_gamma(x, params)
    lin = apply_ccm(lin, np.linalg.inv(ccm))
    gains = torch.tensor(params.wb_gains, dtype=x.dtype, device=x.device).view(3, 1, 1)
    lin = (lin / gains).clamp(0, 1)
    raw = mosaic(lin, pattern)
    if isinstance(rgb, RgbImage):
        return RawImage(raw, pattern)
    return raw


def center_crop_multiple(x: torch.Tensor, multiple: int = 16) -> torch.Tensor:
    h, w = x.shape[-2:]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise ValueError(f"image {h}x{w} is smaller than {multiple}x{multiple}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return x[..., top:top + nh, left:left + nw]


def synthetic_rgb(size: int | tuple, rng: np.random.Generator) -> torch.Tensor:
    """Procedural natural-looking RGB image in [0, 1] (multi-scale noise, shapes, edges)."""
    h, w = (size, size) if isinstance(size, int) else size
    img = np.zeros((3, h, w))
    base = rng.uniform(0.2, 0.7, size=3)
    img += base[:, None, None]
    # (scale, amplitude, chroma share): fine texture is mostly luminance
    for sigma, amp, chroma in ((h / 4, 0.25, 1.0), (h / 12, 0.12, 0.6), (2.0, 0.05, 0.2), (0.7, 0.03, 0.1)):
        noise = ndimage.gaussian_filter(rng.standard_normal((3, h, w)), (0, sigma, sigma), mode="wrap")
        noise /= noise.std() + 1e-12
        mix = chroma * rng.uniform(0.3, 1.0, size=3)[:, None, None]
        img += amp * (mix * noise + (1 - mix) * noise.mean(0, keepdims=True))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(2, 7)):
        color = (rng.uniform(0.1, 0.9) + rng.uniform(-0.2, 0.2, size=3))[:, None, None]
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.random() < 0.5:
            ry, rx = rng.uniform(0.05, 0.3) * h, rng.uniform(0.05, 0.3) * w
            region = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            ry, rx = rng.uniform(0.05, 0.25) * h, rng.uniform(0.05, 0.25) * w
            region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        shade = 1 + 0.15 * ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.5)
        alpha = rng.uniform(0.6, 1.0)
        img = np.where(region[None], (1 - alpha) * img + alpha * color * shade, img)
    img = ndimage.gaussian_filter(img, (0, 0.8, 0.8))
    return torch.from_numpy(np.clip(img, 0.02, 0.98)).float()


def synthetic_raw_corpus(n: int, size: int = 128, params: IspParams | None = None,
                         seed: int = 0, pattern: str = "RGGB") -> list[RawImage]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        rgb = synthetic_rgb(size, rng)
        out.append(RawImage(synthesize_raw(rgb, params, pattern), pattern))
    return out


# ---------------------------------------------------------------- file I/O

def _sidecar(path: Path) -> Path:
    return path.with_suffix(".rawmeta.json")


def save_image(img, path) -> None:
    """Write an RgbImage as 8-bit PNG, a RawImage as 16-bit PGM plus sidecar, a BinaryMask as PNG."""
    path = Path(path)
    if isinstance(img, RawImage):
        dn = img.to_dn()
        h, w = dn.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
            fh.write(dn.astype(">u2").tobytes())
        meta = {"bayer_pattern": img.pattern, "black_level": int(img.black_level),
                "white_level": int(img.white_level)}
        _sidecar(path).write_text(json.dumps(meta, indent=2) + "\n")
    elif isinstance(img, RgbImage):
        arr = _to_uint8(img.data).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    elif isinstance(img, BinaryMask):
        arr = np.where(img.data[0].detach().cpu().numpy() >= 0.5, 255, 0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    else:
        raise TypeError(f"cannot save {type(img).__name__}")


def _to_uint8(x: torch.Tensor) -> np.ndarray:
    return np.rint(x.detach().cpu().double().clamp(0, 1).numpy() * 255).astype(np.uint8)


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if maxval != 65535:
        raise ImageFormatError(f"{path}: expected maxval 65535, got {maxval}")
    body = raw[pos:pos + 2 * w * h]
    if len(body) != 2 * w * h:
        raise ImageFormatError(f"{path}: raster is truncated")
    return np.frombuffer(body, dtype=">u2").reshape(h, w)


def load_image(path, expected_pattern: str | None = None):
    """Load a PNG (RgbImage), a PGM with sidecar (RawImage) or a single-channel PNG mask."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        side = _sidecar(path)
        if not side.exists():
            raise ImageFormatError(f"{path}: missing sidecar {side.name}")
        try:
            meta = json.loads(side.read_text())
            pattern = meta["bayer_pattern"]
            black, white = int(meta["black_level"]), int(meta["white_level"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ImageFormatError(f"{side}: malformed sidecar") from exc
        if expected_pattern is not None and pattern != expected_pattern:
            raise PatternMismatchError(
                f"{path}: sidecar declares {pattern} but {expected_pattern} was expected")
        return RawImage.from_dn(_read_pgm(path), pattern, black, white)
    with Image.open(path) as im:
        if im.mode in ("L", "1"):
            arr = np.asarray(im.convert("L"))
            return BinaryMask(torch.from_numpy((arr >= 128).astype(np.float32))[None])
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return RgbImage(torch.from_numpy(arr.transpose(2, 0, 1).copy()))


def load_rgb_for_pipeline(path) -> RgbImage:
    """Load an RGB file and center-crop it to multiples of 16."""
    img = load_image(path)
    if not isinstance(img, RgbImage):
        raise ImageFormatError(f"{path}: expected an RGB image")
    return RgbImage(center_crop_multiple(img.data, 16).contiguous())

"""Per-plane noise-prediction network built from wavelet residual blocks."""

import hashlib
import json
import logging
from pathlib import Path
from typing import Literal, Optional, Union

import torch
import torch.nn as nn
from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import DimensionError, WeightError
from .volume import Plane
from .wavelet import WTConv2d


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class DenoiserConfig(BaseModel):
    wavelet: bool = True
    channels: int = Field(default=1, ge=1)
    width: int = Field(default=8, ge=1)
    levels: int = Field(default=1, ge=0, description="encoder/decoder depth E")
    kernel_size: int = Field(default=3, ge=1)
    wt_levels: int = Field(default=2, ge=0)
    block: Literal["wavelet", "plain"] = "wavelet"

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {v}")
        return v

    @property
    def state_channels(self) -> int:
        return 4 * self.channels if self.wavelet else self.channels

    @property
    def in_channels(self) -> int:
        return 2 * self.state_channels + 1

    def architecture_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


class ResidualBlock(nn.Module):
    """Conv -> SiLU -> WTConv -> SiLU -> Conv with an additive skip."""

    def __init__(self, width: int, config: DenoiserConfig):
        super().__init__()
        k = config.kernel_size
        self.conv_in = nn.Conv2d(width, width, k, padding=k // 2)
        if config.block == "wavelet":
            self.mixer = WTConv2d(width, kernel_size=k, levels=config.wt_levels)
        else:
            self.mixer = nn.Conv2d(width, width, k, padding=k // 2)
        self.conv_out = nn.Conv2d(width, width, k, padding=k // 2)
        self.act = nn.SiLU()

    def receptive_radius(self) -> int:
        half = self.conv_in.kernel_size[0] // 2
        if isinstance(self.mixer, WTConv2d):
            middle = self.mixer.receptive_radius()
        else:
            middle = self.mixer.kernel_size[0] // 2
        return 2 * half + middle

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.conv_in(x))
        h = self.act(self.mixer(h))
        return x + self.conv_out(h)


class Denoiser(nn.Module):
    """
    U-shaped noise predictor.

    Input is the state, the condition and a constant t/T channel stacked
    along channels; output has the state's channel count. Encoder level e
    halves the resolution with a 2x2 stride-2 convolution and doubles the
    width; decoder levels upsample with a 2x2 transposed convolution and fuse
    the skip with a 1x1 convolution.
    """

    def __init__(self, config: Optional[DenoiserConfig] = None, plane: Optional[Union[Plane, str]] = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        self.plane = Plane(plane) if plane is not None else None
        c = self.config
        widths = [c.width * 2 ** e for e in range(c.levels + 1)]

        self.head = nn.Conv2d(c.in_channels, widths[0], c.kernel_size, padding=c.kernel_size // 2)
        self.encoder = nn.ModuleList([ResidualBlock(widths[e], c) for e in range(c.levels)])
        self.down = nn.ModuleList([
            nn.Conv2d(widths[e], widths[e + 1], 2, stride=2) for e in range(c.levels)
        ])
        self.middle = ResidualBlock(widths[-1], c)
        self.up = nn.ModuleList([
            nn.ConvTranspose2d(widths[e + 1], widths[e], 2, stride=2) for e in range(c.levels)
        ])
        self.fuse = nn.ModuleList([nn.Conv2d(2 * widths[e], widths[e], 1) for e in range(c.levels)])
        self.decoder = nn.ModuleList([ResidualBlock(widths[e], c) for e in range(c.levels)])
        self.tail = nn.Conv2d(widths[0], c.state_channels, c.kernel_size, padding=c.kernel_size // 2)

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @property
    def required_multiple(self) -> int:
        """Spatial dims of the network input must be multiples of this."""
        wt = self.config.wt_levels if self.config.block == "wavelet" else 0
        return 2 ** (wt + self.config.levels)

    def receptive_radius(self) -> int:
        """Upper bound on how far (in input pixels) one input pixel can influence the output."""
        edge = self.config.kernel_size // 2
        radius = 2 * edge
        for e in range(self.config.levels):
            scale = 2 ** e
            radius += 2 * scale * self.encoder[e].receptive_radius()
            radius += 2 * 2 * scale
        radius += 2 ** self.config.levels * self.middle.receptive_radius()
        return radius

    def forward(self, x_t: torch.Tensor, mu: torch.Tensor, t_frac: torch.Tensor) -> torch.Tensor:
        n, ch, h, w = x_t.shape
        if ch != self.config.state_channels or mu.shape != x_t.shape:
            raise DimensionError(
                f"expected state and condition of {self.config.state_channels} channels, "
                f"got {tuple(x_t.shape)} and {tuple(mu.shape)}"
            )
        step = self.required_multiple
        if h % step or w % step:
            raise DimensionError(f"spatial dims ({h}, {w}) must be divisible by {step}")

        time = t_frac.to(x_t).reshape(-1, 1, 1, 1).expand(n, 1, h, w)
        x = self.head(torch.cat([x_t, mu, time], dim=1))
        skips = []
        for block, down in zip(self.encoder, self.down):
            x = block(x)
            skips.append(x)
            x = down(x)
        x = self.middle(x)
        for e in reversed(range(self.config.levels)):
            x = self.up[e](x)
            x = self.fuse[e](torch.cat([x, skips[e]], dim=1))
            x = self.decoder[e](x)
        return self.tail(x)


# ============================================================================
# CHECKPOINTS: <stem>.pt state dict + <stem>.json manifest
# ============================================================================

class CheckpointManifest(BaseModel):
    format_version: int = FORMAT_VERSION
    plane: Optional[Plane] = None
    config: DenoiserConfig
    architecture_hash: str
    in_channels: int
    out_channels: int
    param_count: int
    schedule: Optional[dict] = None


def _stem(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".pt", ".json") else path


def save_checkpoint(net: Denoiser, path: Union[str, Path], schedule: Optional[dict] = None) -> Path:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = CheckpointManifest(
        plane=net.plane,
        config=net.config,
        architecture_hash=net.config.architecture_hash(),
        in_channels=net.config.in_channels,
        out_channels=net.config.state_channels,
        param_count=net.param_count,
        schedule=schedule,
    )
    torch.save(net.state_dict(), stem.with_suffix(".pt"))
    stem.with_suffix(".json").write_text(manifest.model_dump_json(indent=2))
    logger.info("Saved %s network (%d weights) to %s.pt", net.plane.value if net.plane else "unbound", net.param_count, stem)
    return stem.with_suffix(".pt")


def load_manifest(path: Union[str, Path]) -> CheckpointManifest:
    manifest_path = _stem(path).with_suffix(".json")
    try:
        payload = json.loads(manifest_path.read_text())
        manifest = CheckpointManifest.model_validate(payload)
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise WeightError(f"unreadable checkpoint manifest {manifest_path} ({e})") from e
    if manifest.format_version != FORMAT_VERSION:
        raise WeightError(f"unsupported checkpoint format {manifest.format_version}")
    if manifest.architecture_hash != manifest.config.architecture_hash():
        raise WeightError("architecture hash does not match the stored config")
    return manifest


def load_checkpoint(path: Union[str, Path], map_location="cpu") -> Denoiser:
    stem = _stem(path)
    manifest = load_manifest(stem)
    net = Denoiser(manifest.config, plane=manifest.plane)
    try:
        state = torch.load(stem.with_suffix(".pt"), map_location=map_location, weights_only=True)
        net.load_state_dict(state)
    except (OSError, RuntimeError) as e:
        raise WeightError(f"cannot load weights from {stem}.pt ({e})") from e
    if net.param_count != manifest.param_count:
        raise WeightError(f"manifest lists {manifest.param_count} weights, network has {net.param_count}")
    return net

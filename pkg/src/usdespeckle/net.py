"""Multi-encoder / shared-decoder convolutional despeckling network.

Each branch k owns an encoder E_k; all branches share one decoder D and the
output for branch k is D(E_k(x)). Encoders downsample by 16 with four strided
convolutions, the decoder mirrors them with nearest-neighbour upsampling.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imgcore import Image, ImageError

MAGIC = b"S2S1"
FORMAT_VERSION = 1
TOTAL_STRIDE = 16


class CheckpointError(ValueError):
    """Malformed checkpoint or architecture mismatch."""


@dataclass(frozen=True)
class ArchConfig:
    n_branches: int = 3
    base_channels: int = 16
    enc_conv_blocks: int = 4
    enc_res_blocks: int = 3
    dec_conv_blocks: int = 4
    dec_res_blocks: int = 4
    channel_cap: int = 2          # widest layer = channel_cap * base_channels
    kernel_size: int = 3
    activation: str = "relu"
    norm: str = "none"

    def __post_init__(self):
        if self.n_branches < 1 or self.base_channels < 1 or self.channel_cap < 1:
            raise ValueError("n_branches, base_channels and channel_cap must be >= 1")
        if self.enc_conv_blocks != self.dec_conv_blocks:
            raise ValueError("encoder and decoder must have the same number of resolution steps")
        if self.activation != "relu" or self.norm != "none":
            raise ValueError("only relu activation without normalization is supported")

    @property
    def stride(self) -> int:
        return 2 ** self.enc_conv_blocks

    def widths(self) -> List[int]:
        return [self.base_channels * min(2 ** i, self.channel_cap) for i in range(self.enc_conv_blocks)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


DESK_ARCH = ArchConfig()
# base width that lands the three-branch model at about three million weights
FULL_SCALE_ARCH = ArchConfig(base_channels=48)


class ResBlock(nn.Module):
    def __init__(self, ch: int, k: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, k, padding=k // 2)
        self.conv2 = nn.Conv2d(ch, ch, k, padding=k // 2)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class Encoder(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        k = arch.kernel_size
        cin = 1
        self.convs = nn.ModuleList()
        for c in arch.widths():
            self.convs.append(nn.Conv2d(cin, c, k, stride=2, padding=k // 2))
            cin = c
        self.res = nn.ModuleList(ResBlock(cin, k) for _ in range(arch.enc_res_blocks))

    def forward(self, x):
        for conv in self.convs:
            x = F.relu(conv(x))
        for block in self.res:
            x = block(x)
        return x


class Decoder(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        k = arch.kernel_size
        widths = arch.widths()
        cin = widths[-1]
        self.res = nn.ModuleList(ResBlock(cin, k) for _ in range(arch.dec_res_blocks))
        outs = list(reversed(widths[:-1])) + [1]
        self.convs = nn.ModuleList()
        for c in outs:
            self.convs.append(nn.Conv2d(cin, c, k, padding=k // 2))
            cin = c

    def forward(self, z):
        for block in self.res:
            z = block(z)
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            z = conv(F.interpolate(z, scale_factor=2, mode="nearest"))
            z = torch.sigmoid(z) if i == last else F.relu(z)
        return z


class S2SNet(nn.Module):
    def __init__(self, arch: ArchConfig, seed: int = 0):
        super().__init__()
        self.arch = arch
        self.seed = seed
        self.encoders = nn.ModuleList(Encoder(arch) for _ in range(arch.n_branches))
        self.decoder = Decoder(arch)

    def forward(self, x: torch.Tensor, branch: int = 0) -> torch.Tensor:
        """``x`` is (N, 1, H, W); ``branch`` is zero-based."""
        return self.decoder(self.encoders[branch](x))

    def encoder_params(self, k: int) -> List[torch.nn.Parameter]:
        return list(self.encoders[k].parameters())

    def decoder_params(self) -> List[torch.nn.Parameter]:
        return list(self.decoder.parameters())


INIT_GAIN = 1.0          # uniform bound = INIT_GAIN * sqrt(1 / fan_in)
RES_BRANCH_SCALE = 0.1   # residual blocks start close to the identity


def _init_params(model: S2SNet, seed: int) -> None:
    """Seeded uniform fan-in init; the full He bound sqrt(6/fan_in) stalls desk training."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = INIT_GAIN * math.sqrt(1.0 / fan_in)
                w = torch.rand(module.weight.shape, generator=gen, dtype=torch.float64) * 2 - 1
                module.weight.copy_(w * bound)
                module.bias.zero_()
        for module in model.modules():
            if isinstance(module, ResBlock):
                module.conv2.weight.mul_(RES_BRANCH_SCALE)


def build_model(arch: ArchConfig = DESK_ARCH, seed: int = 0) -> S2SNet:
    model = S2SNet(arch, seed)
    _init_params(model, seed)
    return model


def param_count(model: nn.Module) -> int:
    return int(sum(p.numel() for p in model.parameters()))


def _check_input(h: int, w: int, stride: int):
    if h % stride or w % stride:
        raise ImageError(f"input {w}x{h} not divisible by the network stride {stride}; "
                         f"pad the image (e.g. reflect) to a multiple of {stride}")


def forward(model: S2SNet, img: Image, branch: int = 1) -> Image:
    """Run branch ``branch`` (1-based) on a single image."""
    if not 1 <= branch <= model.arch.n_branches:
        raise ValueError(f"branch must be in 1..{model.arch.n_branches}, got {branch}")
    _check_input(img.height, img.width, model.arch.stride)
    p = next(model.parameters())
    x = torch.tensor(np.array(img.pixels), dtype=p.dtype)[None, None]
    with torch.no_grad():
        y = model(x, branch - 1)
    return Image(y[0, 0].double().numpy().clip(0.0, 1.0), img.spacing)


# ------------------------------------------------------------------ checkpoints

def _header(model: S2SNet) -> dict:
    return {"format": FORMAT_VERSION, "arch": model.arch.to_dict(), "seed": int(model.seed),
            "param_shapes": [list(p.shape) for p in model.parameters()],
            "dtype": "float32-le"}


def checkpoint_bytes(model: S2SNet) -> bytes:
    head = json.dumps(_header(model), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for p in model.parameters():
        buf.write(p.detach().cpu().numpy().astype("<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: S2SNet, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    tmp.replace(path)


def load_checkpoint(path, expect_arch: ArchConfig | None = None) -> S2SNet:
    data = Path(path).read_bytes() if not isinstance(path, (bytes, bytearray)) else bytes(path)
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}; expected magic {MAGIC.decode()!r}")
    (n,) = struct.unpack("<I", data[4:8])
    try:
        head = json.loads(data[8:8 + n].decode("utf-8"))
        arch = ArchConfig.from_dict(head["arch"])
        seed = int(head["seed"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if head.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {head.get('format')}")
    if expect_arch is not None and expect_arch != arch:
        raise CheckpointError(f"checkpoint architecture {arch} does not match expected {expect_arch}")
    model = S2SNet(arch, seed)
    shapes = [list(p.shape) for p in model.parameters()]
    if head.get("param_shapes") != shapes:
        raise CheckpointError("checkpoint parameter shapes disagree with its architecture header")
    body = data[8 + n:]
    expected = 4 * param_count(model)
    if len(body) != expected:
        raise CheckpointError(f"checkpoint payload is {len(body)} bytes, expected {expected}")
    flat = np.frombuffer(body, dtype="<f4")
    off = 0
    with torch.no_grad():
        for p in model.parameters():
            cnt = p.numel()
            p.copy_(torch.from_numpy(flat[off:off + cnt].astype(np.float32).reshape(p.shape)))
            off += cnt
    return model

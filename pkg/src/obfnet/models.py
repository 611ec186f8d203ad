"""Obfuscator and deobfuscator autoencoders.

Both roles share one architecture: a depthwise-separable convolution encoder
(MobileNet-style blocks) mirrored by a decoder that upsamples with nearest
neighbor and ends in a sigmoid so outputs always lie in (0, 1). A width
multiplier scales every stage's channel count for the compute/accuracy sweep.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .core import ImageTensor, StructuralError

MAGIC = b"OBFNET01"
MIN_CHANNELS = 8

ROLE_OBFUSCATOR = "obfuscator"
ROLE_DEOBFUSCATOR = "deobfuscator"


class ConfigurationError(ValueError):
    """The architecture description is internally inconsistent."""


class ModelIOError(RuntimeError):
    """A model file failed an integrity or compatibility check."""


@dataclass(frozen=True)
class Stage:
    """One encoder stage: output channels at width multiplier 1 and its stride."""

    channels: int
    stride: int


# Stem conv followed by depthwise-separable blocks; stride product 8 so the
# default 320x200 input mirrors cleanly through the decoder.
DEFAULT_ENCODER_STAGES = (Stage(32, 2), Stage(64, 2), Stage(128, 2), Stage(256, 1))

DEFAULT_INPUT_HEIGHT = 200
DEFAULT_INPUT_WIDTH = 320


@dataclass(frozen=True)
class AutoencoderSpec:
    width_multiplier: float = 1.0
    encoder_stages: tuple[Stage, ...] = DEFAULT_ENCODER_STAGES
    input_height: int = DEFAULT_INPUT_HEIGHT
    input_width: int = DEFAULT_INPUT_WIDTH

    def __post_init__(self):
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ConfigurationError(
                f"width multiplier must be in (0, 1], got {self.width_multiplier}"
            )
        if not self.encoder_stages:
            raise ConfigurationError("encoder needs at least one stage")
        for st in self.encoder_stages:
            if st.stride not in (1, 2):
                raise ConfigurationError(f"unsupported stride {st.stride}")
            if st.channels < 1:
                raise ConfigurationError("stage channels must be positive")
        sp = self.stride_product
        if self.input_height % sp or self.input_width % sp:
            raise ConfigurationError(
                f"stride product {sp} must divide input "
                f"{self.input_width}x{self.input_height}"
            )

    @property
    def stride_product(self) -> int:
        p = 1
        for st in self.encoder_stages:
            p *= st.stride
        return p

    def scaled_channels(self) -> tuple[int, ...]:
        """Per-stage channel counts after applying the width multiplier."""
        return tuple(
            max(MIN_CHANNELS, round(self.width_multiplier * st.channels))
            for st in self.encoder_stages
        )

    def to_dict(self) -> dict:
        return {
            "width_multiplier": self.width_multiplier,
            "encoder_stages": [[st.channels, st.stride] for st in self.encoder_stages],
            "input_height": self.input_height,
            "input_width": self.input_width,
        }

    @staticmethod
    def from_dict(d: dict) -> "AutoencoderSpec":
        return AutoencoderSpec(
            width_multiplier=d["width_multiplier"],
            encoder_stages=tuple(Stage(c, s) for c, s in d["encoder_stages"]),
            input_height=d["input_height"],
            input_width=d["input_width"],
        )


def _dw_separable(c_in: int, c_out: int, stride: int) -> list[nn.Module]:
    return [
        nn.Conv2d(c_in, c_in, 3, stride=stride, padding=1, groups=c_in, bias=False),
        nn.BatchNorm2d(c_in),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_in, c_out, 1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    ]


class MobileAutoencoder(nn.Module):
    """Encoder/decoder built from an AutoencoderSpec; output shape == input shape."""

    def __init__(self, spec: AutoencoderSpec):
        super().__init__()
        channels = spec.scaled_channels()
        stages = spec.encoder_stages

        enc: list[nn.Module] = [
            nn.Conv2d(3, channels[0], 3, stride=stages[0].stride, padding=1, bias=False),
            nn.BatchNorm2d(channels[0]),
            nn.ReLU(inplace=True),
        ]
        for i in range(1, len(stages)):
            enc.extend(_dw_separable(channels[i - 1], channels[i], stages[i].stride))
        self.encoder = nn.Sequential(*enc)

        dec: list[nn.Module] = []
        for i in range(len(stages) - 1, 0, -1):
            if stages[i].stride == 2:
                dec.append(nn.Upsample(scale_factor=2, mode="nearest"))
            dec.extend(_dw_separable(channels[i], channels[i - 1], 1))
        if stages[0].stride == 2:
            dec.append(nn.Upsample(scale_factor=2, mode="nearest"))
        dec.append(nn.Conv2d(channels[0], 3, 3, padding=1))
        dec.append(nn.Sigmoid())
        self.decoder = nn.Sequential(*dec)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


class ModelHandle:
    """A built autoencoder with its spec and fixed role tag."""

    def __init__(self, module: MobileAutoencoder, spec: AutoencoderSpec, role: str):
        if role not in (ROLE_OBFUSCATOR, ROLE_DEOBFUSCATOR):
            raise ConfigurationError(f"unknown role {role!r}")
        self.module = module
        self._spec = spec
        self._role = role

    @property
    def spec(self) -> AutoencoderSpec:
        return self._spec

    @property
    def role(self) -> str:
        return self._role

    @property
    def mode(self) -> str:
        return "train" if self.module.training else "eval"

    def train(self) -> "ModelHandle":
        self.module.train()
        return self

    def eval(self) -> "ModelHandle":
        self.module.eval()
        return self

    def parameter_checksum(self) -> str:
        """SHA-256 over all parameter bytes; used by freezing-contract checks."""
        h = hashlib.sha256()
        for name, p in sorted(self.module.named_parameters()):
            h.update(name.encode())
            h.update(p.detach().numpy().tobytes())
        return h.hexdigest()


def build_autoencoder(spec: AutoencoderSpec, role: str, seed: int) -> ModelHandle:
    """Construct a model with deterministic parameter initialization."""
    torch.manual_seed(seed)
    module = MobileAutoencoder(spec)
    module.eval()
    return ModelHandle(module, spec, role)


def images_to_tensor(images: list[ImageTensor]) -> torch.Tensor:
    arr = np.stack([im.values for im in images])  # N,H,W,3
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def tensor_to_images(t: torch.Tensor) -> list[ImageTensor]:
    arr = t.detach().permute(0, 2, 3, 1).clamp(0.0, 1.0).numpy()
    return [ImageTensor(a) for a in arr]


def forward(model: ModelHandle, batch: list[ImageTensor]) -> list[ImageTensor]:
    """Run a batch through the model; eval mode is deterministic."""
    spec = model.spec
    for im in batch:
        if im.resolution != (spec.input_height, spec.input_width):
            raise StructuralError(
                f"frame {im.resolution} does not match spec "
                f"({spec.input_height}, {spec.input_width})"
            )
    x = images_to_tensor(batch)
    if model.module.training:
        y = model.module(x)
    else:
        with torch.no_grad():
            y = model.module(x)
    return tensor_to_images(y)


def save_model(model: ModelHandle, path) -> None:
    """Write a checksummed binary artifact: spec, role and parameters."""
    buf = io.BytesIO()
    torch.save(
        {
            "format_version": 1,
            "spec": model.spec.to_dict(),
            "role": model.role,
            "state_dict": model.module.state_dict(),
        },
        buf,
    )
    blob = buf.getvalue()
    digest = hashlib.sha256(blob).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(digest)
        fh.write(blob)


def load_model(path, expected_role: str | None = None) -> ModelHandle:
    """Load a saved model, verifying integrity and (optionally) the role tag."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 32 or raw[: len(MAGIC)] != MAGIC:
        raise ModelIOError(f"{path}: not a model file (bad magic)")
    digest = raw[len(MAGIC) : len(MAGIC) + 32]
    blob = raw[len(MAGIC) + 32 :]
    if hashlib.sha256(blob).digest() != digest:
        raise ModelIOError(f"{path}: checksum mismatch (truncated or corrupt file)")
    payload = torch.load(io.BytesIO(blob), weights_only=True)
    if payload.get("format_version") != 1:
        raise ModelIOError(f"{path}: unsupported format version")
    spec = AutoencoderSpec.from_dict(payload["spec"])
    role = payload["role"]
    if expected_role is not None and role != expected_role:
        raise ModelIOError(
            f"{path}: role mismatch, file contains {role!r}, expected {expected_role!r}"
        )
    module = MobileAutoencoder(spec)
    module.load_state_dict(payload["state_dict"])
    module.eval()
    return ModelHandle(module, spec, role)

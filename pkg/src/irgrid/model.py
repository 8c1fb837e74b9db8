"""Attention-gated U-Net that maps feature stacks to IR-drop maps.

Input is the 12-channel normalized stack; output is a single-channel
nonnegative drop map at the same resolution, in supply-relative units.
A depthwise 2x2 pre-convolution filters each channel independently,
then a four-level encoder/decoder with attention-gated skips does the
heavy lifting.  forward returns the map together with every gate's
attention coefficients so downstream tooling can inspect them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import FormatError, InputError
from .container import read_tensor_stream, write_tensor_stream

CHECKPOINT_MAGIC = "IRCK1"


@dataclass(frozen=True)
class AttUNetConfig:
    in_channels: int = 12
    preconv_kernel: int = 2
    encoder_filters: tuple[int, ...] = (32, 64, 128, 256)
    bottleneck_filters: int = 512
    input_size: int = 512

    def __post_init__(self):
        if len(self.encoder_filters) != 4:
            raise InputError("encoder must have exactly 4 levels")
        if self.input_size % 16 != 0 or self.input_size < 16:
            raise InputError(
                f"input_size {self.input_size} must be a positive multiple of 16")
        if self.in_channels < 1 or self.preconv_kernel < 1:
            raise InputError("channel and kernel counts must be positive")
        if min(self.encoder_filters) < 2:
            raise InputError("encoder filters must be at least 2")


class PreConv(nn.Module):
    """Depthwise 2x2 convolution, one filter per input channel.

    Right/bottom one-sided zero padding keeps spatial dims unchanged.
    """

    def __init__(self, channels: int, kernel: int):
        super().__init__()
        self.pad = kernel - 1
        self.conv = nn.Conv2d(channels, channels, kernel, groups=channels)

    def forward(self, x):
        return F.relu(self.conv(F.pad(x, (0, self.pad, 0, self.pad))))


class DoubleConv(nn.Module):
    """(convolution => [BN] => ReLU) * 2, with optional dropout at the end."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.drop = nn.Dropout(0.0)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        return self.drop(x)


class AttentionGate(nn.Module):
    """Additive attention over a skip connection.

    The gating signal g comes from the next-deeper level; it is
    bilinearly upsampled to the skip's resolution, both inputs are
    linearly mapped to an intermediate width, and a sigmoid over the
    combined response yields per-pixel coefficients that scale the
    skip features.
    """

    def __init__(self, skip_ch: int, gate_ch: int):
        super().__init__()
        inter = max(skip_ch // 2, 1)
        self.theta_x = nn.Conv2d(skip_ch, inter, 1, bias=False)
        self.theta_g = nn.Conv2d(gate_ch, inter, 1, bias=True)
        self.psi = nn.Conv2d(inter, 1, 1, bias=True)

    def coefficients(self, x, g):
        g = F.interpolate(g, size=x.shape[-2:], mode="bilinear",
                          align_corners=False)
        if g.shape[-2:] != x.shape[-2:]:
            raise InputError(
                f"gate signal {tuple(g.shape[-2:])} does not match skip "
                f"{tuple(x.shape[-2:])} after upsampling")
        return torch.sigmoid(self.psi(F.relu(self.theta_x(x) + self.theta_g(g))))

    def coefficients_concat(self, x, g):
        """Same map written as one convolution over the concatenated inputs.

        Splitting that convolution's kernel across the two inputs is
        exactly the two-term sum in coefficients(); this form exists so
        the equivalence is testable.
        """
        g = F.interpolate(g, size=x.shape[-2:], mode="bilinear",
                          align_corners=False)
        weight = torch.cat([self.theta_x.weight, self.theta_g.weight], dim=1)
        combined = F.conv2d(torch.cat([x, g], dim=1), weight,
                            bias=self.theta_g.bias)
        return torch.sigmoid(self.psi(F.relu(combined)))

    def forward(self, x, g):
        alpha = self.coefficients(x, g)
        return x * alpha, alpha


class Up(nn.Module):
    """Bilinear 2x upsampling followed by a 3x3 convolution."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="bilinear",
                              align_corners=False)
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(self.up(x))


class AttUNet(nn.Module):
    def __init__(self, config: AttUNetConfig | None = None):
        super().__init__()
        self.config = config or AttUNetConfig()
        c = self.config
        f1, f2, f3, f4 = c.encoder_filters
        fb = c.bottleneck_filters

        self.preconv = PreConv(c.in_channels, c.preconv_kernel)
        self.enc1 = DoubleConv(c.in_channels, f1)
        self.enc2 = DoubleConv(f1, f2)
        self.enc3 = DoubleConv(f2, f3)
        self.enc4 = DoubleConv(f3, f4)
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = DoubleConv(f4, fb)

        self.gate4 = AttentionGate(f4, fb)
        self.up4 = Up(fb, f4)
        self.dec4 = DoubleConv(2 * f4, f4)
        self.gate3 = AttentionGate(f3, f4)
        self.up3 = Up(f4, f3)
        self.dec3 = DoubleConv(2 * f3, f3)
        self.gate2 = AttentionGate(f2, f3)
        self.up2 = Up(f3, f2)
        self.dec2 = DoubleConv(2 * f2, f2)
        self.gate1 = AttentionGate(f1, f2)
        self.up1 = Up(f2, f1)
        self.dec1 = DoubleConv(2 * f1, f1)
        self.head = nn.Conv2d(f1, 1, 1)
        # start slightly positive so the zero clamp cannot silence every
        # gradient on a freshly initialized model
        nn.init.constant_(self.head.bias, 0.01)

    def set_dropout(self, shallow: float, deep: float):
        """Depth-graded dropout: the bottleneck gets deep, decoder blocks
        interpolate down to shallow at the output end."""
        for p in (shallow, deep):
            if not 0.0 <= p < 1.0:
                raise InputError(f"dropout rate {p!r} outside [0, 1)")
        self.bottleneck.drop.p = deep
        for i, block in enumerate((self.dec1, self.dec2, self.dec3, self.dec4)):
            block.drop.p = shallow + (deep - shallow) * i / 4

    @staticmethod
    def _check_finite(t, where: str):
        if not torch.isfinite(t).all():
            raise InputError(f"non-finite activation in {where}")

    def forward(self, x, clamp: bool = True):
        c = self.config
        if x.ndim != 4 or x.shape[1] != c.in_channels:
            raise InputError(
                f"expected input (n, {c.in_channels}, h, w), got {tuple(x.shape)}")
        if x.shape[-2] % 16 or x.shape[-1] % 16:
            raise InputError(
                f"spatial dims {tuple(x.shape[-2:])} must be multiples of 16")
        self._check_finite(x, "input")

        x = self.preconv(x)
        s1 = self.enc1(x)
        s2 = self.enc2(self.pool(s1))
        s3 = self.enc3(self.pool(s2))
        s4 = self.enc4(self.pool(s3))
        b = self.bottleneck(self.pool(s4))
        self._check_finite(b, "bottleneck")

        attention = {}
        g4, attention["gate4"] = self.gate4(s4, b)
        d4 = self.dec4(torch.cat([g4, self.up4(b)], dim=1))
        g3, attention["gate3"] = self.gate3(s3, d4)
        d3 = self.dec3(torch.cat([g3, self.up3(d4)], dim=1))
        g2, attention["gate2"] = self.gate2(s2, d3)
        d2 = self.dec2(torch.cat([g2, self.up2(d3)], dim=1))
        g1, attention["gate1"] = self.gate1(s1, d2)
        d1 = self.dec1(torch.cat([g1, self.up1(d2)], dim=1))
        out = self.head(d1)
        # the clamp has zero slope below zero: optimizers must see the
        # raw map (clamp=False) or an all-negative state can never recover
        if clamp:
            out = torch.clamp(out, min=0.0)
        self._check_finite(out, "output head")
        return out, attention

    def predict(self, x):
        """Drop map only, eval mode, no autograd."""
        was_training = self.training
        self.eval()
        with torch.no_grad():
            out, _ = self(x)
        if was_training:
            self.train()
        return out

    def layer_summary(self) -> list[dict]:
        """Kernel size and filter count per block, read off the weights."""
        rows = [{"layer": "PreConv",
                 "kernel": tuple(self.preconv.conv.weight.shape[-2:]),
                 "filters": self.preconv.conv.weight.shape[0]}]
        for name, enc in (("C1", self.enc1), ("C2", self.enc2),
                          ("C3", self.enc3), ("C4", self.enc4)):
            rows.append({"layer": name,
                         "kernel": tuple(enc.conv1.weight.shape[-2:]),
                         "filters": enc.conv1.weight.shape[0]})
        rows.append({"layer": "Bottleneck",
                     "kernel": tuple(self.bottleneck.conv1.weight.shape[-2:]),
                     "filters": self.bottleneck.conv1.weight.shape[0]})
        return rows


def save_checkpoint(model: AttUNet, path, phase: str, epoch: int,
                    extra: dict | None = None):
    """Checkpoint file: JSON metadata line, then one tensor record per
    state_dict entry in order.  Integer tensors ride as float32 with
    their torch dtype recorded for exact restoration."""
    state = model.state_dict()
    header = {
        "magic": CHECKPOINT_MAGIC,
        "config": asdict(model.config),
        "phase": phase,
        "epoch": epoch,
        "tensors": list(state.keys()),
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for name, tensor in state.items():
            write_tensor_stream(
                f, tensor.detach().cpu().to(torch.float32).numpy(),
                {"name": name, "torchDtype": str(tensor.dtype)})


def load_checkpoint(path) -> tuple[AttUNet, dict]:
    """Rebuild the model from a checkpoint; returns (model, metadata)."""
    with open(path, "rb") as f:
        first = f.readline()
        try:
            header = json.loads(first.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed checkpoint header: {exc}") from None
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise FormatError(
                f"bad checkpoint magic {header.get('magic')!r}")
        cfg = dict(header["config"])
        cfg["encoder_filters"] = tuple(cfg["encoder_filters"])
        model = AttUNet(AttUNetConfig(**cfg))
        state = {}
        for name in header["tensors"]:
            data, meta = read_tensor_stream(f)
            if meta.get("name") != name:
                raise FormatError(
                    f"tensor order mismatch: expected {name!r}, "
                    f"found {meta.get('name')!r}")
            dtype = getattr(torch, meta["torchDtype"].split(".")[-1])
            state[name] = torch.from_numpy(data).to(dtype)
        if f.read(1):
            raise FormatError("trailing bytes after checkpoint tensors")
    model.load_state_dict(state)
    model.eval()
    return model, header

"""Saliency-driven explanation and grid upsizing.

The predictor is differentiable, so one backward pass from the mean
predicted drop over the hotspot pixels yields a per-channel, per-pixel
sensitivity map.  Ranking the resistance channels by their strongest
sensitivities picks the layer to strengthen; lowering that channel at
its top pixels emulates wire upsizing, and re-predicting measures how
many high-drop pixels the edit removes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import InputError
from .features import CHANNELS, RESISTANCE_CHANNELS, FeatureStack

HOTSPOT_FACTOR = 0.9
UPSIZE_FRACTION = 0.10


@dataclass
class HotspotSet:
    """Pixels at or above dr_th = factor * dr_max, in row-major order."""

    pixels: list[tuple[int, int]]
    dr_max: float
    dr_th: float


@dataclass
class SaliencyStack:
    """Signed gradients of the hotspot mean w.r.t. every input pixel."""

    signed: np.ndarray
    hotspots: HotspotSet

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.signed)


@dataclass
class OptimizationReport:
    contributor_channel: str | None
    chosen_pixels: list[tuple[int, int]]
    high_drop_before: int
    high_drop_after: int
    reduction_percent: float
    baseline: "OptimizationReport | None" = None
    details: dict = field(default_factory=dict)


def select_hotspots(drop_map: np.ndarray,
                    factor: float = HOTSPOT_FACTOR) -> HotspotSet:
    """All pixels within factor of the map maximum.

    The maximum pixel always qualifies.  An all-zero map yields an
    empty, warned-about set since no threshold separates anything.
    """
    arr = np.asarray(drop_map, dtype=float)
    if arr.size == 0:
        raise InputError("empty drop map")
    if not 0 < factor <= 1:
        raise InputError(f"hotspot factor {factor!r} outside (0, 1]")
    dr_max = float(arr.max())
    dr_th = factor * dr_max
    if dr_max <= 0:
        warnings.warn("drop map has no positive values; hotspot set is empty",
                      stacklevel=2)
        return HotspotSet([], dr_max, dr_th)
    pixels = [(int(r), int(c)) for r, c in np.argwhere(arr >= dr_th)]
    return HotspotSet(pixels, dr_max, dr_th)


def _forward_map(model, x: torch.Tensor) -> torch.Tensor:
    out = model(x)
    if isinstance(out, tuple):
        out = out[0]
    return out


def _model_dtype(model) -> torch.dtype | None:
    for p in model.parameters():
        return p.dtype
    for b in model.buffers():
        return b.dtype
    return None


def saliency(model, stack, hotspots: HotspotSet) -> SaliencyStack:
    """Average input gradient over the hotspot pixels, one backward pass.

    Works for any callable module producing (n, 1, s, s) maps, whether
    or not it also returns attention extras.
    """
    if not hotspots.pixels:
        raise InputError("empty hotspot set")
    data = stack.data if isinstance(stack, FeatureStack) else np.asarray(stack)
    dtype = _model_dtype(model) or torch.get_default_dtype()
    x = torch.as_tensor(np.array(data), dtype=dtype).requires_grad_(True)

    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    out = _forward_map(model, x[None])
    rows = torch.tensor([p[0] for p in hotspots.pixels])
    cols = torch.tensor([p[1] for p in hotspots.pixels])
    target = out[0, 0, rows, cols].mean()
    grad = torch.autograd.grad(target, x)[0].detach().numpy()
    if was_training and hasattr(model, "train"):
        model.train()
    return SaliencyStack(np.asarray(grad, dtype=float), hotspots)


def channel_scores(sal: SaliencyStack, k: int,
                   channels: tuple[int, ...] = RESISTANCE_CHANNELS
                   ) -> list[tuple[int, float]]:
    """Each channel with the mean of its k largest saliency magnitudes."""
    if k < 1:
        raise InputError("k must be at least 1")
    if not channels:
        raise InputError("no channels to rank")
    mag = sal.magnitude
    per_channel = mag.shape[-2] * mag.shape[-1]
    if k > per_channel:
        raise InputError(f"k {k} exceeds {per_channel} pixels per channel")
    out = []
    for c in channels:
        if not 0 <= c < mag.shape[0]:
            raise InputError(f"channel {c} out of range")
        flat = mag[c].ravel()
        out.append((c, float(np.partition(flat, -k)[-k:].mean())))
    return out


def rank_contributors(sal: SaliencyStack, k: int,
                      channels: tuple[int, ...] = RESISTANCE_CHANNELS
                      ) -> tuple[int, list[tuple[int, int]]]:
    """Winning channel and its top-k pixels by saliency magnitude.

    Channels are scored by the mean of their k largest magnitudes; the
    first channel in the list wins score ties.  Pixel ties break
    row-major.
    """
    scored = channel_scores(sal, k, channels)
    mag = sal.magnitude
    winner = channels[int(np.argmax([s for _, s in scored]))]

    flat = mag[winner].ravel()
    rows, cols = np.divmod(np.arange(flat.size), mag.shape[-1])
    order = np.lexsort((cols, rows, -flat))[:k]
    return winner, [(int(rows[i]), int(cols[i])) for i in order]


def apply_upsize(stack, channel: int, pixels: list[tuple[int, int]],
                 fraction: float = UPSIZE_FRACTION):
    """Scale the channel down by fraction at the given pixels.

    Lower lumped resistance stands in for wider wires.  Duplicate
    pixels apply once.  Returns a new stack; the input is untouched.
    """
    if not 0 < fraction < 1:
        raise InputError(f"upsize fraction {fraction!r} outside (0, 1)")
    data = (stack.data if isinstance(stack, FeatureStack)
            else np.asarray(stack)).copy()
    if not 0 <= channel < data.shape[0]:
        raise InputError(f"channel {channel} out of range")
    for r, c in pixels:
        if not (0 <= r < data.shape[-2] and 0 <= c < data.shape[-1]):
            raise InputError(f"pixel ({r}, {c}) out of range")
    unique = sorted(set((int(r), int(c)) for r, c in pixels))
    if unique:
        rows = np.array([p[0] for p in unique])
        cols = np.array([p[1] for p in unique])
        data[channel, rows, cols] *= 1.0 - fraction
    if isinstance(stack, FeatureStack):
        return replace(stack, data=data, scales=stack.scales.copy())
    return data


def _predict_map(model, stack) -> np.ndarray:
    data = stack.data if isinstance(stack, FeatureStack) else np.asarray(stack)
    dtype = _model_dtype(model) or torch.get_default_dtype()
    x = torch.as_tensor(np.array(data), dtype=dtype)
    if hasattr(model, "predict"):
        out = model.predict(x[None])
    else:
        with torch.no_grad():
            out = _forward_map(model, x[None])
    return out[0, 0].detach().numpy().astype(float)


def optimize(model, stack, k: int, factor: float = HOTSPOT_FACTOR,
             fraction: float = UPSIZE_FRACTION,
             channels: tuple[int, ...] = RESISTANCE_CHANNELS
             ) -> OptimizationReport:
    """One saliency-guided upsizing round.

    Predict, pick hotspots, rank channels by saliency, downscale the
    winner at its top-k pixels, re-predict, and count how many pixels
    still sit at or above the original threshold.  k = 0 is a no-op
    report.  Reduction can be negative when the edit backfires.
    """
    before_map = _predict_map(model, stack)
    hotspots = select_hotspots(before_map, factor)
    if not hotspots.pixels:
        raise InputError("no hotspots to optimize: predicted map has no "
                         "positive drops")
    before = len(hotspots.pixels)
    if k == 0:
        return OptimizationReport(None, [], before, before, 0.0,
                                  details={"drMax": hotspots.dr_max,
                                           "drTh": hotspots.dr_th})
    sal = saliency(model, stack, hotspots)
    channel, pixels = rank_contributors(sal, k, channels)
    edited = apply_upsize(stack, channel, pixels, fraction)
    after_map = _predict_map(model, edited)
    after = int(np.sum(after_map >= hotspots.dr_th))
    return OptimizationReport(
        CHANNELS[channel], pixels, before, after,
        100.0 * (before - after) / before,
        details={"drMax": hotspots.dr_max, "drTh": hotspots.dr_th})


def baseline_uniform(model, stack, factor: float = HOTSPOT_FACTOR,
                     fraction: float = UPSIZE_FRACTION,
                     channels: tuple[int, ...] = RESISTANCE_CHANNELS
                     ) -> OptimizationReport:
    """Reference edit without saliency: downscale every resistance
    channel at the hotspot coordinates themselves.  Zero hotspots make
    it a no-op report rather than an error."""
    before_map = _predict_map(model, stack)
    hotspots = select_hotspots(before_map, factor)
    before = len(hotspots.pixels)
    if not hotspots.pixels:
        return OptimizationReport(None, [], 0, 0, 0.0,
                                  details={"drMax": hotspots.dr_max,
                                           "drTh": hotspots.dr_th})
    edited = stack
    for channel in channels:
        edited = apply_upsize(edited, channel, hotspots.pixels, fraction)
    after_map = _predict_map(model, edited)
    after = int(np.sum(after_map >= hotspots.dr_th))
    return OptimizationReport(
        None, list(hotspots.pixels), before, after,
        100.0 * (before - after) / before,
        details={"drMax": hotspots.dr_max, "drTh": hotspots.dr_th})

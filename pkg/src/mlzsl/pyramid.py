"""Multi-scale feature fusion: unify spatial sizes, concatenate channels.

Larger feature maps are max-pooled down to the smallest scale in the
pyramid (highlighting local detail), then all scales are stacked along
the channel axis in their declared shallow-to-deep order.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import ShapeError, Tensor, concat, max_pool2d


@dataclass
class FeaturePyramid:
    """Ordered named multi-scale maps plus the unification target size.

    ``target_hw`` is the spatial size of the smallest scale; every other
    scale must be divisible by it so disjoint-window pooling applies.
    """

    scales: list[tuple[str, Tensor]]
    target_hw: tuple[int, int]

    def validate(self) -> None:
        if not self.scales:
            raise ShapeError("feature pyramid has no scales")
        names = [name for name, _ in self.scales]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate scale names: {names}")
        th, tw = self.target_hw
        for name, t in self.scales:
            if t.data.ndim != 3:
                raise ShapeError(f"scale '{name}': expected C x H x W, got {t.shape}")
            _, h, w = t.shape
            if h < th or w < tw or h % th or w % tw:
                raise ShapeError(
                    f"scale '{name}' is {h}x{w}, not divisible down to {th}x{tw}")


def from_arrays(named_maps: list[tuple[str, Tensor]]) -> FeaturePyramid:
    """Build a pyramid whose target is the smallest provided scale."""
    if not named_maps:
        raise ShapeError("feature pyramid has no scales")
    target = min((t.shape[1], t.shape[2]) for _, t in named_maps)
    p = FeaturePyramid(scales=list(named_maps), target_hw=target)
    p.validate()
    return p


def unify_scales(p: FeaturePyramid) -> list[Tensor]:
    """Max-pool every scale to the target size; the target scale passes through."""
    p.validate()
    th, tw = p.target_hw
    out = []
    for _, t in p.scales:
        _, h, w = t.shape
        out.append(t if (h, w) == (th, tw) else max_pool2d(t, th, tw))
    return out


def concat_channels(maps: list[Tensor]) -> Tensor:
    """Stack same-size maps along the channel axis, preserving input order."""
    if not maps:
        raise ShapeError("concat_channels: empty input")
    hw = maps[0].shape[1:]
    for t in maps[1:]:
        if t.shape[1:] != hw:
            raise ShapeError(f"concat_channels: spatial mismatch {t.shape[1:]} vs {hw}")
    return maps[0] if len(maps) == 1 else concat(maps, axis=0)


def fuse(p: FeaturePyramid) -> Tensor:
    return concat_channels(unify_scales(p))

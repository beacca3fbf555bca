"""Per-frame multi-scale feature container shared by the encoder and decoder."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .numkit.tensor import Tensor


@dataclass
class ClipFeatures:
    """Scale ``s`` (1-based) lives at ``scales[s-1]`` as a ``T x H_s*W_s x c``
    tensor.  Scale 1 is the stride-4 map reserved for the mask head."""

    scales: list[Tensor]
    sizes: list[tuple[int, int]]

    def __post_init__(self):
        if len(self.scales) != len(self.sizes):
            raise ValueError("one (H, W) size per scale is required")
        if not self.scales:
            raise ValueError("clip has no scales")
        T, _, c = self.scales[0].shape
        for x, (h, w) in zip(self.scales, self.sizes):
            if x.ndim != 3 or x.shape != (T, h * w, c):
                raise ValueError(f"scale tensor {x.shape} inconsistent with T={T}, {h}x{w}, c={c}")

    @property
    def T(self) -> int:
        return self.scales[0].shape[0]

    @property
    def c(self) -> int:
        return self.scales[0].shape[2]

    @property
    def num_scales(self) -> int:
        return len(self.scales)

    def scale(self, s: int) -> Tensor:
        return self.scales[s - 1]

    def size(self, s: int) -> tuple[int, int]:
        return self.sizes[s - 1]

    def with_scales(self, updates: dict[int, Tensor]) -> "ClipFeatures":
        new = list(self.scales)
        for s, x in updates.items():
            new[s - 1] = x
        return replace(self, scales=new)

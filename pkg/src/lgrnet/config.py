"""Model configuration and its JSON form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


_CHOICES = {
    "scan": ("hilbert", "zigzag"),
    "scan_method": ("parallel", "sequential"),
    "conv_padding": ("causal", "same"),
    "logit_scale": ("head", "full"),
    "grid_orientation": ("queries_rows", "frames_rows"),
}


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters; defaults are the full-scale setting.

    ``n_bar`` is the number of frame bottleneck queries, ``n_hat`` the
    number of temporal (decoder) queries, ``layers`` the depth of both the
    encoder and the decoder.
    """

    c: int = 64
    n_bar: int = 20
    n_hat: int = 10
    t_clip: int = 6
    height: int = 352
    width: int = 352
    num_scales: int = 4
    k: int = 5
    d: int = 2
    heads: int = 8
    layers: int = 3
    c_state: int = 16
    c_rank: int = 0  # 0 -> max(1, c // 16)
    conv_kernel: int = 4
    conv_padding: str = "causal"
    scan: str = "hilbert"
    scan_method: str = "parallel"
    grid_orientation: str = "queries_rows"
    use_cnp: bool = True
    use_hilbert_ss: bool = True
    logit_scale: str = "head"
    gn_groups: int = 8
    ffn_mult: int = 4
    init_std: float = 0.02
    lambda_class: float = 2.0
    lambda_dice: float = 5.0
    lambda_ce: float = 2.0
    logit_clip: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "bool":
                if not isinstance(v, bool):
                    raise ConfigError(f"{f.name} must be a boolean, got {v!r}")
            elif f.type == "int":
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(f"{f.name} must be an integer, got {v!r}")
            elif f.type == "float":
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{f.name} must be a number, got {v!r}")
        for key, allowed in _CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        positive = ("c", "n_bar", "n_hat", "t_clip", "height", "width", "k", "d", "heads",
                    "layers", "c_state", "conv_kernel", "gn_groups", "ffn_mult")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.c_rank < 0:
            raise ConfigError("c_rank must be >= 0")
        if self.num_scales < 2:
            raise ConfigError("num_scales must be >= 2 (scale 1 feeds only the mask head)")
        if self.k % 2 == 0:
            raise ConfigError("k must be odd")
        if self.c % self.heads:
            raise ConfigError(f"c={self.c} not divisible by heads={self.heads}")
        if self.c % self.gn_groups:
            raise ConfigError(f"c={self.c} not divisible by gn_groups={self.gn_groups}")
        if self.conv_padding == "same" and self.conv_kernel % 2 == 0:
            raise ConfigError("'same' conv padding needs an odd conv_kernel")
        div = 2 ** (self.num_scales + 1)
        if self.height % div or self.width % div:
            raise ConfigError(f"frame size {self.height}x{self.width} must be divisible by {div}")

    @property
    def rank(self) -> int:
        return self.c_rank or max(1, self.c // 16)

    @property
    def scale_sizes(self) -> list[tuple[int, int]]:
        """(H, W) of scales 1..S at strides 4, 8, 16, ..."""
        return [(self.height // 2 ** (s + 1), self.width // 2 ** (s + 1))
                for s in range(1, self.num_scales + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(obj)


FULL = ModelConfig()

# Gradient-check scale: 4x4 and 2x2 maps, one encoder and one decoder layer.
MICRO = ModelConfig(c=8, n_bar=4, n_hat=3, t_clip=2, height=16, width=16, num_scales=2,
                    k=3, d=1, heads=2, layers=1, c_state=3, c_rank=2, gn_groups=2, ffn_mult=2)

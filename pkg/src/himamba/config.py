"""Architecture hyperparameters and named presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .errors import ParameterError
from .scan import Direction

__all__ = ["HiMambaConfig", "PRESETS", "preset"]

DEFAULT_CYCLE = (Direction.H, Direction.V, Direction.RH, Direction.RV)

# JSON / weight-file key -> attribute
_JSON_KEYS = {
    "scale": "scale",
    "C": "channels",
    "C_r": "region_channels",
    "n": "region_size",
    "N1": "blocks_per_group",
    "N2": "groups",
    "lambda": "expand",
    "N_state": "state_size",
    "C_h": "ffn_channels",
    "dir_cycle": "dir_cycle",
}


@dataclass(frozen=True)
class HiMambaConfig:
    """Network shape.

    ``blocks_per_group`` blocks form a group and ``groups`` groups form the
    deep body. Block ``i`` of every group scans in direction
    ``dir_cycle[i % len(dir_cycle)]``.
    """

    scale: int = 2
    channels: int = 16
    region_channels: int = 8
    region_size: int = 4
    blocks_per_group: int = 4
    groups: int = 2
    expand: float = 2.0
    state_size: int = 8
    ffn_channels: int = 16
    dir_cycle: tuple = field(default=DEFAULT_CYCLE)

    def __post_init__(self):
        object.__setattr__(self, "dir_cycle", tuple(Direction(d) if not isinstance(d, Direction) else d
                                                    for d in self.dir_cycle))
        if self.scale not in (2, 3, 4):
            raise ParameterError(f"scale must be 2, 3 or 4, got {self.scale}")
        for name in ("channels", "region_channels", "region_size", "blocks_per_group",
                     "state_size", "ffn_channels"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.groups < 0:
            raise ParameterError("groups must be >= 0")
        if not self.expand > 0:
            raise ParameterError("expand must be positive")
        if not self.dir_cycle:
            raise ParameterError("dir_cycle must not be empty")

    def direction(self, block_index):
        return self.dir_cycle[block_index % len(self.dir_cycle)]

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["dir_cycle"] = [x.value for x in self.dir_cycle]
        return {k: d[attr] for k, attr in _JSON_KEYS.items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "λ" in d:
            d["lambda"] = d.pop("λ")
        unknown = set(d) - set(_JSON_KEYS) - set(_JSON_KEYS.values()) - {"preset"}
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        base = PRESETS[d.pop("preset")] if "preset" in d else cls()
        kwargs = {_JSON_KEYS.get(k, k): v for k, v in d.items()}
        return base.replace(**kwargs)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


# Desk-scale presets; they do not correspond to any published model size.
PRESETS = {
    "tiny": HiMambaConfig(channels=16, region_channels=8, blocks_per_group=4, groups=2,
                          state_size=8, ffn_channels=16),
    "mini": HiMambaConfig(channels=32, region_channels=16, blocks_per_group=4, groups=4,
                          state_size=8, ffn_channels=32),
}


def preset(name, **changes):
    return PRESETS[name].replace(**changes)

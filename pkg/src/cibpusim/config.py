"""Structural simulation parameters.

The defaults describe the reference geometry: a 3-skew 8K-entry tagged
PHT, and a 4K-set BTB split into two skews whose tag stores carry 5 extra
tag slots per set on top of the 8 target-backed ways.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .keying import ConfigError, MappingMode

DEFAULT_SEED = 0x5EED
DEFAULT_SECRET = 0xD0_5EC4E7  # stand-in for the device's PUF-derived secret


@dataclass(frozen=True)
class SimConfig:
    pht_index_bits: int = 13
    pht_tag_bits: int = 12
    pht_skews: int = 3
    ghr_bits: int = 16
    btb_index_bits: int = 12   # log2 of the total set count across both skews
    btb_tag_bits: int = 12
    btb_target_bits: int = 48
    btb_ways: int = 8          # target-backed ways per set
    btb_extra_tags: int = 5    # additional tag-only slots per set
    mapping: str = "mixed"     # xor | mixed | ideal
    device_secret: int = DEFAULT_SECRET
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.device_secret == 0:
            raise ConfigError("device_secret must be non-zero")
        if self.btb_index_bits < 1:
            raise ConfigError("btb_index_bits must allow two skews")
        if self.pht_skews < 1:
            raise ConfigError("pht_skews must be at least 1")
        if self.btb_ways < 1 or self.btb_extra_tags < 0:
            raise ConfigError("bad BTB way configuration")
        if self.mapping not in ("xor", "mixed", "ideal"):
            raise ConfigError(f"unknown mapping mode {self.mapping!r}")

    @property
    def mapping_mode(self) -> MappingMode:
        return MappingMode(self.mapping)

    @property
    def pht_entries(self) -> int:
        return 1 << self.pht_index_bits

    @property
    def btb_sets(self) -> int:
        """Total sets across both skews (the bins of the security model)."""
        return 1 << self.btb_index_bits

    @property
    def btb_sets_per_skew(self) -> int:
        return self.btb_sets // 2

    @property
    def btb_set_capacity(self) -> int:
        """Tag slots per set (bin capacity)."""
        return self.btb_ways + self.btb_extra_tags

    @property
    def btb_targets(self) -> int:
        """Target-store entries (the balls); ways x sets, not capacity x sets."""
        return self.btb_sets * self.btb_ways

    def replace(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | None, overrides: dict | None = None) -> SimConfig:
    """Build a SimConfig from a JSON key/value file plus overrides."""
    data: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path}: expected a JSON object")
    known = {f.name for f in fields(SimConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from e

"""Key derivation and the index/content encryption mappings.

Hardware key generation (PUF) and the secure random number generators are
modeled as seeded keyed pseudorandom functions so that every run is exactly
reproducible. All primitives are built on the splitmix64 mixer, which maps
0 to 0 (so a zero key is the identity keystream) and is cheap enough for
hot simulation loops.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class ConfigError(ValueError):
    """Invalid configuration or degenerate input."""


class InvariantError(RuntimeError):
    """Internal structural invariant violated; indicates a simulator bug."""


def mix64(x: int) -> int:
    """splitmix64 finisher; a fixed 64-bit pseudorandom permutation."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64_np(x: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array."""
    x = x.astype(np.uint64, copy=True)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class SplitMix:
    """Deterministic random stream; the model of a hardware RNG."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def randrange(self, n: int) -> int:
        # modulo bias is < 2**-50 for every n used here
        return self.next_u64() % n

    def random(self) -> float:
        return self.next_u64() / 2**64


def fold(value: int, bits: int) -> int:
    """XOR-fold an unsigned value down to `bits` bits."""
    if bits <= 0:
        raise ConfigError(f"fold width must be positive, got {bits}")
    mask = (1 << bits) - 1
    out = 0
    v = value & MASK64
    while v:
        out ^= v & mask
        v >>= bits
    return out


class MappingMode(enum.Enum):
    """How an index is derived from the folded input under a key.

    XOR_FOLD matches the plain xor form of the load-balancing index
    algorithm; MIXED_PERMUTATION is the simulator default, a keyed
    bijection of xor, rotate and odd-multiply rounds; IDEAL_ORACLE is a
    keyed random function and exists so the attack harness matches the
    security model's completely-random-map assumption.
    """

    XOR_FOLD = "xor"
    MIXED_PERMUTATION = "mixed"
    IDEAL_ORACLE = "ideal"


@dataclass(frozen=True)
class KeyBundle:
    """Per-thread keys for every skew of the predictor structures."""

    pht_index_keys: tuple[int, int, int]
    pht_content_keys: tuple[int, int, int]
    btb_index_keys: tuple[int, int]
    btb_content_key: int

    def all_keys(self) -> tuple[int, ...]:
        return (
            *self.pht_index_keys,
            *self.pht_content_keys,
            *self.btb_index_keys,
            self.btb_content_key,
        )


# domain separators for the nine key slots of one thread
_KEY_SLOTS = 9


def derive_keys(thread_id: int, device_secret: int) -> KeyBundle:
    """Derive a thread's key bundle from the device secret (PUF model).

    Pure function: identical inputs always produce identical bundles.
    A zero secret would degenerate every mapping to identity and is
    rejected.
    """
    if device_secret == 0:
        raise ConfigError("device_secret must be non-zero")
    keys = []
    for slot in range(_KEY_SLOTS):
        k = mix64(device_secret ^ mix64((thread_id & MASK64) * GOLDEN + slot + 1))
        while k == 0:
            k = mix64(k + slot + 1)
        keys.append(k)
    return KeyBundle(
        pht_index_keys=(keys[0], keys[1], keys[2]),
        pht_content_keys=(keys[3], keys[4], keys[5]),
        btb_index_keys=(keys[6], keys[7]),
        btb_content_key=keys[8],
    )


def _mixed_rounds(key: int, bits: int) -> tuple[tuple[int, int, int], ...]:
    """Per-round (xor, rotation, odd multiplier) constants for a key."""
    mask = (1 << bits) - 1
    rounds = []
    for r in range(3):
        base = mix64(key + (r + 1) * GOLDEN)
        xor_c = base & mask
        rot = (base >> 24) % bits if bits > 1 else 0
        mul = ((base >> 40) | 1) & mask  # odd => invertible mod 2**bits
        rounds.append((xor_c, rot, mul))
    return tuple(rounds)


def enc_index(pc: int, ghr: int, key: int, index_bits: int, mode: MappingMode) -> int:
    """Map (pc, ghr) to a table index under a key.

    The global history is xor-folded into the folded pc first
    (gshare-style); the keyed mapping then acts on that folded value.
    XOR_FOLD and MIXED_PERMUTATION are bijections of the folded domain
    for any fixed key.
    """
    if index_bits <= 0 or index_bits > 64:
        raise ConfigError(f"index_bits out of range: {index_bits}")
    mask = (1 << index_bits) - 1
    x = fold(pc, index_bits) ^ fold(ghr, index_bits)
    if mode is MappingMode.XOR_FOLD:
        return (x ^ key) & mask
    if mode is MappingMode.IDEAL_ORACLE:
        return mix64(key ^ (x * GOLDEN)) & mask
    for xor_c, rot, mul in _mixed_rounds(key, index_bits):
        x ^= xor_c
        x = ((x << rot) | (x >> (index_bits - rot))) & mask if rot else x
        x = (x * mul) & mask
    return x


def _keystream(key: int, width_bits: int, tweak: int = 0) -> int:
    if width_bits <= 0 or width_bits > 64:
        raise ConfigError(f"content width out of range: {width_bits}")
    # mix64(0) == 0, so a zero key with no tweak is the identity keystream
    return mix64(key ^ (tweak * GOLDEN)) & ((1 << width_bits) - 1)


def enc_content(payload: int, key: int, width_bits: int, tweak: int = 0) -> int:
    """Encrypt a payload of width_bits bits under a keystream."""
    if payload >> width_bits:
        raise ConfigError(f"payload {payload:#x} wider than {width_bits} bits")
    return payload ^ _keystream(key, width_bits, tweak)


def dec_content(cipher: int, key: int, width_bits: int, tweak: int = 0) -> int:
    """Inverse of enc_content (xor keystream is an involution)."""
    if cipher >> width_bits:
        raise ConfigError(f"cipher {cipher:#x} wider than {width_bits} bits")
    return cipher ^ _keystream(key, width_bits, tweak)

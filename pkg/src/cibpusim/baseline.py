"""Conventional set-associative BTB and tagged gshare-style PHT.

These are the unprotected structures the attack harness targets and the
comparison point for trace runs. Indexing and tags are plain folds of the
PC (and global history for the PHT); BTB replacement picks a uniformly
random way once a set is full, so every replacement evicts within the
indexed set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .cipht import counter_step
from .keying import SplitMix, fold


@dataclass
class ConvBtbResult:
    hit: bool
    target: int | None = None
    evicted_way: int | None = None


class ConvBtbState:
    """2**index_bits sets x ways, random replacement."""

    def __init__(self, config: SimConfig, seed: int | None = None):
        self.cfg = config
        self.n_sets = 1 << config.btb_index_bits
        self.ways = config.btb_ways
        self.tags = np.zeros((self.n_sets, self.ways), dtype=np.uint64)
        self.targets = np.zeros((self.n_sets, self.ways), dtype=np.uint64)
        self.valid = np.zeros((self.n_sets, self.ways), dtype=bool)
        self.rng = SplitMix(config.seed if seed is None else seed)
        self.lookups = 0
        self.hits = 0
        self.insertions = 0

    def index(self, pc: int) -> int:
        return fold(pc, self.cfg.btb_index_bits)

    def tag(self, pc: int) -> int:
        return fold(pc >> self.cfg.btb_index_bits, self.cfg.btb_tag_bits)

    def _find(self, s: int, t: int) -> int | None:
        for w in range(self.ways):
            if self.valid[s, w] and int(self.tags[s, w]) == t:
                return w
        return None

    def lookup(self, pc: int) -> ConvBtbResult:
        self.lookups += 1
        s, t = self.index(pc), self.tag(pc)
        w = self._find(s, t)
        if w is None:
            return ConvBtbResult(False)
        self.hits += 1
        return ConvBtbResult(True, int(self.targets[s, w]))

    def access(self, pc: int, target: int = 0) -> ConvBtbResult:
        """Lookup and, on a miss, install (the branch executed)."""
        self.lookups += 1
        s, t = self.index(pc), self.tag(pc)
        w = self._find(s, t)
        if w is not None:
            self.hits += 1
            self.targets[s, w] = target
            return ConvBtbResult(True, target)
        self.insertions += 1
        evicted = None
        for cand in range(self.ways):
            if not self.valid[s, cand]:
                w = cand
                break
        else:
            w = self.rng.randrange(self.ways)
            evicted = w
        self.tags[s, w] = t
        self.targets[s, w] = target
        self.valid[s, w] = True
        return ConvBtbResult(False, None, evicted)


@dataclass
class ConvPhtResult:
    hit: bool
    taken: bool | None = None


class ConvPhtState:
    """Single tagged table of 2-bit counters indexed by pc xor history."""

    def __init__(self, config: SimConfig):
        self.cfg = config
        n = config.pht_entries
        self.tags = np.zeros(n, dtype=np.uint64)
        self.state = np.zeros(n, dtype=np.uint8)
        self.valid = np.zeros(n, dtype=bool)
        self.ghr = 0

    def _slot(self, pc: int) -> tuple[int, int]:
        cfg = self.cfg
        idx = fold(pc, cfg.pht_index_bits) ^ fold(self.ghr, cfg.pht_index_bits)
        tag = fold(pc >> cfg.pht_index_bits, cfg.pht_tag_bits) ^ fold(self.ghr, cfg.pht_tag_bits)
        return idx, tag

    def lookup(self, pc: int) -> ConvPhtResult:
        idx, tag = self._slot(pc)
        if self.valid[idx] and int(self.tags[idx]) == tag:
            return ConvPhtResult(True, int(self.state[idx]) >= 2)
        return ConvPhtResult(False)

    def update(self, pc: int, taken: bool) -> ConvPhtResult:
        idx, tag = self._slot(pc)
        hit = self.valid[idx] and int(self.tags[idx]) == tag
        if hit:
            self.state[idx] = counter_step(int(self.state[idx]), taken)
        else:
            self.tags[idx] = tag
            self.state[idx] = 2 if taken else 1
            self.valid[idx] = True
        self.ghr = ((self.ghr << 1) | int(taken)) & ((1 << self.cfg.ghr_bits) - 1)
        return ConvPhtResult(hit, None)

"""Replicated, encrypted pattern history table.

Entries are replicated into independently keyed skews (three by default).
A lookup counts as a hit only when every skew matches at its own encrypted
index; a miss replaces the targeted entry in all skews, which keeps the
skews logically identical for every live branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .keying import KeyBundle, derive_keys, enc_content, dec_content, enc_index, fold

TAG_TWEAK = 0x7A6
STATE_TWEAK = 0x57A7E


def counter_step(state: int, taken: bool) -> int:
    """2-bit saturating counter update."""
    if taken:
        return min(state + 1, 3)
    return max(state - 1, 0)


@dataclass
class PhtEntry:
    tag_cipher: int
    state_cipher: int
    valid: bool


@dataclass
class PhtLookup:
    hit: bool
    taken: bool | None
    skew_hits: tuple[bool, ...]


@dataclass
class PhtUpdateReport:
    hit: bool
    replaced_valid: int  # valid entries overwritten on the miss path


class CiphtState:
    """Mutable state of one predictor instance; single-owner."""

    def __init__(self, config: SimConfig):
        self.cfg = config
        self.n_skews = config.pht_skews
        n = config.pht_entries
        self.tag_cipher = np.zeros((self.n_skews, n), dtype=np.uint64)
        self.state_cipher = np.zeros((self.n_skews, n), dtype=np.uint8)
        self.valid = np.zeros((self.n_skews, n), dtype=bool)
        self.ghr = 0
        self._keys: dict[int, KeyBundle] = {}

    def keys_for(self, tid: int) -> KeyBundle:
        kb = self._keys.get(tid)
        if kb is None:
            kb = derive_keys(tid, self.cfg.device_secret)
            self._keys[tid] = kb
        return kb

    def _skew_index_key(self, kb: KeyBundle, skew: int) -> int:
        keys = kb.pht_index_keys
        return keys[skew % len(keys)] ^ (skew * 0x9E37) if skew >= len(keys) else keys[skew]

    def _skew_content_key(self, kb: KeyBundle, skew: int) -> int:
        keys = kb.pht_content_keys
        return keys[skew % len(keys)] ^ (skew * 0x79B9) if skew >= len(keys) else keys[skew]

    def _slot(self, pc: int, tid: int, skew: int) -> tuple[int, int, int]:
        """(index, tag plaintext, expected tag cipher) for one skew."""
        cfg = self.cfg
        kb = self.keys_for(tid)
        idx = enc_index(pc, self.ghr, self._skew_index_key(kb, skew),
                        cfg.pht_index_bits, cfg.mapping_mode)
        tag_plain = fold(pc >> cfg.pht_index_bits, cfg.pht_tag_bits) ^ fold(self.ghr, cfg.pht_tag_bits)
        tag_c = enc_content(tag_plain, self._skew_content_key(kb, skew),
                            cfg.pht_tag_bits, TAG_TWEAK)
        return idx, tag_plain, tag_c

    def _state_tweak(self, pc: int, ghr: int) -> int:
        # the state keystream is pc-local (keys derive from thread and pc),
        # so a colliding line read through another context decodes freshly
        return STATE_TWEAK ^ pc ^ (ghr << 48)

    def entry(self, skew: int, idx: int) -> PhtEntry:
        return PhtEntry(int(self.tag_cipher[skew, idx]),
                        int(self.state_cipher[skew, idx]),
                        bool(self.valid[skew, idx]))

    def decoded_state(self, tid: int, skew: int, idx: int, pc: int,
                      ghr: int | None = None) -> int:
        kb = self.keys_for(tid)
        return dec_content(int(self.state_cipher[skew, idx]),
                           self._skew_content_key(kb, skew), 2,
                           self._state_tweak(pc, self.ghr if ghr is None else ghr))

    def lookup(self, pc: int, tid: int) -> PhtLookup:
        """Hit iff the encrypted tag matches in every skew."""
        skew_hits = []
        slots = []
        for s in range(self.n_skews):
            idx, tag_plain, tag_c = self._slot(pc, tid, s)
            slots.append((idx, tag_plain))
            skew_hits.append(bool(self.valid[s, idx]) and int(self.tag_cipher[s, idx]) == tag_c)
        hit = all(skew_hits)
        taken = None
        if hit:
            # state is read from skew 0; the skews hold identical plaintext
            taken = self.decoded_state(tid, 0, slots[0][0], pc) >= 2
        return PhtLookup(hit, taken, tuple(skew_hits))

    def update(self, pc: int, tid: int, taken: bool) -> PhtUpdateReport:
        """Step counters on a hit; replace in every skew on a miss.

        A partial match (some but not all skews) is treated as a miss and
        fully replaced, which restores replication coherence.
        """
        kb = self.keys_for(tid)
        slots = []
        hits = []
        for s in range(self.n_skews):
            idx, tag_plain, tag_c = self._slot(pc, tid, s)
            slots.append((idx, tag_plain, tag_c))
            hits.append(bool(self.valid[s, idx]) and int(self.tag_cipher[s, idx]) == tag_c)
        hit = all(hits)
        replaced = 0
        if hit:
            idx0 = slots[0][0]
            cur = self.decoded_state(tid, 0, idx0, pc)
            new = counter_step(cur, taken)
            for s in range(self.n_skews):
                idx = slots[s][0]
                self.state_cipher[s, idx] = enc_content(
                    new, self._skew_content_key(kb, s), 2,
                    self._state_tweak(pc, self.ghr))
        else:
            init = 2 if taken else 1  # weakly biased toward the resolving outcome
            for s in range(self.n_skews):
                idx, tag_plain, tag_c = slots[s]
                replaced += int(self.valid[s, idx])
                self.tag_cipher[s, idx] = tag_c
                self.state_cipher[s, idx] = enc_content(
                    init, self._skew_content_key(kb, s), 2,
                    self._state_tweak(pc, self.ghr))
                self.valid[s, idx] = True
        self.ghr = ((self.ghr << 1) | int(taken)) & ((1 << self.cfg.ghr_bits) - 1)
        return PhtUpdateReport(hit, replaced)

    def invalidate_slots(self, pc: int, tid: int) -> None:
        """Harness support: clear the cells (pc, tid) maps to in every skew."""
        for s in range(self.n_skews):
            idx, _, _ = self._slot(pc, tid, s)
            self.valid[s, idx] = False

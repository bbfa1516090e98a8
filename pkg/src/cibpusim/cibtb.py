"""Decoupled-tag-store BTB with two skews and load-balancing policies.

Tag slots outnumber target slots: each set carries extra tag-only ways, and
tags link to a shared target pool through forward pointers (fptr) with
backward pointers (rptr) closing the cycle. Misses index one candidate set
per skew and fill the less-loaded one; once the target pool is exhausted,
replacement picks two random pool slots and evicts the one whose owning set
is fuller. A displacement inside the newly indexed set itself (both
candidate sets full) is the dangerous-eviction event the security analysis
bounds; everything else is invisible to a set-probing attacker.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .keying import (InvariantError, KeyBundle, SplitMix, derive_keys,
                     dec_content, enc_content, enc_index, fold)

BTB_TAG_TWEAK = 0xB7B
BTB_TARGET_TWEAK = 0x7A26E7


class EvictionKind(enum.Enum):
    NONE = "none"
    SE = "se"    # a branch outside the indexed set was displaced
    DE = "de"    # a valid tag inside the indexed set was displaced


@dataclass
class BtbCounters:
    lookups: int = 0
    hits: int = 0
    misses: int = 0
    insertions: int = 0
    se_count: int = 0
    de_count: int = 0


@dataclass
class BtbLookup:
    hit: bool
    target: int | None
    chosen_set: tuple[int, int] | None  # (skew, set index) on a miss


class CibtbState:
    """Mutable BTB instance; single-owner, deterministic under its seed."""

    def __init__(self, config: SimConfig, seed: int | None = None):
        self.cfg = config
        s = config.btb_sets_per_skew
        c = config.btb_set_capacity
        self.sets_per_skew = s
        self.capacity = c
        self.n_targets = config.btb_targets
        self.index_bits = config.btb_index_bits - 1  # per-skew index width

        self.tag_cipher = np.zeros((2, s, c), dtype=np.uint64)
        self.tag_valid = np.zeros((2, s, c), dtype=np.uint8)
        self.fptr = np.full((2, s, c), -1, dtype=np.int64)
        self.valid_count = np.zeros((2, s), dtype=np.int64)

        self.target_cipher = np.zeros(self.n_targets, dtype=np.uint64)
        self.rptr = np.full(self.n_targets, -1, dtype=np.int64)
        self.live = np.zeros(self.n_targets, dtype=np.uint8)
        # free slots kept as a stack; initially every target slot is free
        self.free_slots = np.arange(self.n_targets - 1, -1, -1, dtype=np.int64)
        self.free_count = self.n_targets

        self.rng = SplitMix(config.seed if seed is None else seed)
        self.counters = BtbCounters()
        self._keys: dict[int, KeyBundle] = {}

    # -- key and address helpers ------------------------------------------

    def keys_for(self, tid: int) -> KeyBundle:
        kb = self._keys.get(tid)
        if kb is None:
            kb = derive_keys(tid, self.cfg.device_secret)
            self._keys[tid] = kb
        return kb

    def candidate_sets(self, pc: int, tid: int) -> tuple[int, int]:
        kb = self.keys_for(tid)
        mode = self.cfg.mapping_mode
        i0 = enc_index(pc, 0, kb.btb_index_keys[0], self.index_bits, mode)
        i1 = enc_index(pc, 0, kb.btb_index_keys[1], self.index_bits, mode)
        return i0, i1

    def tag_for(self, pc: int, tid: int) -> int:
        kb = self.keys_for(tid)
        plain = fold(pc, self.cfg.btb_tag_bits)
        return enc_content(plain, kb.btb_content_key, self.cfg.btb_tag_bits, BTB_TAG_TWEAK)

    def _target_tweak(self, pc: int) -> int:
        # target keystream is pc-local (keys derive from thread and pc), so
        # a hit through another thread's colliding tag decodes freshly
        return BTB_TARGET_TWEAK ^ pc

    def flat_pos(self, skew: int, set_idx: int, way: int) -> int:
        return (skew * self.sets_per_skew + set_idx) * self.capacity + way

    def unflatten(self, pos: int) -> tuple[int, int, int]:
        way = pos % self.capacity
        rest = pos // self.capacity
        return rest // self.sets_per_skew, rest % self.sets_per_skew, way

    # -- operations --------------------------------------------------------

    def lookup(self, pc: int, tid: int) -> BtbLookup:
        """Probe both candidate sets; on a miss pick the less-loaded one."""
        self.counters.lookups += 1
        i0, i1 = self.candidate_sets(pc, tid)
        tag_c = self.tag_for(pc, tid)
        for skew, set_idx in ((0, i0), (1, i1)):
            for way in range(self.capacity):
                if self.tag_valid[skew, set_idx, way] and int(self.tag_cipher[skew, set_idx, way]) == tag_c:
                    slot = int(self.fptr[skew, set_idx, way])
                    if slot < 0 or not self.live[slot] or int(self.rptr[slot]) != self.flat_pos(skew, set_idx, way):
                        raise InvariantError(
                            f"dangling fptr at skew {skew} set {set_idx} way {way}")
                    kb = self.keys_for(tid)
                    target = dec_content(int(self.target_cipher[slot]), kb.btb_content_key,
                                         self.cfg.btb_target_bits, self._target_tweak(pc))
                    self.counters.hits += 1
                    return BtbLookup(True, target, None)
        self.counters.misses += 1
        n0 = int(self.valid_count[0, i0])
        n1 = int(self.valid_count[1, i1])
        chosen = (0, i0) if n0 <= n1 else (1, i1)
        return BtbLookup(False, None, chosen)

    def invalidate_via_rptr(self, slot: int) -> None:
        """Evict the ball in `slot`: unlink its tag and free the slot."""
        if slot < 0 or slot >= self.n_targets or not self.live[slot]:
            raise InvariantError(f"invalidate of non-live target slot {slot}")
        pos = int(self.rptr[slot])
        if pos < 0:
            raise InvariantError(f"live target slot {slot} has nil rptr")
        skew, set_idx, way = self.unflatten(pos)
        if not self.tag_valid[skew, set_idx, way] or int(self.fptr[skew, set_idx, way]) != slot:
            raise InvariantError(f"rptr of slot {slot} does not point back")
        self.tag_valid[skew, set_idx, way] = 0
        self.fptr[skew, set_idx, way] = -1
        self.valid_count[skew, set_idx] -= 1
        self.live[slot] = 0
        self.rptr[slot] = -1
        self.free_slots[self.free_count] = slot
        self.free_count += 1

    def insert(self, pc: int, tid: int, target: int, chosen_set: tuple[int, int]) -> EvictionKind:
        """Install a missed branch into chosen_set per the replacement policy."""
        skew, set_idx = chosen_set
        globally_evicted = False
        if self.free_count > 0:
            self.free_count -= 1
            slot = int(self.free_slots[self.free_count])
        else:
            r0 = self.rng.randrange(self.n_targets)
            r1 = self.rng.randrange(self.n_targets)
            m0 = self._owner_load(r0)
            m1 = self._owner_load(r1)
            victim = r0 if m0 >= m1 else r1
            self.invalidate_via_rptr(victim)
            self.free_count -= 1
            slot = int(self.free_slots[self.free_count])
            globally_evicted = True

        way = -1
        for w in range(self.capacity):
            if not self.tag_valid[skew, set_idx, w]:
                way = w
                break
        if way >= 0:
            kind = EvictionKind.SE if globally_evicted else EvictionKind.NONE
            self.valid_count[skew, set_idx] += 1
        else:
            # chosen set entirely valid: displace a random tag of this set
            way = self.rng.randrange(self.capacity)
            displaced = int(self.fptr[skew, set_idx, way])
            if displaced < 0 or not self.live[displaced]:
                raise InvariantError("valid tag without live target")
            self.live[displaced] = 0
            self.rptr[displaced] = -1
            self.free_slots[self.free_count] = displaced
            self.free_count += 1
            kind = EvictionKind.DE

        kb = self.keys_for(tid)
        self.tag_cipher[skew, set_idx, way] = self.tag_for(pc, tid)
        self.tag_valid[skew, set_idx, way] = 1
        self.fptr[skew, set_idx, way] = slot
        self.target_cipher[slot] = enc_content(target, kb.btb_content_key,
                                               self.cfg.btb_target_bits, self._target_tweak(pc))
        self.rptr[slot] = self.flat_pos(skew, set_idx, way)
        self.live[slot] = 1

        self.counters.insertions += 1
        if kind is EvictionKind.SE:
            self.counters.se_count += 1
        elif kind is EvictionKind.DE:
            self.counters.de_count += 1
        return kind

    def access(self, pc: int, tid: int, target: int) -> tuple[BtbLookup, EvictionKind]:
        """Lookup followed by install on miss; the common driver path."""
        res = self.lookup(pc, tid)
        if res.hit:
            return res, EvictionKind.NONE
        return res, self.insert(pc, tid, target, res.chosen_set)

    def _owner_load(self, slot: int) -> int:
        """Valid-tag count of the set owning the ball in `slot`."""
        if not self.live[slot]:
            raise InvariantError(f"replacement candidate {slot} is not live")
        pos = int(self.rptr[slot])
        skew, set_idx, _ = self.unflatten(pos)
        return int(self.valid_count[skew, set_idx])

    def metrics(self) -> BtbCounters:
        return BtbCounters(**vars(self.counters))

    def insert_storm(self, n_steps: int, pc_seed: int, tid: int,
                     pc_bits: int = 48) -> int | None:
        """Drive n_steps fresh-PC accesses through the compiled kernel.

        State afterwards is exactly as if the same accesses had gone through
        lookup/insert one by one (same PRNG stream, same placement).
        Returns the insertion ordinal of the first dangerous eviction seen
        in this storm, if any.
        """
        from ._kernels import btb_storm_kernel
        from .keying import _keystream, _mixed_rounds

        kb = self.keys_for(tid)
        cfg = self.cfg
        mode = {"xor": 0, "mixed": 1, "ideal": 2}[cfg.mapping]
        rx = np.zeros((2, 3), np.uint64)
        rr = np.zeros((2, 3), np.uint64)
        rm = np.ones((2, 3), np.uint64)
        if mode == 1:
            for s, key in enumerate(kb.btb_index_keys):
                for r, (xc, rot, mul) in enumerate(_mixed_rounds(key, self.index_bits)):
                    rx[s, r] = xc
                    rr[s, r] = rot
                    rm[s, r] = mul
        ks_tag = _keystream(kb.btb_content_key, cfg.btb_tag_bits, BTB_TAG_TWEAK)
        rng_state = np.array([self.rng.state], dtype=np.uint64)
        misc = np.array([self.free_count, -1], dtype=np.int64)
        c = self.counters
        counters = np.array([c.lookups, c.hits, c.misses, c.insertions,
                             c.se_count, c.de_count], dtype=np.int64)
        btb_storm_kernel(
            n_steps, np.uint64(pc_seed), pc_bits,
            self.tag_cipher, self.tag_valid, self.fptr, self.valid_count,
            self.target_cipher, self.rptr, self.live, self.free_slots,
            self.index_bits, cfg.btb_tag_bits, cfg.btb_target_bits, mode,
            np.uint64(kb.btb_index_keys[0]), np.uint64(kb.btb_index_keys[1]),
            np.uint64(ks_tag), np.uint64(kb.btb_content_key),
            np.uint64(BTB_TARGET_TWEAK),
            rx, rr, rm, rng_state, misc, counters)
        self.rng.state = int(rng_state[0])
        self.free_count = int(misc[0])
        self.counters = BtbCounters(*(int(x) for x in counters))
        first_de = int(misc[1])
        return first_de if first_de >= 0 else None

    # -- validation helpers -------------------------------------------------

    def occupancy_histogram(self) -> np.ndarray:
        """Census of valid-tag counts over all sets of both skews."""
        hist = np.zeros(self.capacity + 1, dtype=np.int64)
        flat = self.valid_count.ravel()
        for v in flat:
            hist[v] += 1
        return hist

    def audit(self) -> int:
        """Full pointer-bijection walk; raises on the first violation.

        Returns the number of live target slots (== valid tags) on success.
        """
        live_slots = set()
        for slot in range(self.n_targets):
            if self.live[slot]:
                pos = int(self.rptr[slot])
                if pos < 0:
                    raise InvariantError(f"live slot {slot} with nil rptr")
                skew, set_idx, way = self.unflatten(pos)
                if not self.tag_valid[skew, set_idx, way]:
                    raise InvariantError(f"slot {slot} rptr -> invalid tag")
                if int(self.fptr[skew, set_idx, way]) != slot:
                    raise InvariantError(f"slot {slot} fptr/rptr mismatch")
                live_slots.add(slot)
            elif int(self.rptr[slot]) != -1:
                raise InvariantError(f"dead slot {slot} with rptr set")
        seen_tags = 0
        for skew in range(2):
            for set_idx in range(self.sets_per_skew):
                count = 0
                for way in range(self.capacity):
                    if self.tag_valid[skew, set_idx, way]:
                        count += 1
                        slot = int(self.fptr[skew, set_idx, way])
                        if slot not in live_slots:
                            raise InvariantError(
                                f"valid tag ({skew},{set_idx},{way}) -> dead slot {slot}")
                    elif int(self.fptr[skew, set_idx, way]) != -1:
                        raise InvariantError(
                            f"invalid tag ({skew},{set_idx},{way}) with fptr set")
                if count != int(self.valid_count[skew, set_idx]):
                    raise InvariantError(
                        f"valid_count drift at ({skew},{set_idx}): {count} != "
                        f"{int(self.valid_count[skew, set_idx])}")
                if count > self.capacity:
                    raise InvariantError("set occupancy exceeds capacity")
                seen_tags += count
        if seen_tags != len(live_slots):
            raise InvariantError("tag/target count mismatch")
        free = set(int(s) for s in self.free_slots[:self.free_count])
        if free & live_slots:
            raise InvariantError("free list contains live slots")
        if len(free) + len(live_slots) != self.n_targets:
            raise InvariantError("free list and live slots do not partition the pool")
        return len(live_slots)

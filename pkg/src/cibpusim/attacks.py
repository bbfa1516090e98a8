"""Executable attacker strategies against the modeled predictors.

Three attacks are driven at desk scale: reuse attacks against the
encrypted PHT/BTB at reduced widths (where the expected cost is Monte
Carlo measurable), group-elimination eviction-set construction against the
conventional BTB, and a random-PC insertion storm against the protected
BTB that counts dangerous evictions.

Reuse trials are evaluated through vectorized closed forms of the exact
mechanism arithmetic (same keyed maps, same keystreams); every sampled
success is replayed against the real structure as a cross-check.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .baseline import ConvBtbState
from .cibtb import BTB_TAG_TWEAK, BTB_TARGET_TWEAK, CibtbState
from .cipht import CiphtState, TAG_TWEAK, STATE_TWEAK
from .config import SimConfig
from .keying import (ConfigError, GOLDEN, SplitMix, mix64, mix64_np,
                     _keystream)

U64 = np.uint64


class AttackKind(enum.Enum):
    REUSE_PHT = "reuse-pht"
    REUSE_BTB = "reuse-btb"
    GEM_EVICTION = "gem"
    DE_PROBE = "de-probe"


@dataclass
class AttackScenario:
    kind: AttackKind
    config: SimConfig
    trial_count: int = 1000
    seed: int = 1
    budget: int = 1_000_000

    def __post_init__(self):
        if self.trial_count < 1 or self.budget < 0:
            raise ConfigError("bad scenario parameters")


@dataclass
class AttackResult:
    samples: list[int]
    successes: int
    trials: int
    total_accesses: int

    @property
    def mean(self) -> float:
        """Mean cost over successful trials only."""
        if not self.samples:
            return math.nan
        return float(np.mean(self.samples))

    @property
    def std(self) -> float:
        if not self.samples:
            return math.nan
        return float(np.std(self.samples))


def expected_reuse_cost(scenario: AttackScenario) -> int:
    """Analytic expected attempts for the scenario's geometry."""
    cfg = scenario.config
    if scenario.kind is AttackKind.REUSE_PHT:
        per_skew = cfg.pht_index_bits + cfg.pht_tag_bits + 2
        return (1 << per_skew) ** cfg.pht_skews
    if scenario.kind is AttackKind.REUSE_BTB:
        return 1 << ((cfg.btb_index_bits - 1) + cfg.btb_tag_bits + cfg.btb_target_bits)
    raise ConfigError("not a reuse scenario")


def _check_budget(scenario: AttackScenario) -> None:
    expected = expected_reuse_cost(scenario)
    if expected * 4 > scenario.budget:
        raise ConfigError(
            f"expected cost {expected:.3g} per trial exceeds the budget "
            f"{scenario.budget}; use the analytic estimate instead")


def simulate_reuse(scenario: AttackScenario) -> AttackResult:
    """Reuse-attack Monte Carlo at reduced widths.

    The victim thread installs one entry; the attacker issues branches at
    fresh PCs until it observes a hit whose decrypted content is
    consistent with the victim's entry. The per-attempt success chance is
    geometric, so the sample mean estimates the analytic attempt count.
    """
    if scenario.kind is AttackKind.REUSE_PHT:
        return _reuse_pht(scenario)
    if scenario.kind is AttackKind.REUSE_BTB:
        return _reuse_btb(scenario)
    raise ConfigError(f"simulate_reuse cannot run {scenario.kind}")


_CHUNK = 1 << 14


def _ks2_np(key: int, tweaks: np.ndarray) -> np.ndarray:
    """Vectorized 2-bit content keystream at the given tweaks."""
    return mix64_np(U64(key) ^ (tweaks * U64(GOLDEN))) & U64(3)


def _reuse_pht(scenario: AttackScenario) -> AttackResult:
    cfg = scenario.config
    _check_budget(scenario)
    rng = SplitMix(scenario.seed)
    victim_tid, attacker_tid = 0, 1
    state = CiphtState(cfg)
    kb_v = state.keys_for(victim_tid)
    kb_a = state.keys_for(attacker_tid)
    ibits, tbits = cfg.pht_index_bits, cfg.pht_tag_bits
    imask = U64((1 << ibits) - 1)

    samples: list[int] = []
    successes = 0
    total = 0
    verified = False
    for _ in range(scenario.trial_count):
        pc_v = rng.next_u64() & ((1 << 48) - 1)
        state.invalidate_slots(pc_v, victim_tid)
        install_ghr = state.ghr
        state.update(pc_v, victim_tid, taken=True)
        # victim entry coordinates (install-time history), one per skew
        live_ghr = state.ghr
        state.ghr = install_ghr
        v_idx = np.empty(cfg.pht_skews, dtype=np.uint64)
        v_tagc = np.empty(cfg.pht_skews, dtype=np.uint64)
        v_ks2 = np.empty(cfg.pht_skews, dtype=np.uint64)
        for s in range(cfg.pht_skews):
            idx, tag_plain, tag_c = state._slot(pc_v, victim_tid, s)
            v_idx[s] = idx
            v_tagc[s] = tag_c
            tw = np.array([state._state_tweak(pc_v, install_ghr)], dtype=np.uint64)
            v_ks2[s] = _ks2_np(state._skew_content_key(kb_v, s), tw)[0]
        state.ghr = live_ghr
        ghr = U64(state.ghr)
        ghr_ifold = _fold_np(np.array([ghr]), ibits)[0]
        ghr_tfold = _fold_np(np.array([ghr]), tbits)[0]

        attempts = 0
        found = None
        base = rng.next_u64()
        while attempts < scenario.budget and found is None:
            n = min(_CHUNK, scenario.budget - attempts)
            pcs = mix64_np(U64(base) + (np.arange(attempts + 1, attempts + n + 1, dtype=np.uint64)) * U64(GOLDEN)) & U64((1 << 48) - 1)
            ok = np.ones(n, dtype=bool)
            for s in range(cfg.pht_skews):
                ikey = state._skew_index_key(kb_a, s)
                ckey = state._skew_content_key(kb_a, s)
                idx = _enc_index_np(pcs, ghr_ifold, ikey, ibits, cfg.mapping)
                tag_plain = _fold_np(pcs >> U64(ibits), tbits) ^ ghr_tfold
                ks_tag = U64(_keystream(ckey, tbits, TAG_TWEAK))
                tag_c = tag_plain ^ ks_tag
                tw = U64(STATE_TWEAK) ^ pcs ^ (ghr << U64(48))
                ks2 = _ks2_np(ckey, tw)
                ok &= (idx == v_idx[s]) & (tag_c == v_tagc[s]) & (ks2 == v_ks2[s])
                if not ok.any():
                    break
            hits = np.nonzero(ok)[0]
            if hits.size:
                found = attempts + int(hits[0]) + 1
                pc_hit = int(pcs[hits[0]])
            attempts += n
        total += found if found is not None else scenario.budget
        if found is not None:
            successes += 1
            samples.append(found)
            if not verified:
                # replay one sampled success through the real structure
                res = state.lookup(pc_hit, attacker_tid)
                if not res.hit:
                    raise ConfigError("vectorized reuse model diverged from the mechanism")
                verified = True
    return AttackResult(samples, successes, scenario.trial_count, total)


def _reuse_btb(scenario: AttackScenario) -> AttackResult:
    cfg = scenario.config
    _check_budget(scenario)
    rng = SplitMix(scenario.seed)
    victim_tid, attacker_tid = 0, 1
    state = CibtbState(cfg)
    kb_v = state.keys_for(victim_tid)
    kb_a = state.keys_for(attacker_tid)
    ibits = state.index_bits
    tbits, nbits = cfg.btb_tag_bits, cfg.btb_target_bits

    samples: list[int] = []
    successes = 0
    total = 0
    verified = False
    for _ in range(scenario.trial_count):
        pc_v = rng.next_u64() & ((1 << 48) - 1)
        target_v = rng.next_u64() & ((1 << nbits) - 1)
        look = state.lookup(pc_v, victim_tid)
        if look.hit:
            continue  # fresh 48-bit pc collided with an older entry; skip
        state.insert(pc_v, victim_tid, target_v, look.chosen_set)
        v_skew, v_set = look.chosen_set
        v_tagc = U64(state.tag_for(pc_v, victim_tid))
        # stored target cipher under the victim's tag-local keystream
        tgt_cipher = U64(target_v ^ _keystream(kb_v.btb_content_key, nbits,
                                               state._target_tweak(pc_v)))

        a_ikey = kb_a.btb_index_keys[v_skew]
        a_ckey = kb_a.btb_content_key
        ks_tag_a = U64(_keystream(a_ckey, tbits, BTB_TAG_TWEAK))

        attempts = 0
        found = None
        base = rng.next_u64()
        while attempts < scenario.budget and found is None:
            n = min(_CHUNK, scenario.budget - attempts)
            pcs = mix64_np(U64(base) + np.arange(attempts + 1, attempts + n + 1, dtype=np.uint64) * U64(GOLDEN)) & U64((1 << 48) - 1)
            idx = _enc_index_np(pcs, U64(0), a_ikey, ibits, cfg.mapping)
            tag_plain = _fold_np(pcs, tbits)
            tag_c = tag_plain ^ ks_tag_a
            tw = U64(BTB_TARGET_TWEAK) ^ pcs
            ks_t = mix64_np(U64(a_ckey) ^ tw * U64(GOLDEN)) & U64((1 << nbits) - 1)
            dec = tgt_cipher ^ ks_t
            ok = (idx == U64(v_set)) & (tag_c == v_tagc) & (dec == U64(target_v))
            hits = np.nonzero(ok)[0]
            if hits.size:
                found = attempts + int(hits[0]) + 1
                pc_hit = int(pcs[hits[0]])
            attempts += n
        total += found if found is not None else scenario.budget
        if found is not None:
            successes += 1
            samples.append(found)
            if not verified:
                res = state.lookup(pc_hit, attacker_tid)
                if not (res.hit and res.target == target_v):
                    raise ConfigError("vectorized reuse model diverged from the mechanism")
                verified = True
        # remove the victim's (only) entry so trials stay independent
        ways = np.nonzero(state.tag_valid[v_skew, v_set])[0]
        state.invalidate_via_rptr(int(state.fptr[v_skew, v_set, int(ways[0])]))
    return AttackResult(samples, successes, scenario.trial_count, total)


def _fold_np(v: np.ndarray, bits: int) -> np.ndarray:
    mask = U64((1 << bits) - 1)
    out = np.zeros_like(v)
    v = v.copy()
    while v.any():
        out ^= v & mask
        v >>= U64(bits)
    return out


def _enc_index_np(pcs: np.ndarray, ghr_fold: np.uint64, key: int, bits: int,
                  mapping: str) -> np.ndarray:
    """Vectorized twin of keying.enc_index for a fixed folded history."""
    mask = U64((1 << bits) - 1)
    x = _fold_np(pcs, bits) ^ ghr_fold
    if mapping == "xor":
        return (x ^ U64(key)) & mask
    if mapping == "ideal":
        return mix64_np(U64(key) ^ x * U64(GOLDEN)) & mask
    from .keying import _mixed_rounds
    for xor_c, rot, mul in _mixed_rounds(key, bits):
        x = (x ^ U64(xor_c)) & mask
        if rot:
            x = ((x << U64(rot)) | (x >> U64(bits - rot))) & mask
        x = (x * U64(mul)) & mask
    return x


# -- group elimination against the conventional BTB ---------------------------

@dataclass
class GemResult:
    eviction_set: list[int]
    accesses: int
    insertions: int
    attempts: int
    pool_size: int


def gem_find_eviction_set(btb: ConvBtbState, victim_pc: int, group_count: int,
                          seed: int = 1, pool_size: int | None = None,
                          max_attempts: int = 8,
                          evidence_pass: int = 5, max_passes: int = 12) -> GemResult:
    """Find a minimal eviction set for victim_pc by group elimination.

    The candidate pool is accessed once, then groups are dropped while the
    remainder keeps evicting the victim. Random replacement makes single
    passes noisy, so verdicts come from repeated passes: a set that still
    contains a full conflict group keeps displacing the victim forever,
    while one that lost it settles into an all-resident fixed point. An
    eviction observed right after candidate X misses proves X maps to the
    victim's set, and such identified lines are never dropped with their
    group. Retries with a fresh pool handle pools that held fewer than
    `ways` conflicting lines; costs are reported for the winning attempt.
    """
    w = btb.ways
    if pool_size is None:
        # just under structure capacity, so quiescence stays reachable
        pool_size = btb.n_sets * w - 2 * w
    rng = SplitMix(seed)
    vset = btb.index(victim_pc)
    attempt_errors = []
    for attempt in range(1, max_attempts + 1):
        acc0, ins0 = btb.lookups, btb.insertions
        result = _gem_attempt(btb, victim_pc, group_count, rng, pool_size,
                              evidence_pass, max_passes)
        accesses = btb.lookups - acc0
        insertions = btb.insertions - ins0
        if result is not None and len(result) == w and all(
                btb.index(pc) == vset for pc in result):
            return GemResult(sorted(result), accesses, insertions, attempt, pool_size)
        attempt_errors.append(len(result) if result is not None else -1)
    raise ConfigError(
        f"candidate pool insufficient after {max_attempts} attempts "
        f"(terminal sizes {attempt_errors})")


def _gem_attempt(btb: ConvBtbState, victim_pc: int, group_count: int,
                 rng: SplitMix, pool_size: int,
                 evidence_pass: int, max_passes: int):
    known: set[int] = set()

    def prime():
        btb.access(victim_pc, victim_pc & 0xFFFF)

    def probe() -> bool:
        return btb.lookup(victim_pc).hit

    prime()
    pool = []
    while len(pool) < pool_size:
        pc = rng.next_u64() & ((1 << 48) - 1)
        pool.append(pc)
        if not btb.access(pc, pc & 0xFFFF).hit and not probe():
            known.add(pc)  # this insertion displaced the victim: same set
            prime()

    capacity = btb.n_sets * btb.ways

    def one_pass(cands) -> tuple[bool, int]:
        prime()
        misses = 0
        evicted = False
        for pc in cands:
            if not btb.access(pc, pc & 0xFFFF).hit:
                misses += 1
                if not probe():
                    evicted = True
                    known.add(pc)
                    prime()
        return evicted, misses

    def evicts_fast(cands) -> bool:
        return one_pass(cands)[0]

    def evicts_careful(cands) -> bool:
        for p in range(max_passes):
            evicted, misses = one_pass(cands)
            if evicted and p >= evidence_pass:
                return True
            if not evicted and misses == 0 and p >= 2:
                return False  # all-resident with the victim alive: absorbing
        return False

    s = list(pool)
    stall = 0
    while len(s) > btb.ways:
        careful = len(s) <= capacity // 2
        groups = [set(s[i::group_count]) for i in range(group_count)]
        removed = False
        for g in groups:
            if not g or (g & known):
                continue
            rest = [pc for pc in s if pc not in g]
            if (evicts_careful(rest) if careful else evicts_fast(rest)):
                s = rest
                removed = True
                break
        if not removed and careful:
            # second chance: allow identified lines to be dropped when the
            # remainder provably still evicts (more than `ways` conflicts)
            for g in groups:
                if not g or not (g & known):
                    continue
                rest = [pc for pc in s if pc not in g]
                if evicts_careful(rest):
                    s = rest
                    removed = True
                    break
        if not removed:
            if careful:
                return s if len(s) == btb.ways else None
            stall += 1
            if stall > 8:
                return None
    return s


def verify_eviction_set(btb: ConvBtbState, victim_pc: int, pcs: list[int],
                        rounds: int = 40) -> bool:
    """Replay check: does repeatedly accessing pcs evict the victim?"""
    btb.access(victim_pc, victim_pc & 0xFFFF)
    for _ in range(rounds):
        evicted = False
        misses = 0
        for pc in pcs:
            if not btb.access(pc, pc & 0xFFFF).hit:
                misses += 1
        if not btb.lookup(victim_pc).hit:
            return True
        if misses == 0:
            return False  # stable co-residency: can never evict
        btb.access(victim_pc, victim_pc & 0xFFFF)
    return False


# -- dangerous-eviction probe against the protected BTB -----------------------

@dataclass
class DeProbeResult:
    de_count: int
    first_de_at: int | None
    insertions: int
    lookups: int
    hits: int

    @property
    def attacks_per_de(self) -> float:
        return self.insertions / self.de_count if self.de_count else math.inf


def de_probe(btb: CibtbState, budget_insertions: int, tid: int = 99,
             pc_seed: int = 7) -> DeProbeResult:
    """Random-PC insertion storm; counts dangerous evictions.

    Runs until budget_insertions entries were actually installed (lookup
    hits do not install and are reported separately).
    """
    if budget_insertions < 0:
        raise ConfigError("budget must be non-negative")
    start = btb.metrics()
    first_de = None
    chunk = 0
    while btb.counters.insertions - start.insertions < budget_insertions:
        remaining = budget_insertions - (btb.counters.insertions - start.insertions)
        fd = btb.insert_storm(remaining, mix64(pc_seed + chunk * GOLDEN), tid)
        if first_de is None and fd is not None:
            first_de = fd - start.insertions
        chunk += 1
    end = btb.counters
    return DeProbeResult(
        de_count=end.de_count - start.de_count,
        first_de_at=first_de,
        insertions=end.insertions - start.insertions,
        lookups=end.lookups - start.lookups,
        hits=end.hits - start.hits,
    )

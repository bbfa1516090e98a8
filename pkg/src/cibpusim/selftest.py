"""Embedded quick checks: one line per oracle, nonzero exit on failure."""

from __future__ import annotations

import math

from . import analytics
from .attacks import AttackKind, AttackScenario, de_probe, simulate_reuse
from .binsballs import BinsConfig, TwoSkewEngine, run_conventional_overflow, run_two_skew
from .cibtb import CibtbState
from .cipht import CiphtState, counter_step
from .config import SimConfig
from .keying import MappingMode, SplitMix, derive_keys, dec_content, enc_content, enc_index


def _checks():
    yield "key derivation deterministic and distinct", _check_keys
    yield "index mapping bijective and matches xor form", _check_index
    yield "content encryption round-trips", _check_content
    yield "saturating counter table", _check_counter
    yield "replicated PHT insert/lookup coherence", _check_pht
    yield "decoupled BTB round-trip and pointer audit", _check_btb
    yield "BTB storm kernel matches the slow path", _check_storm
    yield "two-skew kernel matches the reference engine", _check_two_skew
    yield "first-eviction solver and overflow Monte Carlo", _check_overflow
    yield "reuse Monte Carlo matches geometric cost", _check_reuse
    yield "occupancy recursion tail shape", _check_recursion


def _check_keys():
    a = derive_keys(7, 0x5EC4E7)
    b = derive_keys(7, 0x5EC4E7)
    assert a == b
    c = derive_keys(8, 0x5EC4E7)
    assert all(x != y for x, y in zip(a.all_keys(), c.all_keys()))


def _check_index():
    assert enc_index(0x5, 0, 0x3, 4, MappingMode.XOR_FOLD) == 0x6
    for key in (0x1234, 0xBEEF):
        seen = {enc_index(x, 0, key, 8, MappingMode.MIXED_PERMUTATION)
                for x in range(256)}
        assert len(seen) == 256


def _check_content():
    rng = SplitMix(3)
    for _ in range(2000):
        width = 2 + rng.randrange(47)
        x = rng.randrange(1 << width)
        k = rng.next_u64()
        assert dec_content(enc_content(x, k, width), k, width) == x
    assert enc_content(0b10, 0, 2) == 0b10


def _check_counter():
    for s in range(4):
        assert counter_step(s, True) == min(s + 1, 3)
        assert counter_step(s, False) == max(s - 1, 0)


def _check_pht():
    cfg = SimConfig(pht_index_bits=6, pht_tag_bits=6)
    pht = CiphtState(cfg)
    assert not pht.lookup(0x123456, 0).hit
    pht.update(0x123456, 0, True)
    pht.ghr = 0  # restore the pre-update history for the probe
    res = pht.lookup(0x123456, 0)
    assert res.hit and res.taken is True


def _check_btb():
    cfg = SimConfig(btb_index_bits=6, btb_ways=4, btb_extra_tags=2)
    btb = CibtbState(cfg, seed=11)
    rng = SplitMix(5)
    pcs = [rng.next_u64() & (2**48 - 1) for _ in range(2000)]
    for pc in pcs:
        res = btb.lookup(pc, 0)
        if not res.hit:
            btb.insert(pc, 0, pc & (2**48 - 1), res.chosen_set)
    btb.audit()
    pc = 0xFEEDFACE
    res = btb.lookup(pc, 3)
    if not res.hit:
        btb.insert(pc, 3, 0xABCD, res.chosen_set)
    out = btb.lookup(pc, 3)
    assert out.hit and out.target == 0xABCD


def _check_storm():
    cfg = SimConfig(btb_index_bits=6, btb_ways=4, btb_extra_tags=1, mapping="ideal")
    fast = CibtbState(cfg, seed=21)
    fast.insert_storm(4000, pc_seed=9, tid=1)
    fast.audit()
    slow = CibtbState(cfg, seed=21)
    from .keying import GOLDEN, mix64
    inserted = 0
    t = 0
    while t < 4000:
        pc = mix64((9 + (t + 1) * GOLDEN)) & (2**48 - 1)
        res = slow.lookup(pc, 1)
        if not res.hit:
            slow.insert(pc, 1, pc & (2**48 - 1), res.chosen_set)
            inserted += 1
        t += 1
    assert (fast.tag_cipher == slow.tag_cipher).all()
    assert (fast.tag_valid == slow.tag_valid).all()
    assert (fast.fptr == slow.fptr).all()
    assert (fast.rptr == slow.rptr).all()
    assert fast.counters == slow.counters
    assert fast.rng.state == slow.rng.state


def _check_two_skew():
    import numpy as np
    from ._kernels import two_skew_kernel
    cfg = BinsConfig(n_bin=64, n_ball=256, capacity=6, seed=13)
    ref = TwoSkewEngine(cfg)
    ref.run(20000)
    acc = np.zeros(cfg.capacity + 1, dtype=np.float64)
    _, de, live = two_skew_kernel(cfg.n_bin, cfg.n_ball, cfg.capacity, 20000,
                                  cfg.seed, 10**9, acc)
    assert de == ref.de_count
    assert live == ref.live


def _check_overflow():
    l1 = analytics.solve_first_de_accesses(4096, 8)
    assert 7600 <= l1 <= 7800
    cfg = BinsConfig(n_bin=64, n_ball=10**9, capacity=4, two_skew=False, seed=5)
    mc = run_conventional_overflow(cfg, 3000).mean
    est = analytics.solve_first_de_accesses(64, 4)
    assert abs(mc / est - 1) < 0.10


def _check_reuse():
    cfg = SimConfig(pht_index_bits=1, pht_tag_bits=1, pht_skews=1, mapping="ideal")
    sc = AttackScenario(AttackKind.REUSE_PHT, cfg, trial_count=400, seed=3, budget=10_000)
    res = simulate_reuse(sc)
    assert res.successes == res.trials
    assert abs(res.mean / 16.0 - 1) < 0.25


def _check_recursion():
    dist = analytics.occupancy_recursion(1.1e-07, 2.23e-04, 5, 14)
    logs = [dist.log10_p(n) for n in range(9, 15)]
    diffs = [logs[i + 1] - logs[i] for i in range(len(logs) - 1)]
    assert all(d2 < d1 for d1, d2 in zip(diffs, diffs[1:]))  # double-exponential


def run_selftest(verbose: bool = True) -> bool:
    ok = True
    for name, fn in _checks():
        try:
            fn()
            status = "ok"
        except AssertionError:
            status = "FAIL"
            ok = False
        except Exception as e:  # unexpected breakage is also a failure
            status = f"FAIL ({type(e).__name__}: {e})"
            ok = False
        if verbose:
            print(f"{status:4s} {name}")
    return ok

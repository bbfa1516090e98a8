"""Hot simulation loops, compiled with numba.

Each kernel mirrors a pure-Python engine step for step, drawing from the
same splitmix64 stream, so small runs can be checked for exact equality
against the slow paths. All internal arithmetic stays in uint64; array
indices are cast at the boundary.
"""

from __future__ import annotations

import numba
import numpy as np

U64 = np.uint64
GOLDEN = U64(0x9E3779B97F4A7C15)
C1 = U64(0xBF58476D1CE4E5B9)
C2 = U64(0x94D049BB133111EB)


@numba.njit(inline="always")
def _mix64(x):
    x = (x ^ (x >> U64(30))) * C1
    x = (x ^ (x >> U64(27))) * C2
    return x ^ (x >> U64(31))


@numba.njit(inline="always")
def _next(state):
    s = state + GOLDEN
    return s, _mix64(s)


@numba.njit(inline="always")
def _fold(v, bits):
    mask = (U64(1) << bits) - U64(1)
    out = U64(0)
    while v != U64(0):
        out ^= v & mask
        v >>= bits
    return out


@numba.njit(cache=True)
def two_skew_kernel(n_bin, n_ball, capacity, insertions, seed, census_every,
                    hist_acc):
    """Two-choice insertion with two-candidate eviction over n_bin bins.

    Returns (censuses, de_count, live). hist_acc accumulates per-census
    occupancy counts and must have capacity+1 slots.
    """
    half = np.int64(n_bin) // 2
    occ = np.zeros(np.int64(n_bin), dtype=np.int64)
    ball_bin = np.full(np.int64(n_ball), -1, dtype=np.int64)
    hist_cur = np.zeros(np.int64(capacity) + 1, dtype=np.int64)
    hist_cur[0] = np.int64(n_bin)
    state = U64(seed)
    uhalf = U64(half)
    un_ball = U64(n_ball)
    live = np.int64(0)
    de_count = np.int64(0)
    censuses = np.int64(0)
    cap = np.int64(capacity)
    warmup = np.int64(n_ball)
    for t in range(np.int64(insertions)):
        state, z = _next(state)
        b0 = np.int64(z % uhalf)
        state, z = _next(state)
        b1 = half + np.int64(z % uhalf)
        n0 = occ[b0]
        n1 = occ[b1]
        chosen = b0 if n0 <= n1 else b1
        if n0 >= cap and n1 >= cap:
            de_count += 1
        if live >= np.int64(n_ball):
            state, z = _next(state)
            r0 = np.int64(z % un_ball)
            state, z = _next(state)
            r1 = np.int64(z % un_ball)
            m0 = occ[ball_bin[r0]]
            m1 = occ[ball_bin[r1]]
            victim = r0 if m0 >= m1 else r1
            vb = ball_bin[victim]
            occ[vb] -= 1
            hist_cur[occ[vb] + 1] -= 1
            hist_cur[occ[vb]] += 1
            ball_bin[victim] = ball_bin[live - 1]
            live -= 1
        if occ[chosen] >= cap:
            # displacement inside the chosen bin: the displaced ball and the
            # new one cancel; the freed pool slot is consumed next insertion
            pass
        else:
            occ[chosen] += 1
            hist_cur[occ[chosen] - 1] -= 1
            hist_cur[occ[chosen]] += 1
            ball_bin[live] = chosen
            live += 1
        if t >= warmup and t % np.int64(census_every) == 0:
            for k in range(cap + 1):
                hist_acc[k] += hist_cur[k]
            censuses += 1
    return censuses, de_count, live


@numba.njit(cache=True)
def overflow_kernel(n_bin, capacity, trials, seed, out):
    """Throw balls uniformly; per trial record when any bin first overflows."""
    counts = np.zeros(np.int64(n_bin), dtype=np.int64)
    state = U64(seed)
    ubin = U64(n_bin)
    cap = np.int64(capacity)
    for trial in range(np.int64(trials)):
        counts[:] = 0
        n = np.int64(0)
        while True:
            n += 1
            state, z = _next(state)
            b = np.int64(z % ubin)
            counts[b] += 1
            if counts[b] > cap:
                break
        out[trial] = n
    return state


@numba.njit(inline="always")
def _enc_index_nb(pc, bits, mode, key, r_xor, r_rot, r_mul):
    """Keyed index map over the folded pc; mirrors keying.enc_index."""
    mask = (U64(1) << bits) - U64(1)
    x = _fold(pc, bits)
    if mode == 0:      # xor fold
        return (x ^ key) & mask
    if mode == 2:      # ideal oracle
        return _mix64(key ^ (x * GOLDEN)) & mask
    for r in range(3):
        x = (x ^ r_xor[r]) & mask
        rot = r_rot[r]
        if rot != U64(0):
            x = ((x << rot) | (x >> (bits - rot))) & mask
        x = (x * r_mul[r]) & mask
    return x


@numba.njit(cache=True)
def btb_storm_kernel(n_steps, pc_seed, pc_bits,
                     tag_cipher, tag_valid, fptr, valid_count,
                     target_cipher, rptr, live, free_slots,
                     index_bits, tag_bits, target_bits, mode,
                     key0, key1, ks_tag, key_content, target_tweak,
                     rounds_xor, rounds_rot, rounds_mul,
                     rng_state, misc, counters):
    """Random-PC access storm against the decoupled BTB arrays.

    rng_state: uint64[1]; misc: int64[free_count, first_de_at];
    counters: int64[lookups, hits, misses, insertions, se, de].
    Mirrors CibtbState.lookup/insert step for step, including draw order,
    so a small storm is bit-identical to the same accesses via the slow path.
    """
    sets_per_skew = tag_cipher.shape[1]
    capacity = tag_cipher.shape[2]
    n_targets = target_cipher.shape[0]
    un_targets = U64(n_targets)
    ucap = U64(capacity)
    state = rng_state[0]
    free_count = misc[0]
    first_de = misc[1]
    pc_mask = (U64(1) << U64(pc_bits)) - U64(1)
    tgt_mask = (U64(1) << U64(target_bits)) - U64(1)
    for t in range(np.int64(n_steps)):
        pc = _mix64(U64(pc_seed) + (U64(t) + U64(1)) * GOLDEN) & pc_mask
        i0 = np.int64(_enc_index_nb(pc, U64(index_bits), mode, key0,
                                    rounds_xor[0], rounds_rot[0], rounds_mul[0]))
        i1 = np.int64(_enc_index_nb(pc, U64(index_bits), mode, key1,
                                    rounds_xor[1], rounds_rot[1], rounds_mul[1]))
        tag_plain = _fold(pc, U64(tag_bits))
        tag_c = tag_plain ^ ks_tag
        counters[0] += 1
        hit = False
        for skew in range(2):
            set_idx = i0 if skew == 0 else i1
            for way in range(capacity):
                if tag_valid[skew, set_idx, way] != 0 and tag_cipher[skew, set_idx, way] == tag_c:
                    hit = True
                    break
            if hit:
                break
        if hit:
            counters[1] += 1
            continue
        counters[2] += 1
        n0 = valid_count[0, i0]
        n1 = valid_count[1, i1]
        if n0 <= n1:
            skew = 0
            set_idx = i0
        else:
            skew = 1
            set_idx = i1
        # replacement: free slot if any, else evict the ball whose set is fuller
        globally_evicted = False
        if free_count > 0:
            free_count -= 1
            slot = free_slots[free_count]
        else:
            state, z = _next(state)
            r0 = np.int64(z % un_targets)
            state, z = _next(state)
            r1 = np.int64(z % un_targets)
            p0 = rptr[r0]
            p1 = rptr[r1]
            m0 = valid_count[p0 // capacity // sets_per_skew,
                             (p0 // capacity) % sets_per_skew]
            m1 = valid_count[p1 // capacity // sets_per_skew,
                             (p1 // capacity) % sets_per_skew]
            victim = r0 if m0 >= m1 else r1
            vpos = rptr[victim]
            vskew = vpos // capacity // sets_per_skew
            vset = (vpos // capacity) % sets_per_skew
            vway = vpos % capacity
            tag_valid[vskew, vset, vway] = 0
            fptr[vskew, vset, vway] = -1
            valid_count[vskew, vset] -= 1
            live[victim] = 0
            rptr[victim] = -1
            free_slots[free_count] = victim
            slot = victim
            globally_evicted = True
        way = -1
        for w in range(capacity):
            if tag_valid[skew, set_idx, w] == 0:
                way = w
                break
        is_de = False
        if way >= 0:
            valid_count[skew, set_idx] += 1
        else:
            state, z = _next(state)
            way = np.int64(z % ucap)
            displaced = fptr[skew, set_idx, way]
            live[displaced] = 0
            rptr[displaced] = -1
            free_slots[free_count] = displaced
            free_count += 1
            is_de = True
        tag_cipher[skew, set_idx, way] = tag_c
        tag_valid[skew, set_idx, way] = 1
        pos = (skew * sets_per_skew + set_idx) * capacity + way
        fptr[skew, set_idx, way] = slot
        ks_tgt = _mix64(key_content ^ ((target_tweak ^ pc) * GOLDEN)) & tgt_mask
        target_cipher[slot] = (pc & tgt_mask) ^ ks_tgt
        rptr[slot] = pos
        live[slot] = 1
        counters[3] += 1
        if is_de:
            counters[5] += 1
            if first_de < 0:
                first_de = counters[3]
        elif globally_evicted:
            counters[4] += 1
    rng_state[0] = state
    misc[0] = free_count
    misc[1] = first_de
    return 0

"""Closed-form and numerical evaluation of the security model.

Covers the reuse-attempt counts (exact big integers), the Poisson model of
first intra-set eviction for the conventional structure, the eviction-set
construction cost, and the birth-death steady state of the two-skew
structure: balance transition rates, the occupancy recursion, and the
per-insertion dangerous-eviction probability.

The occupancy recursion solves the exact quadratic balance at each step
and switches to the asymptotic form (quadratic term and unassigned-mass
term dropped) once the unassigned probability mass falls below a tenth of
the current term, which is the regime that approximation assumes. Tail
values are evaluated in log space so the recursion stays meaningful below
1e-300.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from scipy.optimize import brentq

from .keying import ConfigError

DEFAULT_LOAD_FACTOR = 8.0  # balls per bin of the reference geometry
GEM_COST_FACTOR = 2.3      # per-way constant of the group-elimination estimate
ASYMPTOTIC_SWITCH = 0.1


def reuse_attempts_pht(i_bits: int, t_bits: int) -> int:
    """Expected attacker attempts to reuse a replicated-PHT entry.

    Index, tag and the 2-bit state must all match in each of the three
    skews: (2^I * 2^T * 2^2)^3, exact.
    """
    if i_bits < 0 or t_bits < 0:
        raise ConfigError("bit widths must be non-negative")
    return (1 << (i_bits + t_bits + 2)) ** 3

def reuse_attempts_btb(i_bits: int, t_bits: int, n_bits: int) -> int:
    """Expected attacker attempts to reuse a BTB entry: 2^I * 2^T * 2^N."""
    if min(i_bits, t_bits, n_bits) < 0:
        raise ConfigError("bit widths must be non-negative")
    return 1 << (i_bits + t_bits + n_bits)


def poisson_occupancy(l: float, n_bin: int, n: int) -> float:
    """P(bin holds n balls) after l uniform throws, Poisson approximation."""
    if l < 0 or n_bin < 1 or n < 0:
        raise ConfigError("bad poisson_occupancy arguments")
    lam = l / n_bin
    if lam == 0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-lam + n * math.log(lam) - math.lgamma(n + 1))


def binomial_occupancy(l: int, n_bin: int, n: int) -> float:
    """Exact binomial counterpart of poisson_occupancy."""
    p = 1.0 / n_bin
    return math.exp(math.lgamma(l + 1) - math.lgamma(n + 1) - math.lgamma(l - n + 1)
                    + n * math.log(p) + (l - n) * math.log1p(-p))


def solve_first_de_accesses(n_bin: int, w: int, expected_de: float = 0.5) -> float:
    """Accesses L at which the expected count of overflowing bins hits
    expected_de, solving n_bin * Poisson(L/n_bin, w+1) = expected_de on the
    increasing branch (lambda < w+1)."""
    if w < 0 or n_bin < 1 or expected_de <= 0:
        raise ConfigError("bad solver arguments")

    def f(lam: float) -> float:
        return n_bin * math.exp(-lam + (w + 1) * math.log(lam) - math.lgamma(w + 2)) - expected_de

    peak = float(w + 1)
    if f(peak) < 0:
        raise ConfigError(
            f"no solution: expected count never reaches {expected_de} for n_bin={n_bin}, w={w}")
    lam = brentq(f, 1e-12, peak, rtol=1e-10)
    return lam * n_bin


def gem_eviction_set_cost(w: int, l1: float) -> float:
    """Access estimate for building one minimal eviction set via group
    elimination: 2.3 * W * L1."""
    if w <= 0 or l1 <= 0:
        raise ConfigError("inputs must be positive")
    return GEM_COST_FACTOR * w * l1


# -- birth-death steady state -------------------------------------------------

@dataclass
class SteadyStateDist:
    """Occupancy distribution with log-domain tail support."""

    log_p: dict[int, float]      # log probabilities by occupancy
    source: str                  # "analytical" | "empirical"
    load_factor: float = DEFAULT_LOAD_FACTOR
    seed_range: tuple[int, int] | None = None

    def p(self, n: int) -> float:
        lp = self.log_p.get(n)
        if lp is None:
            return 0.0
        return math.exp(lp) if lp > -745 else 0.0

    def log10_p(self, n: int) -> float:
        lp = self.log_p.get(n)
        return lp / math.log(10) if lp is not None else -math.inf

    @property
    def support(self) -> list[int]:
        return sorted(self.log_p)

    @classmethod
    def from_probs(cls, probs, source: str,
                   load_factor: float = DEFAULT_LOAD_FACTOR) -> "SteadyStateDist":
        log_p = {}
        for n, p in enumerate(np.asarray(probs, dtype=float)):
            if p > 0:
                log_p[n] = math.log(p)
        return cls(log_p, source, load_factor)


def transition_up(dist: SteadyStateDist, n: int) -> float:
    """Rate of a bin going n -> n+1 per insertion: P_n^2 + 2 P_n P_{>=n+1}."""
    pn = dist.p(n)
    tail = sum(dist.p(i) for i in dist.support if i > n)
    return pn * pn + 2.0 * pn * tail


def transition_down(dist: SteadyStateDist, n: int,
                    n_ball: float | None = None, n_bin: float | None = None) -> float:
    """Rate of a bin going n+1 -> n per insertion under two-candidate
    eviction. A uniformly drawn ball sits in a bin of occupancy j with
    probability j*P_j/rho (rho = balls per bin), so the rate is
    q^2 + 2*q*Q with q = (n+1) P_{n+1} / rho and Q = sum_{i<=n} i P_i / rho.
    """
    if (n_ball is None) != (n_bin is None):
        raise ConfigError("pass both n_ball and n_bin or neither")
    rho = dist.load_factor if n_ball is None else n_ball / n_bin
    q = (n + 1) * dist.p(n + 1) / rho
    q_low = sum(i * dist.p(i) / rho for i in dist.support if 0 < i <= n)
    return q * q + 2.0 * q * q_low


def occupancy_recursion(p_seed_lo: float, p_seed_hi: float, n_start: int,
                        n_max: int, load_factor: float = DEFAULT_LOAD_FACTOR,
                        switch_fraction: float = ASYMPTOTIC_SWITCH) -> SteadyStateDist:
    """Extend a steady-state distribution from two adjacent observed seeds.

    Seeds are P(n_start-1) and P(n_start); occupancies below that are
    treated as unobserved (zero). Each step equates the up and down
    transition rates. While a significant share of probability mass is
    still unassigned the exact quadratic balance is solved; once the
    unassigned mass drops below switch_fraction * P_n the asymptotic form
    P_{n+1} = rho * P_n^2 / (2 (n+1) Q_n) takes over, evaluated in log
    space for the double-exponential tail.
    """
    if not (0 <= p_seed_lo <= 1 and 0 <= p_seed_hi <= 1):
        raise ConfigError("seed probabilities must be in [0, 1]")
    if n_max <= n_start:
        raise ConfigError("n_max must exceed n_start")
    rho = load_factor
    log_p: dict[int, float] = {}
    if p_seed_lo > 0:
        log_p[n_start - 1] = math.log(p_seed_lo)
    if p_seed_hi == 0:
        # a zero seed propagates: the whole tail is zero
        return SteadyStateDist(log_p, "analytical", rho, (n_start - 1, n_start))
    log_p[n_start] = math.log(p_seed_hi)

    sum_p = p_seed_lo + p_seed_hi
    q_sum = ((n_start - 1) * p_seed_lo + n_start * p_seed_hi) / rho
    if q_sum <= 0:
        raise ConfigError("seeds give a zero denominator")
    log_q_sum = math.log(q_sum)
    asymptotic = False
    for n in range(n_start, n_max):
        log_pn = log_p[n]
        pn = math.exp(log_pn) if log_pn > -745 else 0.0
        resid = max(1.0 - sum_p, 0.0)
        if not asymptotic and resid < switch_fraction * pn:
            asymptotic = True
        if asymptotic:
            # log-domain: P_{n+1} = rho P_n^2 / (2 (n+1) Q_n)
            log_pn1 = math.log(rho) + 2.0 * log_pn - math.log(2.0 * (n + 1)) - log_q_sum
        else:
            up = pn * pn + 2.0 * pn * resid
            q = -q_sum + math.sqrt(q_sum * q_sum + up)
            if q <= 0:
                raise ConfigError(f"balance gives non-positive P_{n + 1}")
            log_pn1 = math.log(q * rho / (n + 1))
        log_p[n + 1] = log_pn1
        pn1 = math.exp(log_pn1) if log_pn1 > -745 else 0.0
        sum_p += pn1
        q_sum += (n + 1) * pn1 / rho
        log_q_sum = math.log(q_sum)
    return SteadyStateDist(log_p, "analytical", rho, (n_start - 1, n_start))


def de_probability(w: int, dist: SteadyStateDist) -> float:
    """Per-insertion dangerous-eviction probability at set capacity w.

    A DE needs both candidate sets full, i.e. the boundary flux of the
    birth-death chain at w; in steady state that equals the down-rate
    through w+1, which keeps the value well-defined on recursion-extended
    distributions (and zero whenever P_{w+1} is zero).
    """
    if w < 0:
        raise ConfigError("capacity must be non-negative")
    lp = dist.log_p.get(w + 1)
    if lp is None:
        return 0.0
    rho = dist.load_factor
    # log-domain version of transition_down(dist, w)
    log_q = math.log(w + 1) + lp - math.log(rho)
    q_low = sum(i * dist.p(i) / rho for i in dist.support if 0 < i <= w)
    if q_low <= 0:
        raise ConfigError("distribution has no mass at or below capacity")
    log_2q_qlow = math.log(2.0) + log_q + math.log(q_low)
    # q^2 is negligible against 2 q Q in the tail but kept for exactness
    return math.exp(2 * log_q) + math.exp(log_2q_qlow) if log_q > -372 else math.exp(log_2q_qlow)


def attacks_per_de(w: int, dist: SteadyStateDist) -> float:
    p = de_probability(w, dist)
    return math.inf if p == 0 else 1.0 / p


# -- report -------------------------------------------------------------------

@dataclass
class AttackCostReport:
    a_pht: int
    a_btb: int
    l1_est: float
    l2_est: float
    attacks_per_de: float
    p_de_log10: float
    dist_log10: dict[int, float]

    def to_json(self) -> str:
        payload = {
            "a_pht": str(self.a_pht),
            "a_btb": str(self.a_btb),
            "a_pht_float": float(self.a_pht),
            "a_btb_float": float(self.a_btb),
            "l1_est": self.l1_est,
            "l2_est": self.l2_est,
            "attacks_per_de": self.attacks_per_de,
            "p_de_log10": self.p_de_log10,
            "occupancy_log10": {str(k): v for k, v in sorted(self.dist_log10.items())},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def default_report(pht_index_bits: int = 13, pht_tag_bits: int = 12,
                   btb_index_bits: int = 12, btb_tag_bits: int = 12,
                   btb_target_bits: int = 48, btb_ways: int = 8,
                   btb_extra_tags: int = 5,
                   seed_probs: tuple[float, float] | None = None,
                   seed_range: tuple[int, int] = (4, 5)) -> AttackCostReport:
    """Full analytic cost summary at the given geometry.

    seed_probs supplies observed occupancy probabilities at seed_range for
    the recursion; without them a set of reference defaults measured from
    the bundled two-skew engine at the default geometry is used.
    """
    n_bin = 1 << btb_index_bits
    capacity = btb_ways + btb_extra_tags
    if seed_probs is None:
        # empirical P4/P5 of the default two-skew geometry (2e8 insertions)
        seed_probs = (1.1e-07, 2.23e-04)
        seed_range = (4, 5)
    dist = occupancy_recursion(seed_probs[0], seed_probs[1], seed_range[1],
                               capacity + 1)
    l1 = solve_first_de_accesses(n_bin, btb_ways)
    p_de = de_probability(capacity, dist)
    return AttackCostReport(
        a_pht=reuse_attempts_pht(pht_index_bits, pht_tag_bits),
        a_btb=reuse_attempts_btb(btb_index_bits, btb_tag_bits, btb_target_bits),
        l1_est=l1,
        l2_est=gem_eviction_set_cost(btb_ways, l1),
        attacks_per_de=math.inf if p_de == 0 else 1.0 / p_de,
        p_de_log10=math.log10(p_de) if p_de > 0 else -math.inf,
        dist_log10={n: dist.log10_p(n) for n in dist.support},
    )

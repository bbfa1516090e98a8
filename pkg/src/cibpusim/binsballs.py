"""Abstract bins-and-balls engine behind the security analysis.

Sets are bins, installed targets are balls. The conventional structure is
plain uniform throwing until a bin overflows; the protected structure is
two-choice insertion (one candidate bin per skew, less-loaded wins, ties to
skew 0) with two-candidate eviction (two random balls, the one in the
fuller bin is removed) once the pool is exhausted. A dangerous eviction is
an insertion that finds both candidate bins at capacity.

The numba kernels in _kernels do the heavy lifting; TwoSkewEngine is the
slow reference used to validate them draw for draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import overflow_kernel, two_skew_kernel
from .keying import ConfigError, SplitMix


@dataclass(frozen=True)
class BinsConfig:
    n_bin: int
    n_ball: int
    capacity: int
    two_skew: bool = True
    seed: int = 1

    def __post_init__(self):
        if self.n_bin < 1 or self.n_ball < 1 or self.capacity < 0:
            raise ConfigError("bins, balls and capacity must be positive")
        if self.two_skew:
            if self.n_bin % 2:
                raise ConfigError("two-skew mode needs an even bin count")
            if self.n_ball > self.n_bin * self.capacity:
                raise ConfigError("two-skew mode cannot hold more balls than slots")

    @property
    def load_factor(self) -> float:
        return self.n_ball / self.n_bin


@dataclass
class OccupancyHistogram:
    """Counts of (bin, census) observations with N balls."""

    counts: np.ndarray          # float64, index N in [0, capacity]
    total_observations: int
    censuses: int

    def probabilities(self) -> np.ndarray:
        if self.total_observations <= 0:
            raise ConfigError("empty histogram")
        return self.counts / self.total_observations

    def to_csv(self) -> str:
        probs = self.probabilities()
        lines = ["N,count,probability"]
        for n, (c, p) in enumerate(zip(self.counts, probs)):
            lines.append(f"{n},{int(c)},{p!r}")
        return "\n".join(lines) + "\n"


@dataclass
class TwoSkewResult:
    histogram: OccupancyHistogram
    de_count: int
    insertions: int

    @property
    def attacks_per_de(self) -> float:
        return self.insertions / self.de_count if self.de_count else math.inf


@dataclass
class OverflowResult:
    samples: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def std(self) -> float:
        return float(self.samples.std())


def run_conventional_overflow(config: BinsConfig, trials: int) -> OverflowResult:
    """Throw balls uniformly; per trial, count throws until the first bin
    anywhere holds capacity+1 balls."""
    if config.two_skew:
        raise ConfigError("conventional overflow requires two_skew=False")
    if trials < 1:
        raise ConfigError("need at least one trial")
    out = np.zeros(trials, dtype=np.int64)
    overflow_kernel(config.n_bin, config.capacity, trials, config.seed, out)
    return OverflowResult(out)


def run_two_skew(config: BinsConfig, insertions: int,
                 census_every: int | None = None) -> TwoSkewResult:
    """Two-skew insertion/eviction run with periodic occupancy censuses.

    Censuses start once the pool has been filled (n_ball warm-up
    insertions) and repeat every n_bin insertions by default, which keeps
    observation cost O(1) amortized.
    """
    if insertions < 1:
        raise ConfigError("need at least one insertion")
    if not config.two_skew:
        raise ConfigError("run_two_skew requires two_skew=True")
    if census_every is None:
        census_every = config.n_bin
    hist = np.zeros(config.capacity + 1, dtype=np.float64)
    censuses, de_count, _live = two_skew_kernel(
        config.n_bin, config.n_ball, config.capacity, insertions,
        config.seed, census_every, hist)
    histogram = OccupancyHistogram(hist, int(hist.sum()), int(censuses))
    return TwoSkewResult(histogram, int(de_count), insertions)


def histogram_probs(h: OccupancyHistogram) -> np.ndarray:
    """Normalized occupancy probabilities P_N."""
    return h.probabilities()


class TwoSkewEngine:
    """Pure-Python reference for the two-skew kernel (same draw stream)."""

    def __init__(self, config: BinsConfig, log_choices: bool = False):
        self.cfg = config
        self.rng = SplitMix(config.seed)
        self.occ = [0] * config.n_bin
        self.ball_bin = [-1] * config.n_ball
        self.live = 0
        self.de_count = 0
        self.insertions = 0
        self.choice_log: list[tuple[int, int, int]] = [] if log_choices else None

    def step(self) -> bool:
        """One insertion; returns True when it was a dangerous eviction."""
        cfg = self.cfg
        half = cfg.n_bin // 2
        b0 = self.rng.randrange(half)
        b1 = half + self.rng.randrange(half)
        n0, n1 = self.occ[b0], self.occ[b1]
        chosen = b0 if n0 <= n1 else b1
        if self.choice_log is not None:
            self.choice_log.append((n0, n1, chosen))
        de = n0 >= cfg.capacity and n1 >= cfg.capacity
        if de:
            self.de_count += 1
        if self.live >= cfg.n_ball:
            r0 = self.rng.randrange(self.live)
            r1 = self.rng.randrange(self.live)
            m0 = self.occ[self.ball_bin[r0]]
            m1 = self.occ[self.ball_bin[r1]]
            victim = r0 if m0 >= m1 else r1
            self.occ[self.ball_bin[victim]] -= 1
            self.ball_bin[victim] = self.ball_bin[self.live - 1]
            self.live -= 1
        if self.occ[chosen] < cfg.capacity:
            self.occ[chosen] += 1
            self.ball_bin[self.live] = chosen
            self.live += 1
        self.insertions += 1
        return de

    def run(self, insertions: int) -> None:
        for _ in range(insertions):
            self.step()

    def histogram(self) -> np.ndarray:
        hist = np.zeros(self.cfg.capacity + 1, dtype=np.int64)
        for v in self.occ:
            hist[v] += 1
        return hist

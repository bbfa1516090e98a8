"""Branch trace ingestion, synthetic generation, and trace-driven runs.

Trace format: UTF-8 lines `tid pc kind taken target`, whitespace separated,
PCs and targets hex with an 0x prefix, kind one of C (conditional),
J (direct jump), I (indirect jump), taken 0/1. Lines starting with `#`
and blank lines are skipped.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Iterator

from .baseline import ConvBtbState, ConvPhtState
from .cibtb import CibtbState
from .cipht import CiphtState
from .config import SimConfig
from .keying import ConfigError, SplitMix

KINDS = {"C": "conditional", "J": "direct", "I": "indirect"}
_KIND_LETTER = {v: k for k, v in KINDS.items()}
PC_LIMIT = 1 << 48


@dataclass(frozen=True)
class TraceRecord:
    tid: int
    pc: int
    kind: str        # conditional | direct | indirect
    taken: bool
    target: int

    def to_line(self) -> str:
        return (f"{self.tid} 0x{self.pc:x} {_KIND_LETTER[self.kind]} "
                f"{int(self.taken)} 0x{self.target:x}")


@dataclass
class RunMetrics:
    conditional_count: int = 0
    mispredictions: int = 0
    btb_lookups: int = 0
    btb_hits: int = 0
    se_count: int = 0
    de_count: int = 0
    pht_hits: int = 0

    @property
    def misprediction_rate(self) -> float:
        return self.mispredictions / self.conditional_count if self.conditional_count else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["misprediction_rate"] = self.misprediction_rate
        return d


def parse_trace(stream: Iterable[str] | io.TextIOBase) -> Iterator[TraceRecord]:
    """Parse trace lines into records; raises with the line number on errors."""
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ConfigError(f"trace line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            tid = int(parts[0])
            pc = int(parts[1], 16)
            kind = KINDS[parts[2]]
            taken = bool(int(parts[3]))
            target = int(parts[4], 16)
        except (ValueError, KeyError) as e:
            raise ConfigError(f"trace line {lineno}: {e}") from e
        if tid < 0 or not (0 <= pc < PC_LIMIT) or not (0 <= target < PC_LIMIT):
            raise ConfigError(f"trace line {lineno}: field out of range")
        yield TraceRecord(tid, pc, kind, taken, target)


def serialize_trace(records: Iterable[TraceRecord]) -> str:
    return "\n".join(r.to_line() for r in records) + "\n"


def gen_synthetic(branch_count: int, working_set_size: int, taken_bias: float,
                  thread_count: int = 1, seed: int = 1) -> list[TraceRecord]:
    """Deterministic synthetic trace over a fixed working set of branches.

    Each branch in the working set gets a per-branch bias jittered around
    taken_bias and a fixed target; records draw branches uniformly.
    """
    if working_set_size < 1:
        raise ConfigError("working_set_size must be at least 1")
    if not 0.0 <= taken_bias <= 1.0:
        raise ConfigError("taken_bias must be in [0, 1]")
    rng = SplitMix(seed)
    branches = []
    for i in range(working_set_size):
        pc = rng.next_u64() % PC_LIMIT & ~3
        target = rng.next_u64() % PC_LIMIT & ~3
        kind = "conditional" if rng.random() < 0.9 else "direct"
        jitter = (rng.random() - 0.5) * 0.1
        bias = min(1.0, max(0.0, taken_bias + jitter)) if 0.0 < taken_bias < 1.0 else taken_bias
        branches.append((pc, target, kind, bias))
    records = []
    for _ in range(branch_count):
        pc, target, kind, bias = branches[rng.randrange(working_set_size)]
        tid = rng.randrange(thread_count)
        taken = True if kind != "conditional" else rng.random() < bias
        records.append(TraceRecord(tid, pc, kind, taken, target))
    return records


class _BaselinePredictor:
    def __init__(self, config: SimConfig):
        self.pht = ConvPhtState(config)
        self.btb = ConvBtbState(config)

    def predict_direction(self, pc: int, tid: int) -> bool | None:
        res = self.pht.lookup(pc)
        return res.taken if res.hit else None

    def update_direction(self, pc: int, tid: int, taken: bool) -> None:
        self.pht.update(pc, taken)

    def btb_access(self, pc: int, tid: int, target: int) -> tuple[bool, str]:
        res = self.btb.access(pc, target)
        return res.hit, "none"


class _CibpuPredictor:
    def __init__(self, config: SimConfig):
        self.pht = CiphtState(config)
        self.btb = CibtbState(config)

    def predict_direction(self, pc: int, tid: int) -> bool | None:
        res = self.pht.lookup(pc, tid)
        return res.taken if res.hit else None

    def update_direction(self, pc: int, tid: int, taken: bool) -> None:
        self.pht.update(pc, tid, taken)

    def btb_access(self, pc: int, tid: int, target: int) -> tuple[bool, str]:
        res, kind = self.btb.access(pc, tid, target)
        return res.hit, kind.value


def make_predictor(name: str, config: SimConfig):
    if name == "baseline":
        return _BaselinePredictor(config)
    if name == "cibpu":
        return _CibpuPredictor(config)
    raise ConfigError(f"unknown predictor {name!r}")


def run_trace(predictor, records: Iterable[TraceRecord]) -> RunMetrics:
    """Drive records through a predictor: predict, compare, update.

    Conditional branches exercise the direction predictor (unknown
    branches predict not-taken); every taken or unconditional branch
    exercises the BTB.
    """
    m = RunMetrics()
    for rec in records:
        if rec.kind == "conditional":
            m.conditional_count += 1
            pred = predictor.predict_direction(rec.pc, rec.tid)
            if pred is None:
                pred = False  # static not-taken when the tables miss
            else:
                m.pht_hits += 1
            if pred != rec.taken:
                m.mispredictions += 1
            predictor.update_direction(rec.pc, rec.tid, rec.taken)
        if rec.kind != "conditional" or rec.taken:
            m.btb_lookups += 1
            hit, kind = predictor.btb_access(rec.pc, rec.tid, rec.target)
            if hit:
                m.btb_hits += 1
            elif kind == "se":
                m.se_count += 1
            elif kind == "de":
                m.de_count += 1
    return m


def metrics_json(metrics: RunMetrics, config: SimConfig, extra: dict | None = None) -> str:
    payload = {"metrics": metrics.to_dict(), "config": config.to_dict()}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"

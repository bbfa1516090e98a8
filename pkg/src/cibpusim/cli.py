"""Command-line front end; every experiment is a subcommand.

All runs are seeded (never wall clock) and outputs are byte-stable across
repeated identical invocations. Exit codes: 0 success, 1 failed selftest,
2 configuration/usage error, 3 internal invariant fault.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from . import analytics
from .attacks import (AttackKind, AttackScenario, DeProbeResult, de_probe,
                      expected_reuse_cost, gem_find_eviction_set, simulate_reuse)
from .baseline import ConvBtbState
from .binsballs import BinsConfig, run_conventional_overflow, run_two_skew
from .cibtb import CibtbState
from .config import DEFAULT_SEED, SimConfig, load_config
from .keying import ConfigError, InvariantError
from .trace import gen_synthetic, make_predictor, metrics_json, parse_trace, run_trace


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _finite(x: float) -> float | str:
    return x if math.isfinite(x) else "inf"


def cmd_run_trace(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    if args.trace:
        with open(args.trace, "r", encoding="utf-8") as fh:
            records = list(parse_trace(fh))
    else:
        records = gen_synthetic(args.synthetic, args.working_set, args.taken_bias,
                                args.threads, cfg.seed)
    predictor = make_predictor(args.predictor, cfg)
    metrics = run_trace(predictor, records)
    _emit(metrics_json(metrics, cfg, {"predictor": args.predictor,
                                      "records": len(records)}), args.out)
    return 0


def cmd_bins_conventional(args) -> int:
    cfg = BinsConfig(n_bin=args.bins, n_ball=args.bins * (args.ways + 1) * args.trials,
                     capacity=args.ways, two_skew=False, seed=args.seed)
    result = run_conventional_overflow(cfg, args.trials)
    l1 = analytics.solve_first_de_accesses(args.bins, args.ways)
    payload = {
        "n_bin": args.bins, "ways": args.ways, "trials": args.trials,
        "seed": args.seed,
        "mean_first_overflow": result.mean,
        "std_first_overflow": result.std,
        "l1_est": l1,
    }
    _emit(_json(payload), args.out)
    return 0


def cmd_bins_two_skew(args) -> int:
    cfg = BinsConfig(n_bin=args.bins, n_ball=args.balls, capacity=args.capacity,
                     two_skew=True, seed=args.seed)
    result = run_two_skew(cfg, args.insertions, args.census_every)
    if args.format == "csv":
        _emit(result.histogram.to_csv(), args.out)
        return 0
    probs = result.histogram.probabilities()
    payload = {
        "config": {"n_bin": cfg.n_bin, "n_ball": cfg.n_ball,
                   "capacity": cfg.capacity, "seed": cfg.seed},
        "insertions": result.insertions,
        "censuses": result.histogram.censuses,
        "de_count": result.de_count,
        "attacks_per_de": _finite(result.attacks_per_de),
        "probabilities": {str(n): float(p) for n, p in enumerate(probs) if p > 0},
    }
    _emit(_json(payload), args.out)
    return 0


def cmd_analytics(args) -> int:
    cfg = load_config(args.config, {})
    report = analytics.default_report(
        pht_index_bits=cfg.pht_index_bits, pht_tag_bits=cfg.pht_tag_bits,
        btb_index_bits=cfg.btb_index_bits, btb_tag_bits=cfg.btb_tag_bits,
        btb_target_bits=cfg.btb_target_bits, btb_ways=cfg.btb_ways,
        btb_extra_tags=cfg.btb_extra_tags)
    _emit(report.to_json(), args.out)
    return 0


def cmd_attack(args) -> int:
    overrides = {"seed": args.seed, "mapping": "ideal"}
    for name in ("pht_index_bits", "pht_tag_bits", "pht_skews",
                 "btb_index_bits", "btb_tag_bits", "btb_target_bits",
                 "btb_ways", "btb_extra_tags"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    cfg = load_config(args.config, overrides)
    if args.kind in ("reuse-pht", "reuse-btb"):
        scenario = AttackScenario(AttackKind(args.kind), cfg,
                                  trial_count=args.trials, seed=args.seed,
                                  budget=args.budget)
        result = simulate_reuse(scenario)
        payload = {
            "kind": args.kind,
            "trials": result.trials,
            "successes": result.successes,
            "mean_attempts": _finite(result.mean),
            "std_attempts": _finite(result.std),
            "expected_attempts": expected_reuse_cost(scenario),
            "total_accesses": result.total_accesses,
        }
        if args.samples:
            payload["samples"] = result.samples
    elif args.kind == "gem":
        btb = ConvBtbState(cfg, seed=args.seed)
        victim = 0xABCDE
        result = gem_find_eviction_set(btb, victim, cfg.btb_ways + 1,
                                       seed=args.seed + 1)
        payload = {
            "kind": "gem",
            "victim_set": btb.index(victim),
            "eviction_set": [f"0x{pc:x}" for pc in result.eviction_set],
            "accesses": result.accesses,
            "insertions": result.insertions,
            "attempts": result.attempts,
            "pool_size": result.pool_size,
        }
    elif args.kind == "de-probe":
        btb = CibtbState(cfg, seed=args.seed)
        result: DeProbeResult = de_probe(btb, args.insertions, pc_seed=args.seed)
        payload = {
            "kind": "de-probe",
            "insertions": result.insertions,
            "lookups": result.lookups,
            "hits": result.hits,
            "de_count": result.de_count,
            "first_de_at": result.first_de_at,
            "attacks_per_de": _finite(result.attacks_per_de),
        }
    else:
        raise ConfigError(f"unknown attack kind {args.kind!r}")
    _emit(_json(payload), args.out)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    ok = run_selftest(verbose=True)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cibpusim",
                                description="Secure-BPU model: simulators, analytics, attacks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt=False):
        sp.add_argument("--config", help="JSON config file (SimConfig keys)")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--out", help="output path (default stdout)")
        if fmt:
            sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("run-trace", help="trace-driven predictor run")
    common(sp)
    sp.add_argument("--trace", help="trace file; omit to synthesize")
    sp.add_argument("--predictor", choices=("baseline", "cibpu"), default="cibpu")
    sp.add_argument("--synthetic", type=int, default=100_000,
                    help="synthetic record count when no trace file is given")
    sp.add_argument("--working-set", type=int, default=512)
    sp.add_argument("--taken-bias", type=float, default=0.7)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_run_trace)

    sp = sub.add_parser("bins-conventional", help="first-overflow Monte Carlo")
    common(sp)
    sp.add_argument("--bins", type=int, default=4096)
    sp.add_argument("--ways", type=int, default=8)
    sp.add_argument("--trials", type=int, default=10_000)
    sp.set_defaults(func=cmd_bins_conventional)

    sp = sub.add_parser("bins-two-skew", help="two-skew steady-state run")
    common(sp, fmt=True)
    sp.add_argument("--bins", type=int, default=4096)
    sp.add_argument("--balls", type=int, default=32768)
    sp.add_argument("--capacity", type=int, default=13)
    sp.add_argument("--insertions", type=int, default=100_000_000)
    sp.add_argument("--census-every", type=int, default=None)
    sp.set_defaults(func=cmd_bins_two_skew)

    sp = sub.add_parser("analytics", help="security cost report")
    common(sp)
    sp.add_argument("--defaults", action="store_true",
                    help="use the reference geometry (same as no config)")
    sp.set_defaults(func=cmd_analytics)

    sp = sub.add_parser("attack", help="attacker strategies")
    common(sp)
    sp.add_argument("--kind", required=True,
                    choices=("reuse-pht", "reuse-btb", "gem", "de-probe"))
    sp.add_argument("--trials", type=int, default=2_000)
    sp.add_argument("--budget", type=int, default=1_000_000)
    sp.add_argument("--insertions", type=int, default=1_000_000,
                    help="de-probe insertion budget")
    sp.add_argument("--samples", action="store_true", help="include per-trial samples")
    for name in ("pht-index-bits", "pht-tag-bits", "pht-skews", "btb-index-bits",
                 "btb-tag-bits", "btb-target-bits", "btb-ways", "btb-extra-tags"):
        sp.add_argument(f"--{name}", type=int, default=None, dest=name.replace("-", "_"))
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("selftest", help="run the embedded oracle checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InvariantError as e:
        print(f"invariant fault: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: analytical model queries, benchmark runs, sweeps,
store inspection, and structural checking."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from fractions import Fraction

from . import metrics
from .engine import EngineConfig, PLACEMENT_POLICIES, Store
from .model import (
    AmplificationParams,
    capacity_ratio,
    separation_benefit,
    simulate_leveled_traffic,
    traffic_in_place,
    traffic_kv_separated,
)
from .workload import OP_MIXES, SIZE_MIXES, WorkloadSpec, run_workload

DEFAULT_REGION = "default"


def _engine_args(p: argparse.ArgumentParser):
    p.add_argument("--path", help="store file path (omit with --ram)")
    p.add_argument("--ram", action="store_true", help="in-memory device")
    p.add_argument("--capacity", type=int, default=256 * 1024 * 1024, help="device bytes")
    p.add_argument("--policy", choices=PLACEMENT_POLICIES, default="hybrid")
    p.add_argument("--growth", type=int, default=8, help="level growth factor f")
    p.add_argument("--l0-capacity", type=int, default=8 * 1024 * 1024)
    p.add_argument("--segment-length", type=int, default=2 * 1024 * 1024)
    p.add_argument("--merge-level", choices=("n-1", "n-2"), default="n-1")
    p.add_argument("--no-sorted-l0", action="store_true")
    p.add_argument("--classify-mode", choices=("size", "ratio"), default="size")
    p.add_argument("--gc-threshold", type=float, default=0.10)
    p.add_argument("--deterministic", action="store_true",
                   help="synchronous compaction/GC (always on in this implementation)")


def _workload_args(p: argparse.ArgumentParser, with_ops: bool):
    p.add_argument("--mix", choices=sorted(SIZE_MIXES), default="SD")
    p.add_argument("--keys", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=1)
    if with_ops:
        p.add_argument("--op-mix", choices=sorted(OP_MIXES), default="run-a")
        p.add_argument("--ops", type=int, default=100_000)


def _config_from(args) -> EngineConfig:
    return EngineConfig(
        growth_factor_f=args.growth,
        l0_capacity=args.l0_capacity,
        segment_length=args.segment_length,
        medium_merge_level=args.merge_level,
        sorted_l0_segments=not args.no_sorted_l0,
        placement_policy=args.policy,
        classify_mode=args.classify_mode,
        gc_threshold=args.gc_threshold,
    )


def _fingerprint(config: EngineConfig, extra: dict) -> str:
    blob = json.dumps({"config": config.to_json(), **extra}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _open_or_create(args, config: EngineConfig) -> Store:
    if args.ram:
        return Store.create(config, capacity=args.capacity)
    if not args.path:
        raise ValueError("either --path or --ram is required")
    return Store.create(config, path=args.path, capacity=args.capacity)


def _derived(snap: dict) -> dict:
    return {
        "amplification": metrics.amplification(snap),
        "write_amplification": metrics.write_amplification(snap),
        "throughput_ops": metrics.throughput(snap),
        "cpu_per_op": metrics.cpu_per_op(snap),
        "device_read_bytes": snap["device.read_bytes"],
        "device_write_bytes": snap["device.write_bytes"],
    }


def _print_report(snap: dict, derived: dict, as_csv: bool):
    if as_csv:
        w = csv.writer(sys.stdout)
        w.writerow(sorted(derived) + sorted(snap))
        w.writerow([derived[k] for k in sorted(derived)] + [snap[k] for k in sorted(snap)])
    else:
        for k in sorted(derived):
            print(f"{k}: {derived[k]}")
        for k in sorted(snap):
            print(f"{k}: {snap[k]}")


def cmd_model(args) -> int:
    p = AmplificationParams(
        levels_l=args.levels,
        growth_factor_f=args.growth,
        l0_size_s0=args.s0,
        key_fraction_p=Fraction(args.key_fraction) if args.key_fraction else Fraction(1),
    )
    rows = {
        "traffic_in_place": traffic_in_place(p),
        "traffic_kv_separated": traffic_kv_separated(p),
        "separation_benefit": float(separation_benefit(p)),
    }
    if args.simulate:
        rows["simulated_in_place"] = simulate_leveled_traffic(p)
        rows["simulated_separated"] = simulate_leveled_traffic(p, separated=True)
    if args.capacity_ratio is not None:
        rows["capacity_ratio"] = float(
            capacity_ratio(args.growth, args.levels, args.capacity_ratio)
        )
    for k, v in rows.items():
        print(f"{k}: {v}")
    return 0


def cmd_load(args) -> int:
    config = _config_from(args)
    store = _open_or_create(args, config)
    store.create_region(DEFAULT_REGION)
    spec = WorkloadSpec(mix=args.mix, op_mix="load-a", keys=args.keys, ops=args.keys, seed=args.seed)
    snap = run_workload(store, DEFAULT_REGION, spec)
    derived = _derived(snap)
    derived["space_amplification"] = metrics.space_amplification(store)
    derived["fingerprint"] = _fingerprint(config, {"mix": args.mix, "keys": args.keys, "seed": args.seed})
    store.close()
    _print_report(snap, derived, args.csv)
    return 0


def cmd_run(args) -> int:
    config = _config_from(args)
    if args.ram:
        store = _open_or_create(args, config)
        store.create_region(DEFAULT_REGION)
        load = WorkloadSpec(mix=args.mix, op_mix="load-a", keys=args.keys, ops=args.keys, seed=args.seed)
        run_workload(store, DEFAULT_REGION, load)
        store.counters.reset_window()
    else:
        store = Store.open(path=args.path, capacity=args.capacity)
    spec = WorkloadSpec(mix=args.mix, op_mix=args.op_mix, keys=args.keys, ops=args.ops, seed=args.seed + 1)
    snap = run_workload(store, DEFAULT_REGION, spec)
    derived = _derived(snap)
    derived["space_amplification"] = metrics.space_amplification(store)
    derived["fingerprint"] = _fingerprint(
        store.config, {"mix": args.mix, "op_mix": args.op_mix, "keys": args.keys, "ops": args.ops, "seed": args.seed}
    )
    store.close()
    _print_report(snap, derived, args.csv)
    return 0


def cmd_sweep(args) -> int:
    policies = args.policies.split(",")
    mixes = args.mixes.split(",")
    op_mixes = args.op_mixes.split(",")
    writer = csv.writer(sys.stdout)
    writer.writerow(
        ["fingerprint", "policy", "mix", "op_mix", "keys", "ops", "amplification",
         "write_amplification", "space_amplification", "throughput_ops",
         "device_read_bytes", "device_write_bytes", "gc_read", "gc_write"]
    )
    for policy in policies:
        for mix in mixes:
            for op_mix in op_mixes:
                args.policy = policy
                config = _config_from(args)
                store = Store.create(config, capacity=args.capacity)
                store.create_region(DEFAULT_REGION)
                load = WorkloadSpec(mix=mix, op_mix="load-a", keys=args.keys, ops=args.keys, seed=args.seed)
                run_workload(store, DEFAULT_REGION, load)
                if op_mix != "load-a":
                    store.counters.reset_window()
                    spec = WorkloadSpec(mix=mix, op_mix=op_mix, keys=args.keys, ops=args.ops, seed=args.seed + 1)
                    run_workload(store, DEFAULT_REGION, spec)
                snap = store.stats()
                derived = _derived(snap)
                writer.writerow([
                    _fingerprint(config, {"mix": mix, "op_mix": op_mix, "keys": args.keys,
                                          "ops": args.ops, "seed": args.seed}),
                    policy, mix, op_mix, args.keys, args.ops,
                    derived["amplification"], derived["write_amplification"],
                    metrics.space_amplification(store), derived["throughput_ops"],
                    derived["device_read_bytes"], derived["device_write_bytes"],
                    snap["device.gc_read"], snap["device.gc_write"],
                ])
                store.close()
    return 0


def cmd_fsck(args) -> int:
    store = Store.open(path=args.path, capacity=args.capacity)
    problems = store.fsck()
    if problems:
        for p in problems:
            print(f"fsck: {p}", file=sys.stderr)
        return 2
    print("fsck: clean")
    store.close()
    return 0


def cmd_stats(args) -> int:
    store = Store.open(path=args.path, capacity=args.capacity)
    snap = store.stats()
    _print_report(snap, _derived(snap), args.csv)
    store.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="hybridkv", description=__doc__)
    sub = top.add_subparsers(dest="verb", required=True)

    m = sub.add_parser("model", help="closed-form traffic model")
    m.add_argument("--levels", type=int, required=True)
    m.add_argument("--growth", type=int, required=True)
    m.add_argument("--s0", type=int, default=1)
    m.add_argument("--key-fraction", help="key bytes / total bytes, e.g. 1/5")
    m.add_argument("--simulate", action="store_true", help="cross-check with the discrete simulator")
    m.add_argument("--capacity-ratio", type=int, help="capacity ratio of levels up to the given index")
    m.set_defaults(fn=cmd_model)

    for name, fn, with_ops in (("load", cmd_load, False), ("run", cmd_run, True)):
        p = sub.add_parser(name, help=f"{name} a workload")
        _engine_args(p)
        _workload_args(p, with_ops)
        p.add_argument("--csv", action="store_true")
        p.set_defaults(fn=fn)

    s = sub.add_parser("sweep", help="grid of policies x mixes x op mixes (CSV)")
    _engine_args(s)
    _workload_args(s, True)
    s.add_argument("--policies", default="hybrid")
    s.add_argument("--mixes", default="SD")
    s.add_argument("--op-mixes", default="load-a")
    s.set_defaults(fn=cmd_sweep)

    for name, fn in (("fsck", cmd_fsck), ("stats", cmd_stats)):
        p = sub.add_parser(name, help=f"{name} an existing store")
        p.add_argument("--path", required=True)
        p.add_argument("--capacity", type=int, default=256 * 1024 * 1024)
        if name == "stats":
            p.add_argument("--csv", action="store_true")
        p.set_defaults(fn=fn)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # surface a clean one-line failure, exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

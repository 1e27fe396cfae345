"""Command line interface.

Subcommands:
  gen       emit a planted instance as JSON
  simulate  run FL rounds and dump the first-layer gradient bundle
  attack    run one attack end to end, write a JSON report
  bench     sweeps over subsample size, batch size, or client count;
            writes CSV plus a rendered PNG figure next to it

Exit code is 0 whenever the requested run completed (even if the attack
itself failed); nonzero only for operational errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gradleak", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="emit a planted instance JSON")
    g.add_argument("--rows", type=int, default=20, help="number of sample rows M")
    g.add_argument("--batch", type=int, default=10)
    g.add_argument("--dim", type=int, default=20)
    g.add_argument("--q-bits", type=int, default=None)
    g.add_argument("--density", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=str, default="instance.json")

    s = sub.add_parser("simulate", help="run FL rounds, dump gradient bundle JSON")
    s.add_argument("--layers", type=str, default="20,500,100,10")
    s.add_argument("--batch", type=int, default=10)
    s.add_argument("--clients", type=int, default=1)
    s.add_argument("--rounds", type=int, default=1)
    s.add_argument("--loss", type=str, default="cross_entropy")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dataset", type=str, default="synthetic")
    s.add_argument("--out", type=str, default="bundle.json")

    a = sub.add_parser("attack", help="run one end-to-end attack")
    a.add_argument("--method", choices=["ns", "mv", "stat"], default=None)
    a.add_argument("--batch", type=int, default=None)
    a.add_argument("--clients", type=int, default=None)
    a.add_argument("--subsample", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--q-bits", type=int, default=None)
    a.add_argument("--config", type=str, default=None)
    a.add_argument("--dataset", type=str, default=None)
    a.add_argument("--layers", type=str, default=None)
    a.add_argument("--single-label", type=int, default=None)
    a.add_argument("--out", type=str, default="report.json")
    a.add_argument("--figure", type=str, default=None)

    b = sub.add_parser("bench", help="parameter sweeps with CSV + figure output")
    b.add_argument("--sweep", choices=["m", "b", "n"], required=True)
    b.add_argument("--values", type=str, required=True, help="comma-separated values")
    b.add_argument("--method", choices=["ns", "mv", "stat"], default=None)
    b.add_argument("--batch", type=int, default=None)
    b.add_argument("--clients", type=int, default=None)
    b.add_argument("--trials", type=int, default=None)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--config", type=str, default=None)
    b.add_argument("--layers", type=str, default=None)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", type=str, default="sweep.csv")
    b.add_argument("--no-figure", action="store_true")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "gen":
        return _cmd_gen(args)
    if args.command == "simulate":
        return _cmd_simulate(args)
    if args.command == "attack":
        return _cmd_attack(args)
    if args.command == "bench":
        return _cmd_bench(args)
    raise ValueError(f"unknown command {args.command}")


def _cmd_gen(args) -> int:
    from .hssp import instance_to_json, plant_instance, q_size_for

    q_bits = args.q_bits or q_size_for(args.rows, args.batch)
    planted = plant_instance(
        args.rows, args.batch, args.dim, q_bits, density=args.density, rng_seed=args.seed
    )
    Path(args.out).write_text(instance_to_json(planted))
    print(f"wrote planted instance ({args.rows}x{args.dim}, B={args.batch}, "
          f"q {q_bits} bits) to {args.out}")
    return 0


def _parse_layers(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok)


def _cmd_simulate(args) -> int:
    from .flsim import Batch, fl_round, mlp_init, sgd_steps
    from .pipeline import ExperimentConfig, _load_features

    layers = _parse_layers(args.layers)
    cfg = ExperimentConfig(
        dataset=args.dataset, layer_sizes=layers, batch=args.batch,
        clients=args.clients, seed=args.seed, loss=args.loss,
    )
    data = _load_features(cfg, args.seed)
    rng = np.random.default_rng(args.seed)
    model = mlp_init(layers, rng_seed=args.seed)
    if args.rounds > 1:
        warm = [
            Batch(data[rng.choice(data.shape[0], args.batch, replace=False)],
                  tuple(int(v) for v in rng.integers(0, layers[-1], args.batch)))
            for _ in range(args.rounds - 1)
        ]
        model = sgd_steps(model, warm, loss=args.loss)
    batches = [
        Batch(data[rng.choice(data.shape[0], args.batch, replace=False)],
              tuple(int(v) for v in rng.integers(0, layers[-1], args.batch)))
        for _ in range(args.clients)
    ]
    agg = fl_round(batches, model, loss=args.loss)
    doc = {
        "layer_sizes": list(layers),
        "clients": args.clients,
        "g_w": agg.g_w.tolist(),
        "g_b": agg.g_b.tolist(),
        "client_bundles": [
            {
                "l_factor": bu.l_factor.tolist(),
                "r_mask": bu.r_mask.tolist(),
                "y_pre": bu.y_pre.tolist(),
                "x": bu.x.tolist(),
            }
            for bu in agg.client_bundles
        ],
    }
    Path(args.out).write_text(json.dumps(doc))
    print(f"wrote gradient bundle for {args.clients} client(s) to {args.out}")
    return 0


def _build_cfg(args) -> "ExperimentConfig":
    from .pipeline import ExperimentConfig

    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for name, attr in [
        ("method", "method"), ("batch", "batch"), ("clients", "clients"),
        ("subsample", "subsample"), ("seed", "seed"), ("q_bits", "q_bits"),
        ("dataset", "dataset"), ("trials", "trials"), ("single_label", "single_label"),
    ]:
        val = getattr(args, attr, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "layers", None):
        overrides["layer_sizes"] = _parse_layers(args.layers)
    merged = {**asdict(cfg), **overrides}
    merged["layer_sizes"] = tuple(merged["layer_sizes"])
    return ExperimentConfig(**merged)


def _cmd_attack(args) -> int:
    from .flsim import decode_int
    from .pipeline import run_attack, save_report

    cfg = _build_cfg(args)
    report = run_attack(cfg)
    save_report(report, args.out)
    status = "success" if report.success else f"FAILED ({report.failure})"
    total = report.timings.get("total_s", float("nan"))
    print(f"{cfg.method} attack: {status} in {total:.2f}s "
          f"(m={report.params.get('subsample')}, q={report.params.get('q_bits')} bits); "
          f"report -> {args.out}")
    if args.figure:
        from . import figures
        from .pipeline import build_instance

        built = build_instance(cfg, cfg.seed)
        if built.planted is not None and built.encoding is not None:
            true_x = decode_int(built.planted.x, built.encoding)
            rec = None
            if report.recovered_x is not None and report.permutation is not None:
                rec_m = decode_int(report.recovered_x, built.encoding)
                rec = rec_m[list(report.permutation)]
            elif report.recovered_x is not None:
                rec = decode_int(report.recovered_x, built.encoding)
            figures.render_reconstruction(true_x, rec, args.figure,
                                          title=f"{cfg.method} reconstruction")
            print(f"figure -> {args.figure}")
    return 0


def _cmd_bench(args) -> int:
    from . import figures
    from .pipeline import bench_batch_sweep, bench_defense, bench_subsample_sweep

    cfg = _build_cfg(args)
    values = [int(v) for v in args.values.split(",") if v]
    if args.sweep == "m":
        result = bench_subsample_sweep(cfg, values, workers=args.workers)
        title = f"{cfg.method} attack vs subsample size"
    elif args.sweep == "b":
        result = bench_batch_sweep(cfg, values, workers=args.workers)
        title = f"{cfg.method} attack vs batch size"
    else:
        result = bench_defense(cfg, values, workers=args.workers)
        title = f"{cfg.method} attack vs clients (secure aggregation)"
    result.to_csv(args.out)
    print(f"sweep CSV -> {args.out}")
    for param, ms, rate, trials in result.rows:
        print(f"  {result.param_name}={param:g}: {ms:.1f} ms, success {rate:.2f} ({trials} trials)")
    if not args.no_figure:
        fig_path = str(Path(args.out).with_suffix(".png"))
        figures.render_sweep(result, fig_path, title=title)
        print(f"figure -> {fig_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

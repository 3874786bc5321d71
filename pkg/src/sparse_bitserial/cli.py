"""Command-line entry point.

    sparse-bitserial [global flags] <command> [args]

Commands: gen-weights, quantize, encode, plan, simulate, report, check, run.
Global flags (accepted before or after the command): --arch, --mode
{16b,8b}, --workload {dense,imbalanced,balanced}, --seed, --out.

Exit status: 0 ok, 1 usage, 2 validation (bad inputs), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core import read_weight_file, weight_file_bytes
from .encoder import bits_per_weight, encode_layer, encoded_layer_bytes
from .metrics import compare_runs, energy_report
from .pipeline import (EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, MODES, RunManifest, Staging,
                       StageError, _plan_rows, _stage, apply_mode, csv_bytes, functional_check,
                       gen_weights, ingest, json_bytes, resolve_network, run_pipeline, write_atomic)
from .quantizer import quantize_tensor
from .systolic import WorkloadMode, simulate_network


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--arch", default=d(None), help="architecture YAML (defaults built in)")
    p.add_argument("--mode", choices=sorted(MODES), default=d(None), help="precision mode")
    p.add_argument("--workload", choices=[m.value for m in WorkloadMode], default=d("balanced"))
    p.add_argument("--seed", type=int, default=d(None), help="weight generator / IFM seed")
    p.add_argument("--out", default=d("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparse-bitserial", description=__doc__.split("\n\n")[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        return p

    p = cmd("gen-weights", "write a deterministic random weight file")
    p.add_argument("network")
    p.add_argument("--distribution", default="uniform", help="'uniform' or 'nnzb:<k>' / 'nnzb:<w0,w1,...>'")

    p = cmd("quantize", "cap nonzero bits per weight; write weights and error statistics")
    p.add_argument("network")
    p.add_argument("--weights", required=True)
    p.add_argument("--n-max", type=int)

    p = cmd("encode", "encode quantized weights into sign/position/bitmap files")
    p.add_argument("network")
    p.add_argument("--weights", required=True)
    p.add_argument("--n-max", type=int)

    p = cmd("plan", "tile every layer and choose its dataflow")
    p.add_argument("network")
    p.add_argument("--n-max", type=int)

    for name, help_ in (("simulate", "cycle and traffic reports for one workload mode"),
                        ("report", "energy and ratio table against the dense baseline"),
                        ("run", "full pipeline with functional check")):
        p = cmd(name, help_)
        p.add_argument("network")
        p.add_argument("--weights")
        p.add_argument("--n-max", type=int)
        p.add_argument("--distribution", default="uniform")
        if name == "simulate":
            p.add_argument("--functional", action="store_true",
                           help="also compute OFMs and compare them with the reference")

    cmd("check", "run the built-in oracle self-checks")
    return parser


def _manifest(args) -> RunManifest:
    weights = getattr(args, "weights", None)
    seed = args.seed if args.seed is not None else 0
    try:
        return RunManifest(network=args.network, out=args.out, weights=weights,
                           seed=None if weights else seed, arch=args.arch, mode=args.mode,
                           n_max=getattr(args, "n_max", None), workload=args.workload,
                           ifm_seed=seed, distribution=getattr(args, "distribution", "uniform"))
    except ValueError as exc:
        raise StageError("ingest", str(exc), EXIT_VALIDATION) from exc


def _load_net(args):
    with _stage("ingest", EXIT_VALIDATION):
        return apply_mode(resolve_network(args.network), args.mode, getattr(args, "n_max", None))


def _publish(args, files: dict[str, bytes]) -> None:
    staging = Staging(Path(args.out))
    try:
        for rel, data in files.items():
            staging.write(rel, data)
        for path in staging.publish():
            print(path)
    except BaseException:
        staging.discard()
        raise


def cmd_gen_weights(args) -> int:
    net = _load_net(args)
    with _stage("generate"):
        weights = gen_weights(net, args.seed if args.seed is not None else 0, args.distribution)
        path = Path(args.out) / "weights.sbw"
        write_atomic(path, weight_file_bytes(weights))
    print(path)
    return EXIT_OK


def _read_weights(args, net):
    with _stage("ingest", EXIT_VALIDATION):
        if not Path(args.weights).is_file():
            raise FileNotFoundError(f"weight file {args.weights} not found")
        return read_weight_file(args.weights, net)


def cmd_quantize(args) -> int:
    net = _load_net(args)
    weights = _read_weights(args, net)
    with _stage("quantize"):
        out, rows = [], []
        for i, (layer, w) in enumerate(zip(net.layers, weights)):
            q, st = quantize_tensor(w, layer.n_nzb_max, i)
            out.append(q)
            rows.append({"name": layer.name, **st.to_row()})
        _publish(args, {"quantized_weights.sbw": weight_file_bytes(out), "quant_stats.csv": csv_bytes(rows)})
    return EXIT_OK


def cmd_encode(args) -> int:
    net = _load_net(args)
    weights = _read_weights(args, net)
    with _stage("encode", EXIT_VALIDATION):
        files = {}
        for i, (layer, w) in enumerate(zip(net.layers, weights)):
            enc = encode_layer(w, layer.n_nzb_max)
            files[f"encoded/layer{i:03d}_{layer.name or 'layer'}.sbel"] = encoded_layer_bytes(enc)
    with _stage("encode"):
        _publish(args, files)
    raw = sum(L.n_weights * L.precision for L in net.layers)
    enc_bits = sum(L.n_weights * bits_per_weight(L.precision, L.n_nzb_max) for L in net.layers)
    print(f"raw bits {raw}  encoded bits {enc_bits}  ratio {enc_bits / raw if raw else 1.0:.4f}")
    return EXIT_OK


def cmd_plan(args) -> int:
    m = _manifest(args)
    net, arch, weights = ingest(m)
    with _stage("plan"):
        encoded = [encode_layer(quantize_tensor(w, L.n_nzb_max)[0], L.n_nzb_max)
                   for L, w in zip(net.layers, weights)]
        run = simulate_network(net, encoded, arch, WorkloadMode.parse(m.workload))
        _publish(args, {"plan.csv": csv_bytes(_plan_rows(net, run))})
    return EXIT_OK


def _simulated(args, functional: bool):
    m = _manifest(args)
    net, arch, weights = ingest(m)
    with _stage("quantize"):
        quantized = [quantize_tensor(w, L.n_nzb_max)[0] for L, w in zip(net.layers, weights)]
        del weights
    with _stage("encode"):
        encoded = [encode_layer(q, L.n_nzb_max) for L, q in zip(net.layers, quantized)]
        del quantized
    with _stage("simulate"):
        run = simulate_network(net, encoded, arch, m.workload, functional=functional, seed=m.ifm_seed)
    return m, net, arch, encoded, run


def _cycle_rows(run) -> list[dict]:
    rows = [{**r.to_row(), **t.to_row()} for r, t in zip(run.layers, run.traffic)]
    rows.append({**run.total.to_row(), "layer": "total", **run.total_traffic.to_row()})
    return rows


def cmd_simulate(args) -> int:
    m, net, arch, encoded, run = _simulated(args, args.functional)
    files = {"cycles.csv": csv_bytes(_cycle_rows(run)), "cycles.json": json_bytes(_cycle_rows(run))}
    if args.functional:
        with _stage("check"):
            files["ofm_hashes.json"] = json_bytes(functional_check(net, run, encoded))
    with _stage("report"):
        _publish(args, files)
    return EXIT_OK


def cmd_report(args) -> int:
    m, net, arch, encoded, run = _simulated(args, False)
    with _stage("simulate"):
        base = run if run.mode == WorkloadMode.DENSE.value else \
            simulate_network(net, encoded, arch, WorkloadMode.DENSE)
    with _stage("report"):
        p = net.layers[0].precision
        en = energy_report(run.total, run.total_traffic, arch, p, net.name)
        en_b = energy_report(base.total, base.total_traffic, arch, p, net.name)
        ratio = {"workload": run.mode, "baseline": base.mode,
                 **compare_runs((run.total, en), (base.total, en_b)).to_row()}
        energy = [{"workload": run.mode, **en.to_dict()}, {"workload": base.mode, **en_b.to_dict()}]
        _publish(args, {"energy.csv": csv_bytes(energy), "energy.json": json_bytes(energy),
                        "report.csv": csv_bytes([ratio]), "report.json": json_bytes(ratio)})
        for k, v in ratio.items():
            print(f"{k:>24}: {v}")
    return EXIT_OK


def cmd_run(args) -> int:
    res = run_pipeline(_manifest(args))
    for path in res.files:
        print(path)
    return EXIT_OK


def cmd_check(args) -> int:
    from .check import run_checks
    results = run_checks()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {"gen-weights": cmd_gen_weights, "quantize": cmd_quantize, "encode": cmd_encode,
            "plan": cmd_plan, "simulate": cmd_simulate, "report": cmd_report, "run": cmd_run,
            "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # anything outside a tagged stage
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or checkpoint error,
3 training error. Every file is written to a temporary name and renamed
into place, so a failed command leaves no partial output.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time

from . import __version__, checkpoint
from .compliance import DKCConfig, dkc_score, rule_catalog
from .config import RunConfig
from .errors import FlowTPPError, NonFiniteLoss, SchemaMismatch
from .generator import GenerationRequest, generate
from .ingest import (
    atomic_write_text,
    demo_fixture_spec,
    load_fixture_spec,
    load_schema,
    make_fixture,
    parse_trace,
    split,
    write_trace,
)
from .model import gradient_check, train, train_two_stage

log = logging.getLogger("flowtpp")

EXIT_USAGE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ------------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg


def _kind(args, cfg):
    return args.kind or cfg["model"]["kind"]


def _load(path, kind, cfg, validate=True):
    schema = load_schema(cfg["ingest"]["schema"]) if cfg["ingest"]["schema"] else None
    return parse_trace(path, schema, kind=kind, tolerance=cfg["ingest"]["tolerance"], validate=validate)


def _write_csv_rows(path, header, rows, comments=()):
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _training_log_rows(rows):
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    return keys, [[_fmt(r.get(k, "")) for k in keys] for r in rows]


def _fmt(v):
    return f"{v:.9g}" if isinstance(v, float) else v


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


# -- subcommands ---------------------------------------------------------------------

def cmd_ingest(args):
    cfg = _run_config(args)
    if args.schema:
        cfg.update("ingest", {"schema": args.schema})
    if args.tolerance is not None:
        cfg.update("ingest", {"tolerance": args.tolerance})
    kind = _kind(args, cfg)
    ds = _load(args.input, kind, cfg, validate=not args.keep_invalid)
    comments = cfg.comment_lines() + [f"source {args.input}", f"malformed_rows {ds.malformed_rows}"]
    if args.split is not None:
        if not (args.train_out and args.test_out):
            raise UsageError("--split needs --train-out and --test-out")
        a, b = split(ds, args.split)
        write_trace(a, args.train_out, comments + [f"split train {args.split}"])
        write_trace(b, args.test_out, comments + [f"split test {args.split}"])
        print(f"{len(a)} train and {len(b)} test records ({ds.malformed_rows} malformed rows dropped)")
    if args.output:
        write_trace(ds, args.output, comments)
        print(f"{len(ds)} records written to {args.output} ({ds.malformed_rows} malformed rows dropped)")
    if not args.output and args.split is None:
        raise UsageError("ingest needs --output or --split")
    return 0


def cmd_fixture(args):
    cfg = _run_config(args)
    spec = load_fixture_spec(args.spec) if args.spec else demo_fixture_spec(kind=args.kind or "flow")
    if args.days is not None:
        spec.span_days = args.days
    if args.start is not None:
        spec.start = args.start
    if args.kind:
        spec.kind = args.kind
    ds = make_fixture(spec, args.seed)
    comments = cfg.comment_lines() + [f"fixture seed={args.seed} spec={args.spec or 'demo'} days={spec.span_days}"]
    write_trace(ds, args.output, comments)
    print(f"{len(ds)} records written to {args.output}")
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    overrides = {"kind": args.kind, "seed": args.seed, "epochs": args.epochs, "learning_rate": args.lr,
                 "batch_size": args.batch_size, "K": args.K, "H": args.H,
                 "tbptt_window": args.window, "rare_threshold": args.rare_threshold}
    cfg.update("model", overrides)
    if args.two_stage:
        cfg.update("model", {"stage_split": True})
    mcfg = cfg.model_config()
    ds = _load(args.data, mcfg.kind, cfg)
    log_path = args.log or f"{args.output}.log.csv"
    rows = []
    t0 = time.perf_counter()
    try:
        if mcfg.stage_split:
            cks = list(train_two_stage(ds, mcfg, log_rows=rows, log_path=log_path))
            outs = [f"{args.output}.stage1", f"{args.output}.stage2"]
        else:
            cks = [train(ds, mcfg, log_rows=rows, log_path=log_path)]
            outs = [args.output]
    finally:
        if rows:
            header, body = _training_log_rows(rows)
            _write_csv_rows(log_path, header, body, cfg.comment_lines())
    for ck, path in zip(cks, outs):
        ck.metadata["run_config"] = cfg.as_dict()
        checkpoint.save(ck, path)
    n_params = sum(c.metadata["n_parameters"] for c in cks)
    print(f"trained {n_params} parameters on {len(ds)} events in {time.perf_counter() - t0:.1f}s; "
          f"wrote {', '.join(outs)} and {log_path}")
    return 0


def cmd_generate(args):
    cfg = _run_config(args)
    cfg.update("generate", {"mode": args.mode, "rare_policy": args.rare_policy, "seed": args.seed})
    g = cfg["generate"]
    cks = [checkpoint.load(p) for p in args.checkpoint]
    req = GenerationRequest(cks, n_events=args.events, duration=args.duration, start_timestamp=args.start,
                            seed=int(g["seed"]), mode=g["mode"], rare_policy=g["rare_policy"],
                            max_events=int(g["max_events"]))
    ds = generate(req)
    digests = []
    for path in args.checkpoint:
        with open(path, "rb") as fh:
            digests.append(hashlib.sha256(fh.read()).hexdigest()[:16])
    comments = cfg.comment_lines() + [f"checkpoint sha256 {' '.join(digests)}"]
    write_trace(ds, args.output, comments)
    print(f"{len(ds)} records written to {args.output}")
    return 0


def cmd_evaluate(args):
    from . import metrics

    cfg = _run_config(args)
    cfg.update("evaluate", {"k": args.k, "max_points": args.max_points})
    ev = cfg["evaluate"]
    real = _load(args.real, args.kind or cfg["model"]["kind"], cfg, validate=False)
    synth = _load(args.synth, real.kind, cfg, validate=False)
    if real.has_tcp_flags != synth.has_tcp_flags and args.strict_schema:
        raise SchemaMismatch("real and synthetic traces carry different optional columns")
    trainset = _load(args.train, real.kind, cfg, validate=False) if args.train else None
    report = metrics.evaluate(real, synth, trainset, k=int(ev["k"]), max_points=ev["max_points"] or None,
                              config=cfg.as_dict())
    out = _outdir(args.output_dir)
    atomic_write_text(os.path.join(out, "metrics.json"), report.to_json())
    atomic_write_text(os.path.join(out, "metrics.txt"), report.to_table())
    _write_diagnostics(real, synth, out, ev, cfg)
    if args.plots:
        _write_plots(real, synth, out, ev)
    sys.stdout.write(report.to_table())
    return 0


def _write_diagnostics(real, synth, out, ev, cfg):
    from . import metrics

    head = "".join(f"# {line}\n" for line in cfg.comment_lines())
    qq = metrics.qq_points(metrics.taus(real), metrics.taus(synth), int(ev["n_quantiles"]))
    atomic_write_text(os.path.join(out, "qq_points.csv"), head + metrics.qq_csv(qq))
    hours, days = metrics.seasonal_csv(real, synth)
    atomic_write_text(os.path.join(out, "hourly.csv"), head + hours)
    atomic_write_text(os.path.join(out, "weekday.csv"), head + days)
    atomic_write_text(os.path.join(out, "host_pairs.csv"),
                      head + metrics.host_pair_csv(real, synth, int(ev["top_n"])))


def _write_plots(real, synth, out, ev):
    from collections import Counter

    from . import metrics, plots

    qq = metrics.qq_points(metrics.taus(real), metrics.taus(synth), int(ev["n_quantiles"]))
    plots.qq_plot(qq, os.path.join(out, "qq.svg"))
    off = float(ev["utc_offset_hours"])
    hr, dr = metrics.seasonal_histograms(real, off)
    hs, ds_ = metrics.seasonal_histograms(synth, off)
    plots.hourly_plot(hr, hs, os.path.join(out, "hourly.svg"))
    plots.weekday_plot(dr, ds_, os.path.join(out, "weekday.svg"))
    cs = Counter(zip(synth.column("src_ip"), synth.column("dst_ip")))
    rows = [(f"{a} > {b}", frac, cs[(a, b)] / len(synth))
            for (a, b), frac in metrics.host_pair_distribution(real, int(ev["top_n"]))]
    plots.host_pair_plot(rows, os.path.join(out, "host_pairs.svg"))


def cmd_dkc(args):
    if args.list_rules:
        for r in rule_catalog():
            print(f"{r.id:>2}  {r.description}")
        return 0
    if not args.trace:
        raise UsageError("dkc needs a trace path (or --list-rules)")
    cfg = _run_config(args)
    cfg.update("dkc", {"dns_servers": args.dns_servers, "mdns_groups": args.mdns_groups})
    d = cfg["dkc"]
    dns = [x.strip() for x in d["dns_servers"].split(",") if x.strip()]
    mdns = [x.strip() for x in d["mdns_groups"].split(",") if x.strip()]
    dcfg = DKCConfig(dns_servers=dns or None, mdns_groups=mdns)
    ds = _load(args.trace, "flow", cfg, validate=False)
    report = dkc_score(ds, dcfg)
    report.config = cfg.as_dict()
    if args.output:
        head = "".join(f"# {line}\n" for line in cfg.comment_lines())
        atomic_write_text(args.output, head + report.to_csv())
    sys.stdout.write(report.summary())
    return 0


def cmd_plot(args):
    from . import plots

    cfg = _run_config(args)
    out = _outdir(args.output_dir)
    if args.log:
        with open(args.log, encoding="utf-8") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        numeric = [{k: float(v) for k, v in r.items() if v not in ("", None)} for r in rows]
        plots.loss_plot(numeric, os.path.join(out, "loss.svg"))
    if args.real and args.synth:
        real = _load(args.real, args.kind or "flow", cfg, validate=False)
        synth = _load(args.synth, real.kind, cfg, validate=False)
        _write_plots(real, synth, out, cfg["evaluate"])
    elif not args.log:
        raise UsageError("plot needs --log or both --real and --synth")
    print(f"plots written to {out}")
    return 0


def cmd_gradcheck(args):
    from .model import TempoNetConfig

    dims = {f: args.emb for f in ("src_ip", "dst_ip", "protocol", "src_port", "dst_port")}
    cfg = TempoNetConfig(K=args.K, H=args.H, embedding_dims=dims, src_hidden=args.src_hidden,
                         kind=args.kind or "flow", seed=args.seed)
    t0 = time.perf_counter()
    err = gradient_check(cfg, trials=args.trials, seed=args.seed, stage=args.stage)
    ok = err < args.tolerance
    print(json.dumps({"max_relative_error": err, "trials": args.trials, "tolerance": args.tolerance,
                      "passed": ok, "seconds": round(time.perf_counter() - t0, 3)}))
    return 0 if ok else 3


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowtpp", description="Synthetic NetFlow / packet header traces from a neural point process.")
    p.add_argument("--version", action="version", version=f"flowtpp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="INI run configuration; flags override its values")
        sp.add_argument("--kind", choices=("flow", "packet"))
        return sp

    s = common(sub.add_parser("ingest", help="parse a raw header CSV into the canonical format"))
    s.add_argument("--input", required=True)
    s.add_argument("--output")
    s.add_argument("--schema", help="INI file mapping canonical column names to source columns")
    s.add_argument("--tolerance", type=float, help="maximum fraction of malformed rows")
    s.add_argument("--keep-invalid", action="store_true", help="keep rows that parse but violate invariants")
    s.add_argument("--split", type=float, help="chronological train fraction")
    s.add_argument("--train-out")
    s.add_argument("--test-out")
    s.set_defaults(func=cmd_ingest)

    s = common(sub.add_parser("fixture", help="sample a synthetic ground-truth trace"))
    s.add_argument("--spec", help="fixture INI ([fixture] plus [pair NAME] sections); default: demo network")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--days", type=float)
    s.add_argument("--start", type=float)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_fixture)

    s = common(sub.add_parser("train", help="train a checkpoint"))
    s.add_argument("--data", required=True)
    s.add_argument("--output", required=True, help="checkpoint path (.stage1/.stage2 suffixes with --two-stage)")
    s.add_argument("--log", help="training log CSV (default: <output>.log.csv)")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--window", type=int, help="truncated BPTT window")
    s.add_argument("-K", type=int, help="mixture components")
    s.add_argument("-H", type=int, help="LSTM hidden size")
    s.add_argument("--rare-threshold", type=int)
    s.add_argument("--two-stage", action="store_true")
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("generate", help="sample a synthetic trace from checkpoints"))
    s.add_argument("--checkpoint", action="append", required=True,
                   help="repeat for a stage-1 + stage-2 pair")
    h = s.add_mutually_exclusive_group(required=True)
    h.add_argument("--events", type=int)
    h.add_argument("--duration", type=float, help="seconds of simulated time")
    s.add_argument("--start", type=float, help="start timestamp (default: end of training data)")
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=("stochastic", "argmax"))
    s.add_argument("--rare-policy", choices=("sentinel", "resample"))
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_generate)

    s = common(sub.add_parser("evaluate", help="compare a synthetic trace with a real one"))
    s.add_argument("real")
    s.add_argument("synth")
    s.add_argument("--train", help="training trace for membership disclosure (default: real)")
    s.add_argument("--output-dir", default="report")
    s.add_argument("--plots", action="store_true")
    s.add_argument("--k", type=int)
    s.add_argument("--max-points", type=int)
    s.add_argument("--strict-schema", action="store_true", help="fail if optional columns differ")
    s.set_defaults(func=cmd_evaluate)

    s = common(sub.add_parser("dkc", help="domain knowledge check of a flow trace"))
    s.add_argument("trace", nargs="?")
    s.add_argument("--list-rules", action="store_true")
    s.add_argument("--dns-servers", help="comma-separated DNS server addresses (enables rule 12)")
    s.add_argument("--mdns-groups", help="comma-separated multicast DNS groups")
    s.add_argument("--output", help="per-record violation CSV")
    s.set_defaults(func=cmd_dkc)

    s = common(sub.add_parser("plot", help="SVG plots from a training log or a real/synthetic pair"))
    s.add_argument("--log")
    s.add_argument("--real")
    s.add_argument("--synth")
    s.add_argument("--output-dir", default="plots")
    s.set_defaults(func=cmd_plot)

    s = common(sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients"))
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("-H", type=int, default=8)
    s.add_argument("-K", type=int, default=3)
    s.add_argument("--emb", type=int, default=2)
    s.add_argument("--src-hidden", type=int, default=4)
    s.add_argument("--stage", type=int, default=0, choices=(0, 1, 2))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"flowtpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"flowtpp: training aborted: {exc} (epoch {exc.epoch}, batch {exc.batch})", file=sys.stderr)
        return exc.exit_code
    except FlowTPPError as exc:
        print(f"flowtpp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, configparser.Error) as exc:
        print(f"flowtpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"flowtpp: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

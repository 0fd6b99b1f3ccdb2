"""Command-line pipeline: gen-disorder -> sample-pt -> train -> analyze.

Every command writes ``<command>.config.json`` into its output directory with
the resolved flags and the SHA-256 of every input file. Exit codes: 0 success,
2 usage error, 3 numeric failure, 4 I/O failure.
"""

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analytics, config, io, kernels, svg
from .core import draw_sk_disorder, shift_coupling
from .errors import NumericalError
from .flow import init_flow
from .sampler import TemperatureLadder, build_continuous_dataset, mean_energy, run_pt
from .trainer import TrainConfig, train

log = logging.getLogger("glassflow")

EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class UsageError(Exception):
    pass


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_provenance(out_dir, command, args, inputs=()):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    record = {
        "command": command,
        "flags": flags,
        "inputs": {str(p): io.file_hash(p) for p in inputs},
        "glassflow_version": __version__,
    }
    (Path(out_dir) / f"{command}.config.json").write_text(_dump(record))


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args):
    return args.threads if args.threads else (os.cpu_count() or 1)


def sample_filename(temperature):
    return f"samples_T{temperature:.6g}.gfc"


# -- gen-disorder -------------------------------------------------------------

def cmd_gen_disorder(args):
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    out = _out_dir(args)
    d = draw_sk_disorder(args.n, args.scale, args.seed)
    sc = shift_coupling(d, args.epsilon)
    path = out / args.name
    io.save_disorder(path, d, args.epsilon)
    _write_provenance(out, "gen-disorder", args)
    print(f"wrote {path} (disorder_id {d.disorder_id})")
    print(f"lambda_min {sc.lambda_min:.6f}  lambda_max {sc.lambda_max:.6f}  shift {sc.shift:.6f}")
    return 0


# -- sample-pt ----------------------------------------------------------------

def _ladder(args):
    if args.temps:
        temps = sorted(args.temps, reverse=True)
        return TemperatureLadder(tuple(1.0 / t for t in temps))
    return TemperatureLadder.geometric(args.t_min, args.t_max, args.replicas)


def cmd_sample_pt(args):
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    if args.replicas < 2 and not args.temps:
        raise UsageError("--replicas must be at least 2")
    out = _out_dir(args)
    inputs = []
    if args.disorder:
        d, eps = io.load_disorder(args.disorder)
        inputs.append(args.disorder)
    elif args.n:
        d, eps = draw_sk_disorder(args.n, args.scale, args.disorder_seed), args.epsilon
        io.save_disorder(out / "disorder.gfc", d, eps)
    else:
        raise UsageError("give --disorder FILE or --n to draw an instance")
    ladder = _ladder(args)
    burn_in = 10 * d.n_spins if args.burn_in is None else args.burn_in
    run = run_pt(d, ladder, burn_in, args.samples, args.seed, n_threads=_threads(args),
                 backend=args.backend)
    sc = shift_coupling(d, eps) if args.emit_x else None
    x_rngs = np.random.SeedSequence([args.seed, 1]).spawn(len(ladder))
    summary = {"disorder_id": d.disorder_id, "betas": list(ladder.betas),
               "temperatures": list(ladder.temperatures), "mean_energies": [],
               "energy_se": [], "swap_acceptance": [float(r) for r in run.swap_acceptance],
               "files": []}
    for ss, seq in zip(run.samples, x_rngs):
        if sc is not None:
            ss = build_continuous_dataset(ss, sc, np.random.default_rng(seq))
        name = sample_filename(ss.temperature)
        io.save_sampleset(out / name, ss)
        e, se = mean_energy(ss, d)
        summary["mean_energies"].append(e)
        summary["energy_se"].append(se)
        summary["files"].append(name)
    (out / "pt_summary.json").write_text(_dump(summary))
    _write_provenance(out, "sample-pt", args, inputs)
    print(f"wrote {len(run.samples)} sample sets to {out}")
    return 0


# -- train --------------------------------------------------------------------

def _load_data(paths, sc, beta, seed):
    blocks = []
    for k, p in enumerate(paths):
        ss = io.load_sampleset(p)
        if ss.n_spins != sc.n_spins:
            raise UsageError(f"{p}: N={ss.n_spins} does not match the disorder")
        if not math.isclose(ss.beta, beta, rel_tol=1e-9):
            raise UsageError(f"{p}: sampled at T={ss.temperature:g}, not T={1 / beta:g}")
        if ss.xs is None:
            ss = build_continuous_dataset(ss, sc, np.random.default_rng([seed, k]))
        blocks.append(ss.xs)
    return np.concatenate(blocks)


def cmd_train(args):
    if args.loss == "forward" and not args.data:
        raise UsageError("forward training needs --data")
    out = _out_dir(args)
    d, eps = io.load_disorder(args.disorder)
    sc = shift_coupling(d, eps)
    if args.temp is None:
        if not args.data:
            raise UsageError("--temp is required for reverse training")
        args.temp = io.load_sampleset(args.data[0]).temperature
    beta = 1.0 / args.temp
    symmetrize = args.loss == "reverse" and not args.no_symmetrize
    cfg = TrainConfig(loss_kind=args.loss, learning_rate=args.lr, batch_size=args.batch,
                      n_updates=args.updates, beta=beta, symmetrize=symmetrize, seed=args.seed,
                      clip_norm=args.clip_norm, checkpoint_every=args.checkpoint_every,
                      eval_batch=args.eval_batch)
    data = _load_data(args.data, sc, beta, args.seed) if args.data else None
    model = init_flow(d.n_spins, args.layers, seed=args.seed)
    model.metadata.update({"disorder_id": d.disorder_id, "temperature": args.temp})
    io.save_flow(out / "checkpoint_0000000.gfc", model)

    def on_checkpoint(m, update):
        io.save_flow(out / f"checkpoint_{update:07d}.gfc", m)

    model, trace = train(model, cfg, sc=sc, data=data, on_checkpoint=on_checkpoint)
    io.save_flow(out / "model.gfc", model)
    (out / "loss.csv").write_text(trace.to_csv())
    (out / "snapshots.csv").write_text(trace.snapshots_csv())
    (out / "train_config.json").write_text(cfg.to_json())
    _write_provenance(out, "train", args, [args.disorder, *args.data])
    if trace.losses:
        print(f"loss {trace.losses[0]:.6g} -> {trace.losses[-1]:.6g} over {len(trace)} updates")
    print(f"wrote {out / 'model.gfc'}")
    return 0


# -- analyze ------------------------------------------------------------------

def _spins_for(args, d, sc, beta, rng):
    """Discrete samples for the requested source; returns (spins, source tag, inputs)."""
    if args.source == "pt":
        if not args.samples:
            raise UsageError("--source pt needs --samples FILE")
        ss = io.load_sampleset(args.samples)
        if ss.n_spins != d.n_spins:
            raise UsageError("sample file and disorder have different N")
        return ss.spins, "pt", [args.samples]
    if not args.checkpoint:
        raise UsageError("--source flow needs --checkpoint FILE")
    model = io.load_flow(args.checkpoint)
    if model.n_spins != d.n_spins:
        raise UsageError("checkpoint and disorder have different N")
    xs = model.sample(args.n_flow_samples, rng)
    tag = f"flow_{model.metadata.get('loss_kind', 'untrained')}_kl"
    return analytics.discretize(xs, sc, beta, rng), tag, [args.checkpoint]


def _beta_for(args):
    if args.temp is not None:
        return 1.0 / args.temp
    if getattr(args, "samples", None):
        return io.load_sampleset(args.samples).beta
    raise UsageError("--temp is required")


def _mode_dict(ms):
    return {"peaks": ms.peaks, "peak_heights": ms.peak_heights, "value_at_zero": ms.value_at_zero,
            "dip_ratio": ms.dip_ratio, "bimodal": ms.is_bimodal(),
            "unimodal_at_zero": ms.is_unimodal_at_zero()}


def analyze_overlap(args):
    out = _out_dir(args)
    d, eps = io.load_disorder(args.disorder)
    sc = shift_coupling(d, eps)
    beta = _beta_for(args)
    rng = np.random.default_rng(args.seed)
    spins, tag, inputs = _spins_for(args, d, sc, beta, rng)
    hist = analytics.overlap_histogram(spins, args.pairs, args.bins, rng, beta, tag)
    M, per_site = analytics.magnetization(spins)
    stem = f"overlap_{tag}_T{1 / beta:.6g}"
    (out / f"{stem}.csv").write_text(hist.to_csv())
    (out / f"{stem}.svg").write_text(svg.histogram_svg(hist, f"P(q) {tag} T={1 / beta:.3g}"))
    summary = {"source": tag, "temperature": 1 / beta, "n_pairs": hist.n_pairs,
               "modes": _mode_dict(analytics.mode_summary(hist)),
               "magnetization": M, "mean_abs_site_magnetization": float(np.abs(per_site).mean())}
    (out / f"{stem}.json").write_text(_dump(summary))
    _write_provenance(out, "analyze-overlap", args, [args.disorder, *inputs])
    print(_dump(summary["modes"]), end="")
    return 0


def analyze_triangles(args):
    out = _out_dir(args)
    d, eps = io.load_disorder(args.disorder)
    sc = shift_coupling(d, eps)
    beta = _beta_for(args)
    rng = np.random.default_rng(args.seed)
    spins, tag, inputs = _spins_for(args, d, sc, beta, rng)
    tri = analytics.triangle_stats(spins, args.triples, args.tolerance, rng)
    stem = f"triangles_{tag}_T{1 / beta:.6g}"
    (out / f"{stem}.csv").write_text(tri.to_csv())
    (out / f"{stem}.svg").write_text(svg.triangle_svg(tri, f"triangles {tag} T={1 / beta:.3g}"))
    summary = {"source": tag, "temperature": 1 / beta, "n_triples": tri.n_triples,
               "tolerance": tri.tolerance, "fractions": tri.fractions}
    (out / f"{stem}.json").write_text(_dump(summary))
    _write_provenance(out, "analyze-triangles", args, [args.disorder, *inputs])
    print(_dump(tri.fractions), end="")
    return 0


def analyze_free_energy(args):
    out = _out_dir(args)
    d, eps = io.load_disorder(args.disorder)
    sc = shift_coupling(d, eps)
    if not (args.checkpoint and args.samples):
        raise UsageError("free-energy needs --checkpoint and --samples")
    model = io.load_flow(args.checkpoint)
    ss = io.load_sampleset(args.samples)
    if model.n_spins != d.n_spins or ss.n_spins != d.n_spins:
        raise UsageError("inputs have mismatched N")
    beta = ss.beta
    rng = np.random.default_rng(args.seed)
    if ss.xs is None:
        ss = build_continuous_dataset(ss, sc, rng)
    inputs = [args.disorder, args.checkpoint, args.samples]
    ladder_e = None
    if args.pt_summary:
        summary = json.loads(Path(args.pt_summary).read_text())
        ladder_e = list(zip(summary["betas"], summary["mean_energies"]))
        inputs.append(args.pt_summary)
    log_z_s, method = analytics.resolve_log_z_s(d, beta, ladder_e)
    sym = model.metadata.get("loss_kind") == "reverse" and not args.no_symmetrize
    report = analytics.kl_report(model, sc, beta, ss.xs, log_z_s, method, args.n_eval, rng, sym)
    (out / f"free_energy_T{1 / beta:.6g}.json").write_text(_dump(report.to_dict()))
    _write_provenance(out, "analyze-free-energy", args, inputs)
    print(_dump(report.to_dict()), end="")
    return 0


def analyze_layers(args):
    out = _out_dir(args)
    d, eps = io.load_disorder(args.disorder)
    sc = shift_coupling(d, eps)
    if not args.checkpoint:
        raise UsageError("layers needs --checkpoint")
    model = io.load_flow(args.checkpoint)
    if model.n_spins != d.n_spins:
        raise UsageError("checkpoint and disorder have different N")
    if args.temp is None:
        if "temperature" not in model.metadata:
            raise UsageError("--temp is required")
        args.temp = model.metadata["temperature"]
    beta = 1.0 / args.temp
    rng = np.random.default_rng(args.seed)
    rows = []
    for layer in range(model.n_layers + 1):
        probe = analytics.layer_probe(model, layer, args.n_flow_samples, sc, beta, rng,
                                      args.pairs, args.bins, args.triples, args.tolerance)
        (out / f"layer_{layer}_overlap.csv").write_text(probe.histogram.to_csv())
        (out / f"layer_{layer}_overlap.svg").write_text(
            svg.histogram_svg(probe.histogram, f"layer {layer}"))
        (out / f"layer_{layer}_triangles.csv").write_text(probe.triangles.to_csv())
        rows.append({"layer": layer, "modes": _mode_dict(probe.modes),
                     "triangle_fractions": probe.triangles.fractions})
    (out / "layers.json").write_text(_dump({"temperature": args.temp, "layers": rows}))
    _write_provenance(out, "analyze-layers", args, [args.disorder, args.checkpoint])
    for row in rows:
        print(f"layer {row['layer']}: peaks {[round(p, 3) for p in row['modes']['peaks']]}")
    return 0


# -- run (whole pipeline from an ExperimentConfig) ----------------------------

def cmd_run(args):
    try:
        cfg = config.load(args.config)
    except Exception as exc:  # schema violations are usage errors
        if isinstance(exc, OSError):
            raise
        raise UsageError(f"invalid config: {exc}") from exc
    out = Path(args.out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "experiment.resolved.json").write_text(config.dumps(cfg))
    dc, lc, pc, tc, ac = (cfg[k] for k in ("disorder", "ladder", "pt", "train", "analysis"))
    d = draw_sk_disorder(dc["n_spins"], dc["scale"], dc["seed"])
    sc = shift_coupling(d, dc["epsilon"])
    io.save_disorder(out / "disorder.gfc", d, dc["epsilon"])
    ladder = TemperatureLadder.geometric(lc["t_min"], lc["t_max"], lc["n_replicas"])
    run = run_pt(d, ladder, pc["burn_in"], pc["n_samples"], pc["seed"], n_threads=_threads(args))
    ladder_e = [(ss.beta, mean_energy(ss, d)[0]) for ss in run.samples]
    results = {"disorder_id": d.disorder_id, "temperatures": {}}
    for temp in tc["temperatures"]:
        try:
            slot = ladder.index_of_temperature(temp)
        except KeyError as exc:
            raise UsageError(str(exc)) from exc
        ss = build_continuous_dataset(run.samples[slot], sc,
                                      np.random.default_rng([pc["seed"], slot]))
        io.save_sampleset(out / sample_filename(temp), ss)
        beta = ss.beta
        rng = np.random.default_rng(ac["seed"])
        pt_hist = analytics.overlap_histogram(ss.spins, ac["pairs"], ac["bins"], rng, beta, "pt")
        entry = {"pt": {"modes": _mode_dict(analytics.mode_summary(pt_hist)),
                        "triangles": analytics.triangle_stats(ss.spins, ac["triples"],
                                                              ac["tolerance"], rng).fractions}}
        for loss in tc["losses"]:
            tcfg = TrainConfig(loss_kind=loss, learning_rate=tc["learning_rate"],
                               batch_size=tc["batch_size"], n_updates=tc["n_updates"], beta=beta,
                               symmetrize=tc["symmetrize"] and loss == "reverse", seed=tc["seed"],
                               checkpoint_every=tc["checkpoint_every"], clip_norm=tc["clip_norm"],
                               eval_batch=tc["eval_batch"])
            model = init_flow(d.n_spins, tc["n_layers"], seed=tc["seed"])
            model, trace = train(model, tcfg, sc=sc, data=ss.xs if loss == "forward" else None)
            stem = f"{loss}_T{temp:.6g}"
            io.save_flow(out / f"{stem}.gfc", model)
            (out / f"{stem}_loss.csv").write_text(trace.to_csv())
            spins = analytics.discretize(model.sample(ac["n_flow_samples"], rng), sc, beta, rng)
            hist = analytics.overlap_histogram(spins, ac["pairs"], ac["bins"], rng, beta,
                                               f"flow_{loss}_kl")
            (out / f"{stem}_overlap.csv").write_text(hist.to_csv())
            _, per_site = analytics.magnetization(spins)
            log_z_s, method = analytics.resolve_log_z_s(d, beta, ladder_e)
            rep = analytics.kl_report(model, sc, beta, ss.xs, log_z_s, method,
                                      tcfg.eval_batch, rng, tcfg.symmetrize)
            entry[loss] = {"modes": _mode_dict(analytics.mode_summary(hist)),
                           "mean_abs_site_magnetization": float(np.abs(per_site).mean()),
                           "triangles": analytics.triangle_stats(spins, ac["triples"],
                                                                 ac["tolerance"], rng).fractions,
                           "free_energy": rep.to_dict()}
        results["temperatures"][f"{temp:.6g}"] = entry
    (out / "results.json").write_text(_dump(results))
    print(f"wrote results to {out}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="glassflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-disorder", help="draw an SK instance")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--epsilon", type=float, default=0.01)
    g.add_argument("--out-dir", default=".")
    g.add_argument("--name", default="disorder.gfc")
    g.set_defaults(func=cmd_gen_disorder)

    s = sub.add_parser("sample-pt", help="parallel tempering sample sets, one file per temperature")
    s.add_argument("--disorder")
    s.add_argument("--n", type=int, help="draw an instance inline instead of --disorder")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--disorder-seed", type=int, default=0)
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--replicas", type=int, default=20)
    s.add_argument("--t-min", type=float, default=0.2)
    s.add_argument("--t-max", type=float, default=5.0)
    s.add_argument("--temps", type=float, nargs="+", help="explicit temperatures (overrides the geometric ladder)")
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--burn-in", type=int, default=None, help="default 10*N sweeps")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--emit-x", action="store_true", help="attach x ~ p(x|s) to every sample")
    s.add_argument("--threads", type=int, default=0, help="0 = all cores; results do not depend on it")
    s.add_argument("--backend", choices=kernels.BACKENDS)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_sample_pt)

    t = sub.add_parser("train", help="train a real NVP flow")
    t.add_argument("--loss", choices=("forward", "reverse"), required=True)
    t.add_argument("--disorder", required=True)
    t.add_argument("--data", nargs="*", default=[])
    t.add_argument("--temp", type=float)
    t.add_argument("--updates", type=int, default=250_000)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch", type=int, default=50)
    t.add_argument("--layers", type=int, default=4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-symmetrize", action="store_true")
    t.add_argument("--clip-norm", type=float)
    t.add_argument("--checkpoint-every", type=int, default=1000)
    t.add_argument("--eval-batch", type=int, default=10_000)
    t.add_argument("--threads", type=int, default=0)
    t.add_argument("--out-dir", default=".")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="overlap, triangle, free-energy and layer diagnostics")
    asub = a.add_subparsers(dest="suite", required=True)
    for name, func in (("overlap", analyze_overlap), ("triangles", analyze_triangles),
                       ("free-energy", analyze_free_energy), ("layers", analyze_layers)):
        q = asub.add_parser(name)
        q.add_argument("--disorder", required=True)
        q.add_argument("--source", choices=("pt", "flow"), default="pt")
        q.add_argument("--samples")
        q.add_argument("--checkpoint")
        q.add_argument("--temp", type=float)
        q.add_argument("--bins", type=int, default=analytics.DEFAULT_BINS)
        q.add_argument("--pairs", type=int, default=analytics.DEFAULT_PAIRS)
        q.add_argument("--triples", type=int, default=10_000)
        q.add_argument("--tolerance", type=float, default=analytics.DEFAULT_TOLERANCE)
        q.add_argument("--n-flow-samples", type=int, default=10_000)
        q.add_argument("--n-eval", type=int, default=10_000)
        q.add_argument("--pt-summary")
        q.add_argument("--no-symmetrize", action="store_true")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--threads", type=int, default=0)
        q.add_argument("--out-dir", default=".")
        q.set_defaults(func=func)

    r = sub.add_parser("run", help="whole pipeline from an ExperimentConfig JSON file")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.add_argument("--threads", type=int, default=0)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"glassflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"glassflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, io.FormatError) as exc:
        print(f"glassflow: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"glassflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

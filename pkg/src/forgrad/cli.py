"""Command-line surface.

Subcommands compose the library: dataset generation, training, attribution,
spectral analysis, the cutoff search, metric reports, ranking, and the four
analysis experiments. Exit codes: 0 success, 1 usage error, 2 data/format
error. All randomness flows from --seed and every output lands under --out,
next to a run-manifest.json recording seeds, hashes, and versions.

Split discipline: `sigma-search` reads only the validation split and
`evaluate` only the test split, so reported faithfulness is always computed
on images disjoint from those that chose the cutoff.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import attribution as attr
from .attribution import ALL_METHODS, MethodConfig, WHITE_BOX_METHODS
from .data import Dataset, gen_synthetic, load_dataset, load_idx, save_dataset
from .errors import ForgradError
from .experiments import (CONTROL_NAMES, experiment_layer_slopes,
                          experiment_metric_bias, experiment_sanity,
                          experiment_taylor)
from .metrics import MetricConfig
from .nn import (PRESET_NAMES, TrainConfig, accuracy, load_model, make_preset,
                 save_model, train)
from .nn.network import forward
from .repair import (SigmaGrid, read_sigma_json, sigma_search, write_sigma_json)
from .report import (evaluate_method, file_hash, rank_methods, write_report_csv,
                     write_report_json)
from .spectral import (power_slope, radial_signature, signature_to_csv)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="forgrad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="subcommand")

    def add(name, help_text, model=False, data=False, method=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--config", help="JSON file with metric/method/train sections")
        if model:
            sp.add_argument("--model", required=True, help="model file path")
        if data:
            sp.add_argument("--data", required=True,
                            help="synthetic:N | idx:IMAGES,LABELS | dataset .npz path")
        if method:
            sp.add_argument("--method", default="saliency",
                            help=f"one of {', '.join(ALL_METHODS)}")
        return sp

    add("gen-data", "generate or ingest a dataset and save it", data=True)

    sp = add("train", "train a preset architecture", data=True)
    sp.add_argument("--preset", default="cnn-max", choices=PRESET_NAMES)

    sp = add("attribute", "attribution maps over the test split",
             model=True, data=True, method=True)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--sigma-file")
    sp.add_argument("--mode", default="gradient", choices=("gradient", "map"))
    sp.add_argument("--n-images", type=int, default=50)

    sp = add("spectrum", "radial Fourier signature of attribution maps",
             model=True, data=True, method=True)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--n-images", type=int, default=50)

    sp = add("slope", "power/frequency slope from a signature CSV")
    sp.add_argument("--signature", required=True, help="signature.csv path")

    sp = add("sigma-search", "optimal cutoff search on the validation split",
             model=True, data=True, method=True)
    sp.add_argument("--grid", help="comma-separated descending sigmas")
    sp.add_argument("--mode", default="gradient", choices=("gradient", "map"))
    sp.add_argument("--n-images", type=int, default=200)

    sp = add("evaluate", "metric report on the test split", model=True, data=True)
    sp.add_argument("--method", default=",".join(WHITE_BOX_METHODS),
                    help="comma-separated method names")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--sigma-file")
    sp.add_argument("--mode", default="gradient", choices=("gradient", "map"))
    sp.add_argument("--baseline", default="zero", choices=("zero", "noise"))
    sp.add_argument("--n-images", type=int, default=50)

    sp = add("rank", "order methods by aggregate score from a report")
    sp.add_argument("--report", required=True, help="report.json path")

    sp = add("experiment", "run an analysis experiment",
             model=True, data=True, method=True)
    sp.add_argument("name", choices=("taylor", "slopes", "sanity", "bias"))
    sp.add_argument("--sigma", type=float, default=12.0)
    sp.add_argument("--n-images", type=int)
    return p


def _load_config(path):
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _metric_cfg(args, cfg) -> MetricConfig:
    fields = dict(cfg.get("metric", {}))
    fields.setdefault("seed", args.seed)
    if getattr(args, "baseline", None):
        fields["baseline_mode"] = ("uniform_noise" if args.baseline == "noise"
                                   else args.baseline)
    return MetricConfig(**fields)


def _method_cfg(args, cfg) -> MethodConfig:
    fields = dict(cfg.get("method", {}))
    fields.setdefault("seed", args.seed)
    return MethodConfig(**fields)


def _resolve_data(spec: str, seed: int) -> Dataset:
    if spec.startswith("synthetic:"):
        return gen_synthetic(int(spec.split(":", 1)[1]), seed=seed)
    if spec.startswith("idx:"):
        paths = spec.split(":", 1)[1].split(",")
        if len(paths) != 2:
            raise UsageError("--data idx: needs IMAGES,LABELS")
        return load_idx(paths[0], paths[1], seed=seed)
    return load_dataset(spec)


def _sigma_from_args(args):
    """(sigma, mode, methods-it-applies-to) from --sigma/--sigma-file."""
    if getattr(args, "sigma", None) is not None:
        return float(args.sigma), args.mode, None
    path = getattr(args, "sigma_file", None)
    if path:
        record = read_sigma_json(path)
        return float(record["sigma_star"]), record.get("mode", "gradient"), \
            record.get("method")
    return None, args.mode, None


def _manifest(out: Path, args, inputs: dict, outputs: list):
    record = {
        "tool": "forgrad",
        "version": __version__,
        "numpy": np.__version__,
        "command": args.command,
        "seed": args.seed,
        "inputs": inputs,
        "outputs": {name: file_hash(out / name) for name in outputs},
    }
    with open(out / "run-manifest.json", "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def _predicted_classes(net, images):
    return [int(np.argmax(forward(net, x).logits)) for x in images]


def _cmd_gen_data(args, cfg, out: Path):
    ds = _resolve_data(args.data, args.seed)
    save_dataset(ds, out / "dataset.npz")
    print(f"wrote dataset.npz: {len(ds.images)} images, "
          f"splits {sorted(ds.splits)}, source {ds.source}")
    return {"data": args.data}, ["dataset.npz"]


def _cmd_train(args, cfg, out: Path):
    ds = _resolve_data(args.data, args.seed)
    fields = dict(cfg.get("train", {}))
    fields.setdefault("learning_rate", 0.2)
    fields.setdefault("epochs", 10)
    fields.setdefault("seed", args.seed)
    tcfg = TrainConfig(**fields)
    net = make_preset(args.preset, seed=args.seed)
    xs, ys = ds.subset("train")
    net, history = train(net, xs, ys, tcfg)
    save_model(net, out / "model.bin")
    xt, yt = ds.subset("test")
    acc = accuracy(net, xt, yt)
    with open(out / "train.json", "w") as f:
        json.dump({"preset": args.preset, "loss_history": history,
                   "test_accuracy": acc}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"trained {args.preset}: final loss {history[-1]:.4f}, "
          f"test accuracy {acc:.3f}")
    return {"data": args.data}, ["model.bin", "train.json"]


def _maps_over(net, images, method, mcfg, sigma, mode):
    maps, classes = [], []
    for x in images:
        c = int(np.argmax(forward(net, x).logits))
        if sigma is not None and method in WHITE_BOX_METHODS:
            from .repair import attribute_filtered
            amap = attribute_filtered(net, x, c, method, sigma, mode, mcfg)
        else:
            amap = attr.compute(method, net, x, c, cfg=mcfg)
        maps.append(amap.values)
        classes.append(c)
    return np.array(maps), np.array(classes)


def _cmd_attribute(args, cfg, out: Path):
    net = load_model(args.model)
    ds = _resolve_data(args.data, args.seed)
    xs, _ = ds.subset("test")
    xs = xs[: args.n_images]
    sigma, mode, _ = _sigma_from_args(args)
    maps, classes = _maps_over(net, xs, args.method, _method_cfg(args, cfg),
                               sigma, mode)
    np.savez_compressed(out / "attributions.npz", maps=maps, classes=classes,
                        method=np.array(args.method),
                        sigma=np.array(np.nan if sigma is None else sigma))
    print(f"wrote attributions.npz: {len(maps)} {args.method} maps"
          + (f" (sigma={sigma:g}, {mode})" if sigma is not None else ""))
    return {"model": file_hash(args.model), "data": args.data}, ["attributions.npz"]


def _cmd_spectrum(args, cfg, out: Path):
    net = load_model(args.model)
    ds = _resolve_data(args.data, args.seed)
    xs, _ = ds.subset("test")
    xs = xs[: args.n_images]
    maps, _ = _maps_over(net, xs, args.method, _method_cfg(args, cfg),
                         args.sigma, "gradient")
    sig = radial_signature(maps)
    signature_to_csv(sig, out / "signature.csv")
    print(f"wrote signature.csv: {len(sig.radii)} radii over {sig.n_images} maps")
    return {"model": file_hash(args.model), "data": args.data}, ["signature.csv"]


def _read_signature_csv(path):
    from .spectral import FourierSignature
    with open(path) as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ForgradError(f"{path}: empty signature file")
    return FourierSignature(
        radii=np.array([int(r["radius"]) for r in rows]),
        amplitude=np.array([float(r["amplitude"]) for r in rows]),
        n_images=int(rows[0]["n_images"]))


def _cmd_slope(args, cfg, out: Path):
    sig = _read_signature_csv(args.signature)
    slope = power_slope(sig)
    with open(out / "slopes.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["slope", "intercept", "r_squared", "n_images"])
        wr.writerow([repr(slope.slope), repr(slope.intercept),
                     repr(slope.r_squared), sig.n_images])
    print(f"slope {slope.slope:.4f} (r^2 {slope.r_squared:.3f})")
    return {"signature": file_hash(args.signature)}, ["slopes.csv"]


def _cmd_sigma_search(args, cfg, out: Path):
    net = load_model(args.model)
    ds = _resolve_data(args.data, args.seed)
    xs, _ = ds.subset("val")  # never the test split: cutoff choice stays disjoint
    xs = xs[: args.n_images]
    side = min(net.input_shape[1], net.input_shape[2])
    grid = (SigmaGrid(tuple(float(v) for v in args.grid.split(",")))
            if args.grid else SigmaGrid.default(side))
    grid.validate_for(side)
    result = sigma_search(net, xs, _predicted_classes(net, xs), args.method,
                          grid, mode=args.mode,
                          metric_cfg=_metric_cfg(args, cfg),
                          method_cfg=_method_cfg(args, cfg),
                          model_name=str(args.model))
    write_sigma_json(result, out / "sigma.json",
                     model_hash=file_hash(args.model),
                     split_manifest_hash=ds.manifest_hash())
    print(f"sigma* = {result.sigma_star:g} for {args.method} "
          f"({result.n_images} validation images)")
    return {"model": file_hash(args.model), "data": args.data}, ["sigma.json"]


def _cmd_evaluate(args, cfg, out: Path):
    net = load_model(args.model)
    ds = _resolve_data(args.data, args.seed)
    xs, _ = ds.subset("test")  # never the val split: report stays out-of-sample
    xs = xs[: args.n_images]
    sigma, mode, sigma_method = _sigma_from_args(args)
    methods = [m for m in args.method.split(",") if m]
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise UsageError(f"unknown methods: {', '.join(unknown)}")
    metric_cfg = _metric_cfg(args, cfg)
    method_cfg = _method_cfg(args, cfg)
    reports = []
    for method in methods:
        applies = sigma is not None and method in WHITE_BOX_METHODS and \
            (sigma_method is None or sigma_method == method)
        reports.append(evaluate_method(
            net, xs, method, metric_cfg=metric_cfg, method_cfg=method_cfg,
            sigma=sigma if applies else None, mode=mode))
    model_hash = file_hash(args.model)
    write_report_json(reports, out / "report.json", model_hash=model_hash)
    write_report_csv(reports, out / "report.csv")
    for r in reports:
        print(f"{r.method} [{r.provenance}]: F={r.faithfulness:.4f} "
              f"muF={r.mu_fidelity:.4f} S={r.sensitivity:.4f} "
              f"aggregate={r.aggregate:.4f}")
    return {"model": model_hash, "data": args.data}, ["report.json", "report.csv"]


def _cmd_rank(args, cfg, out: Path):
    record = json.load(open(args.report))
    rows = sorted(record["methods"], key=lambda m: m["aggregate"], reverse=True)
    with open(out / "rank.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["rank", "method", "provenance", "aggregate"])
        for i, m in enumerate(rows, start=1):
            wr.writerow([i, m["method"], m["provenance"], repr(m["aggregate"])])
    for i, m in enumerate(rows, start=1):
        print(f"{i}. {m['method']} [{m['provenance']}] "
              f"aggregate={m['aggregate']:.4f}")
    return {"report": file_hash(args.report)}, ["rank.csv"]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        wr.writerows(rows)


def _cmd_experiment(args, cfg, out: Path):
    net = load_model(args.model)
    ds = _resolve_data(args.data, args.seed)
    xs, _ = ds.subset("test")
    inputs = {"model": file_hash(args.model), "data": args.data}
    if args.name == "taylor":
        xs = xs[: args.n_images or 100]
        side = min(net.input_shape[1], net.input_shape[2])
        rep = experiment_taylor(net, xs, SigmaGrid.default(side), seed=args.seed)
        rows = [[s, "filtered", f"{sg:g}", repr(rep.filtered[(s, sg)])]
                for s in rep.epsilon_scales for sg in rep.sigma_grid]
        rows += [[s, "control", name, repr(rep.controls[(s, name)])]
                 for s in rep.epsilon_scales for name in CONTROL_NAMES]
        _write_rows(out / "taylor.csv",
                    ["epsilon_scale", "family", "condition", "zeta_ratio"], rows)
        print(f"wrote taylor.csv over {rep.n_images} images")
        return inputs, ["taylor.csv"]
    if args.name == "slopes":
        xs = xs[: args.n_images or 50]
        variants = {"trained": net}
        for preset in ("cnn-max", "cnn-avg", "cnn-stride1", "cnn-stride2",
                       "cnn-stride4"):
            variants[f"untrained-{preset}"] = make_preset(preset, seed=args.seed)
        rep = experiment_layer_slopes(variants, xs)
        rows = [[name, i, kind, repr(slope)]
                for name, entries in rep.slopes.items()
                for i, kind, slope in entries]
        _write_rows(out / "slopes.csv",
                    ["variant", "layer_index", "layer_kind", "slope"], rows)
        print(f"wrote slopes.csv over {rep.n_images} images")
        return inputs, ["slopes.csv"]
    if args.name == "sanity":
        xs = xs[: args.n_images or 50]
        rep = experiment_sanity(net, xs, args.method, args.sigma, seed=args.seed,
                                cfg=_method_cfg(args, cfg))
        rows = [[d, repr(u), repr(fl)] for d, u, fl in
                zip(rep.depths, rep.unfiltered, rep.filtered)]
        _write_rows(out / "sanity.csv",
                    ["randomized_layers", "spearman_unfiltered",
                     "spearman_filtered"], rows)
        print(f"wrote sanity.csv for {args.method} (sigma={args.sigma:g})")
        return inputs, ["sanity.csv"]
    # bias
    xs = xs[: args.n_images or 200]
    rep = experiment_metric_bias(net, xs, seed=args.seed)
    _write_rows(out / "bias.csv",
                ["n_pairs", "mu_fidelity_blob", "mu_fidelity_dispersed",
                 "faithfulness_blob", "faithfulness_dispersed"],
                [[rep.n_pairs, repr(rep.mu_fidelity_blob),
                  repr(rep.mu_fidelity_dispersed), repr(rep.faithfulness_blob),
                  repr(rep.faithfulness_dispersed)]])
    print(f"wrote bias.csv over {rep.n_pairs} pairs "
          f"(muF gap {rep.mu_fidelity_dispersed - rep.mu_fidelity_blob:+.4f})")
    return inputs, ["bias.csv"]


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "attribute": _cmd_attribute,
    "spectrum": _cmd_spectrum,
    "slope": _cmd_slope,
    "sigma-search": _cmd_sigma_search,
    "evaluate": _cmd_evaluate,
    "rank": _cmd_rank,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        cfg = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = _COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"forgrad: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ForgradError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"forgrad: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _manifest(out, args, inputs, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())

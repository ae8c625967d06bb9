"""Command-line entry point.

Subcommands: gen-data, extract-features, train, generate, audit, repair,
evaluate, serve.  Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ivsgen import arbitrage, cvae, dataset, evaluation, repair, server
from ivsgen.errors import DomainError, FormatError, NumericalError
from ivsgen.features import (
    FEATURE_NAMES,
    FeatureVector,
    extract_features,
)
from ivsgen.surfaces import make_grid, read_surface_set, write_surface_set


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-m", type=int, default=28)
    p.add_argument("--n-tau", type=int, default=28)
    p.add_argument("--m-min", type=float, default=-0.27)
    p.add_argument("--m-max", type=float, default=0.27)
    p.add_argument("--tau-min", type=float, default=0.1)
    p.add_argument("--tau-max", type=float, default=0.6)


def _grid_from_args(args):
    return make_grid(
        n_m=args.n_m, n_tau=args.n_tau,
        m_min=args.m_min, m_max=args.m_max,
        tau_min=args.tau_min, tau_max=args.tau_max,
    )


def _parse_features(text: str) -> tuple[str, ...]:
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    unknown = set(names) - set(FEATURE_NAMES)
    if unknown:
        raise DomainError(f"unknown feature names: {sorted(unknown)}")
    if not names:
        raise DomainError("at least one feature name required")
    return names


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


# --------------------------------------------------------------------------
# subcommand handlers
# --------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = dataset.SamplerConfig(
        n_heston=args.n_heston, n_sabr=args.n_sabr,
        grid=_grid_from_args(args), seed=args.seed,
    )
    result = dataset.build_dataset(cfg, out_dir=args.out)
    print(f"wrote {len(result.surfaces)} surfaces to {args.out} "
          f"({result.retries} retries)")
    return 0


def cmd_extract_features(args) -> int:
    which = _parse_features(args.which)
    surfaces, _ = read_surface_set(args.input)
    rows = [extract_features(s, which=which).as_dict() for s in surfaces]
    _write_json(args.out, {"feature_names": list(which), "labels": rows})
    print(f"extracted {len(rows)} label rows to {args.out}")
    return 0


def _load_labels(path, names) -> list[FeatureVector]:
    doc = json.loads(Path(path).read_text())
    return [
        FeatureVector(names=tuple(names), values=np.array([row[n] for n in names]))
        for row in doc["labels"]
    ]


def cmd_train(args) -> int:
    features = _parse_features(args.features)
    surfaces, stored_labels = read_surface_set(args.data)
    if stored_labels:
        labels = [
            FeatureVector(names=features, values=np.array([lab[n] for n in features]))
            for lab in stored_labels
        ]
    else:
        labels = [extract_features(s, which=features) for s in surfaces]
    model = cvae.build_model(
        surfaces[0].grid, feature_names=features, d_z=args.d_z,
        beta=args.beta, seed=args.seed,
    )
    log = cvae.train(
        model, surfaces, labels, epochs=args.epochs,
        batch_size=args.batch, seed=args.seed, learning_rate=args.lr,
    )
    cvae.save_checkpoint(model, args.out)
    _write_json(Path(args.out) / "train_log.json", log)
    last = log[-1] if log else {}
    print(f"trained {args.epochs} epochs; final: {last}; checkpoint at {args.out}")
    return 0


def cmd_generate(args) -> int:
    model = cvae.load_checkpoint(args.ckpt)
    y_doc = json.loads(args.y if args.y.lstrip().startswith("{") else Path(args.y).read_text())
    y = FeatureVector(
        names=model.feature_names,
        values=np.array([float(y_doc[n]) for n in model.feature_names]),
    )
    if args.z is not None:
        z_doc = json.loads(args.z)
        surfaces = [cvae.decode(model, y, np.asarray(z_doc, dtype=np.float64))]
    else:
        rng = np.random.default_rng(args.seed)
        surfaces = [
            cvae.decode(model, y, rng.standard_normal(model.d_z))
            for _ in range(args.n)
        ]
    write_surface_set(args.out, surfaces)
    print(f"wrote {len(surfaces)} generated surfaces to {args.out}")
    return 0


def cmd_audit(args) -> int:
    surfaces, _ = read_surface_set(args.input)
    reports = [arbitrage.audit(s).to_dict() for s in surfaces]
    n_bad = sum(not r["is_free"] for r in reports)
    _write_json(args.report, {
        "count": len(reports),
        "violating": n_bad,
        "reports": reports,
    })
    print(f"audited {len(reports)} surfaces: {n_bad} violating; report at {args.report}")
    return 0


def cmd_repair(args) -> int:
    model = cvae.load_checkpoint(args.ckpt)
    surfaces, _ = read_surface_set(args.input)
    labels = _load_labels(args.y, model.feature_names)
    if len(labels) != len(surfaces):
        raise DomainError(
            f"{len(surfaces)} surfaces but {len(labels)} label rows"
        )
    repaired_surfaces = []
    stats = []
    for surface, y in zip(surfaces, labels):
        z0 = cvae.encode(model, surface, y).mu_z
        result = repair.repair_surface(model, y, z0)
        repaired_surfaces.append(result.surface)
        stats.append({
            "repaired": result.repaired,
            "converged": result.converged,
            "iterations": result.iterations,
            "feature_drift": result.feature_drift,
            "l_calendar_before": result.before_report.l_calendar,
            "l_butterfly_before": result.before_report.l_butterfly,
            "l_calendar_after": result.after_report.l_calendar,
            "l_butterfly_after": result.after_report.l_butterfly,
        })
    write_surface_set(args.out, repaired_surfaces)
    n_fixed = sum(s["repaired"] for s in stats)
    _write_json(args.report, {"count": len(stats), "repaired": n_fixed, "cases": stats})
    print(f"repaired {n_fixed}/{len(stats)} surfaces; outputs at {args.out}, {args.report}")
    return 0


def _label_matrix_from_config(model, config):
    path = config.get("labels")
    if not path:
        raise DomainError("experiment config needs a 'labels' path (labels.json)")
    doc = json.loads(Path(path).read_text())
    return np.array([[row.get(n, 0.0) for n in FEATURE_NAMES] for row in doc["labels"]])


def cmd_evaluate(args) -> int:
    model = cvae.load_checkpoint(args.ckpt)
    config = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.experiment == "control":
        label_mat = _label_matrix_from_config(model, config)
        report = evaluation.control_error_experiment(
            model, n=config.get("n", 200), label_mat=label_mat,
            z_regime=config.get("z_regime", "central"), seed=config.get("seed", 0),
        )
        if args.plots:
            _plot_histograms(report, args.plots)
    elif args.experiment == "traversal":
        y_base = FeatureVector(
            names=model.feature_names,
            values=np.array([config["y_base"][n] for n in model.feature_names]),
        )
        rows = evaluation.traversal(
            model,
            vary=config.get("vary", "z"),
            coordinate=config.get("coordinate", 0),
            values=config.get("values", np.linspace(-2, 2, 9).tolist()),
            y_base=y_base,
            z_base=np.asarray(config.get("z_base", [0.0] * model.d_z)),
        )
        report = evaluation.ExperimentReport(traversal_table=rows,
                                             metadata={"experiment": "traversal"})
        if args.plots:
            _plot_traversal(report, args.plots)
    elif args.experiment == "census":
        label_mat = _label_matrix_from_config(model, config)
        report = evaluation.violation_census(
            model, n=config.get("n", 200), label_mat=label_mat,
            y_regime=config.get("y_regime", "in-hull"),
            z_regime=config.get("z_regime", "central"),
            seed=config.get("seed", 0),
            do_repair=config.get("repair", True),
        )
    else:  # pragma: no cover - argparse choices guard this
        raise DomainError(f"unknown experiment {args.experiment!r}")
    _write_json(args.out, report.to_dict())
    print(f"experiment '{args.experiment}' report at {args.out}")
    return 0


def _plot_histograms(report, plots_dir) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(plots_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (counts, edges) in report.histograms.items():
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.stairs(counts, edges, fill=True)
        ax.set_xlabel(f"log10 |{name} error|")
        ax.set_ylabel("count")
        fig.tight_layout()
        fig.savefig(out / f"control_error_{name}.svg")
        plt.close(fig)


def _plot_traversal(report, plots_dir) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(plots_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = report.traversal_table
    xs = [r["value"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3))
    for name in FEATURE_NAMES:
        ax.plot(xs, [r[name] for r in rows], label=name)
    ax.set_xlabel("traversed coordinate")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "traversal.svg")
    plt.close(fig)


def cmd_serve(args) -> int:
    cfg = server.ServerConfig(
        host=args.host, port=args.port,
        checkpoint_path=args.ckpt, enable_repair=not args.no_repair,
    )
    server.serve(cfg)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivsgen",
        description="Implied-volatility-surface synthesis, feature-controlled "
                    "generation, arbitrage audit and repair.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a Heston+SABR dataset")
    p.add_argument("--n-heston", type=int, default=1000)
    p.add_argument("--n-sabr", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .ivsd directory")
    _add_grid_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("extract-features", help="extract shape features to labels.json")
    p.add_argument("--in", dest="input", required=True, help="input .ivsd directory")
    p.add_argument("--which", default=",".join(FEATURE_NAMES))
    p.add_argument("--out", required=True, help="output labels.json")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", help="train the feature-controlled generator")
    p.add_argument("--data", required=True, help="input .ivsd directory")
    p.add_argument("--features", default="level")
    p.add_argument("--beta", type=float, default=cvae.DEFAULT_BETA)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-z", type=int, default=5)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode surfaces for target features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--y", required=True, help="inline JSON object or path")
    p.add_argument("--z", default=None, help="inline JSON list (optional)")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .ivsd directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("audit", help="static-arbitrage audit of stored surfaces")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--report", required=True, help="output report.json")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("repair", help="latent-space repair of violating surfaces")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="violating .ivsd")
    p.add_argument("--y", required=True, help="labels.json aligned with input")
    p.add_argument("--out", required=True, help="repaired .ivsd")
    p.add_argument("--report", required=True, help="repair_stats.json")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("evaluate", help="run an experiment protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--experiment", required=True,
                   choices=["control", "traversal", "census"])
    p.add_argument("--config", default=None, help="experiment config JSON path")
    p.add_argument("--out", required=True, help="report.json")
    p.add_argument("--plots", default=None, help="SVG output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", default=None,
                   help=f"checkpoint directory (default ${server.CHECKPOINT_ENV_VAR})")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--no-repair", action="store_true")
    p.set_defaults(func=cmd_serve)

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors with code 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DomainError, NumericalError, FormatError, FileNotFoundError,
            KeyError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()

"""Command-line front end.

Subcommands cover the individual tools (noise generation, RB runs, model
calibration, dataset generation, training, prediction) and the cached
end-to-end pipeline. Every generating command takes an explicit --seed;
none default to wall-clock entropy. Exit codes: 0 success, 2 config
error, 3 stage failure, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from . import neuralnet as nn
from . import noisegen
from . import pipeline as pl
from . import rbsim
from .seeds import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_DIVERGENCE = 4


def _read_curve_csv(path: Path, column: str | None = None) -> np.ndarray:
    """Read a curve from CSV: second column by default, or a named one."""
    try:
        with path.open() as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise pl.ConfigError(f"cannot read curve file {path}: {exc}") from exc
    if len(rows) < 2:
        raise pl.ConfigError(f"curve file {path} has no data rows")
    header = rows[0]
    if column is None:
        idx = 1
    else:
        if column not in header:
            raise pl.ConfigError(f"curve file {path} has no column {column!r}")
        idx = header.index(column)
    try:
        return np.array([float(r[idx]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise pl.ConfigError(f"malformed curve file {path}: {exc}") from exc


def _load_config(path: str) -> pl.PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise pl.ConfigError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise pl.ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    return pl.PipelineConfig.from_dict(doc)


def _config_from_args(args) -> pl.PipelineConfig:
    if args.config:
        config = _load_config(args.config)
        if args.out_dir:
            config.out_dir = Path(args.out_dir)
        if args.seed is not None:
            config.seed = args.seed
        return config
    if args.preset:
        if args.seed is None or not args.out_dir:
            raise pl.ConfigError("--preset needs --seed and --out-dir")
        factory = {"desk": pl.desk_config, "paper": pl.paper_config}[args.preset]
        return factory(args.seed, args.out_dir)
    raise pl.ConfigError("give either --config or --preset")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_gen_noise(args) -> int:
    spec = noisegen.NoiseSpectrum(amplitude=args.amp, exponent=args.alpha)
    trace = noisegen.generate_trace(spec, args.n, args.dt, seed=args.seed)
    noisegen.write_trace_csv(trace, spec, args.out)
    if args.psd:
        traces = [
            noisegen.generate_trace(spec, args.n, args.dt, seed=derive_seed(args.seed, k))
            for k in range(args.traces)
        ]
        noisegen.write_psd_csv(noisegen.estimate_psd(traces), args.psd)
    return EXIT_OK


def cmd_run_rb(args) -> int:
    spec = noisegen.NoiseSpectrum(amplitude=args.amp, exponent=args.alpha)
    if args.model in ("dcg", "both"):
        if not args.models:
            raise pl.ConfigError(
                "--model dcg/both needs a calibrated pair: run `rbspectro calibrate` "
                "and pass --models"
            )
        uncorrected, corrected = rbsim.load_models(Path(args.models))
    else:
        uncorrected = rbsim.uncorrected_model()
        corrected = None

    seq_seed = derive_seed(args.seed, 0)
    rows: dict[str, np.ndarray] = {}
    if args.model in ("raw", "both"):
        rows["F_uncorrected"] = rbsim.average_rb(
            spec, uncorrected, args.runs, args.gates,
            seed=derive_seed(args.seed, 1), sequence_seed=seq_seed,
        ).fidelities
    if args.model in ("dcg", "both"):
        rows["F_corrected"] = rbsim.average_rb(
            spec, corrected, args.runs, args.gates,
            seed=derive_seed(args.seed, 2), sequence_seed=seq_seed,
        ).fidelities
    if args.model == "both":
        rows["kappa"] = rows["F_corrected"] / np.maximum(rows["F_uncorrected"], 1e-6)

    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n"] + list(rows))
        for i in range(args.gates):
            writer.writerow([i + 1] + [repr(float(v[i])) for v in rows.values()])
    return EXIT_OK


def cmd_calibrate(args) -> int:
    unc, corr = rbsim.calibrate_models(
        reference_amp=args.reference_amp,
        target_crossover=args.target_crossover,
        n_runs=args.runs,
        n_gates=args.gates,
        seed=args.seed,
    )
    rbsim.save_models(
        unc, corr, args.out,
        metadata={
            "reference_amp": args.reference_amp,
            "target_crossover": args.target_crossover,
            "n_runs": args.runs,
            "n_gates": args.gates,
            "seed": args.seed,
        },
    )
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    grid_path = Path(args.grid)
    if not grid_path.exists():
        raise pl.ConfigError(f"grid file {grid_path} does not exist")
    try:
        grid_cfg = json.loads(grid_path.read_text())
    except json.JSONDecodeError as exc:
        raise pl.ConfigError(f"grid file is not valid JSON: {exc}") from exc
    kind = dsmod.KIND_ALPHA if args.kind == "alpha" else dsmod.KIND_AMPLITUDE
    grid = pl.grid_from_config(grid_cfg, kind, base_seed=args.seed)

    models_path = Path(args.models)
    if not models_path.exists():
        raise pl.ConfigError(f"models file {models_path} does not exist")
    pair = rbsim.load_models(models_path)
    if kind == dsmod.KIND_ALPHA:
        built = dsmod.build_alpha_dataset(
            grid, pair, workers=args.workers, checkpoint_path=args.checkpoint)
    else:
        built = dsmod.build_amplitude_dataset(
            grid, pair[0], workers=args.workers, checkpoint_path=args.checkpoint)
    dsmod.save_dataset(built, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    data = dsmod.load_dataset(Path(args.data))
    holdout = dsmod.load_dataset(Path(args.holdout))
    if data.kind != holdout.kind:
        raise pl.ConfigError(
            f"dataset kind {data.kind!r} does not match holdout kind {holdout.kind!r}"
        )
    hp = nn.Hyperparams(
        learning_rate=args.learning_rate,
        bin_size=args.bin_size,
        n_epochs=args.epochs,
        n_neurons=args.neurons,
        n_hidden_layers=args.hidden_layers,
    )
    make = nn.make_alpha_network if data.kind == dsmod.KIND_ALPHA else nn.make_amplitude_network
    net = make(data.grid.n_gates, hp, seed=args.seed)
    trained, report = nn.train(net, data.examples, hp, holdout.examples,
                               seed=(args.seed, 1))
    nn.save_network(trained, args.out)
    if args.history:
        label = "delta" if data.kind == dsmod.KIND_ALPHA else "rel_error"
        nn.write_history_csv(report.error_history, args.history, label=label)
    print(f"final held-out error: {report.error_history[-1]:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    kappa = fidelity = None
    alpha_net = amp_net = None
    if args.rb_csv:
        kappa = _read_curve_csv(Path(args.rb_csv), column="kappa")
        fidelity = _read_curve_csv(Path(args.rb_csv), column="F_uncorrected")
    if args.kappa_csv:
        kappa = _read_curve_csv(Path(args.kappa_csv))
    if args.fidelity_csv:
        fidelity = _read_curve_csv(Path(args.fidelity_csv))
    if args.alpha_net:
        alpha_net = nn.load_network(Path(args.alpha_net))
    if args.amp_net:
        amp_net = nn.load_network(Path(args.amp_net))
    if kappa is None and fidelity is None:
        raise pl.ConfigError("no input curves: give --rb-csv, --kappa-csv, or --fidelity-csv")
    if kappa is not None and alpha_net is None:
        kappa = None
    if fidelity is not None and amp_net is None:
        fidelity = None
    try:
        result = pl.predict_from_curves(
            kappa, fidelity, alpha_net, amp_net,
            true_alpha=args.true_alpha, true_amplitude=args.true_amp,
        )
    except (nn.EncodingMismatchError, nn.NetworkLayoutError) as exc:
        raise pl.ConfigError(str(exc)) from exc
    doc = result.to_dict()
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_run_pipeline(args) -> int:
    config = _config_from_args(args)
    summary = pl.run_pipeline(config)
    print(json.dumps(summary["metrics"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_depth_experiment(args) -> int:
    config = _config_from_args(args)
    report = pl.depth_experiment(config)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export_csv(args) -> int:
    data = dsmod.load_dataset(Path(args.data))
    dsmod.export_csv(data, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbspectro",
        description="Randomized-benchmarking noise spectroscopy toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-noise", help="synthesize a 1/f^alpha noise trace")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--amp", type=float, required=True, help="dimensionless amplitude A*t0")
    p.add_argument("--n", type=int, required=True, help="trace length (power of two)")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--psd", help="also write an averaged-periodogram CSV here")
    p.add_argument("--traces", type=int, default=100, help="traces averaged for --psd")
    p.set_defaults(fn=cmd_gen_noise)

    p = sub.add_parser("run-rb", help="run randomized-benchmarking averages")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--amp", type=float, required=True)
    p.add_argument("--model", choices=["raw", "dcg", "both"], default="both")
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--gates", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--models", help="calibrated model JSON (needed for dcg/both)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run_rb)

    p = sub.add_parser("calibrate", help="calibrate the corrected/uncorrected pair")
    p.add_argument("--out", required=True)
    p.add_argument("--reference-amp", type=float, default=1e-3)
    p.add_argument("--target-crossover", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--gates", type=int, default=200)
    p.add_argument("--seed", type=int, default=rbsim.CALIBRATION_SEED)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("gen-dataset", help="generate a labeled training dataset")
    p.add_argument("--kind", choices=["alpha", "amp"], required=True)
    p.add_argument("--grid", required=True, help="grid config JSON")
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint", help="checkpoint file for resumable builds")
    p.set_defaults(fn=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a network on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--holdout", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="per-epoch error CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--learning-rate", type=float, default=0.005)
    p.add_argument("--bin-size", type=int, default=10)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--neurons", type=int, default=50)
    p.add_argument("--hidden-layers", type=int, default=2)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="predict (alpha, A) from curve files")
    p.add_argument("--rb-csv", help="run-rb output with kappa and F_uncorrected columns")
    p.add_argument("--kappa-csv", help="two-column (n, kappa) CSV")
    p.add_argument("--fidelity-csv", help="two-column (n, F) CSV")
    p.add_argument("--alpha-net")
    p.add_argument("--amp-net")
    p.add_argument("--true-alpha", type=float)
    p.add_argument("--true-amp", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    for name, fn in [("run-pipeline", cmd_run_pipeline),
                     ("depth-experiment", cmd_depth_experiment)]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--preset", choices=["desk", "paper"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.set_defaults(fn=fn)

    p = sub.add_parser("export-csv", help="export a binary dataset as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_csv)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except pl.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (noisegen.NoiseGenError, nn.NetworkLayoutError, nn.EncodingMismatchError,
            rbsim.GateModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except nn.TrainingDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except pl.StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (rbsim.CalibrationError, dsmod.DatasetIOError, OSError, ValueError,
            RuntimeError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end spectroscopy workflow with cached, resumable stages.

The pipeline runs calibrate -> generate datasets -> train both networks
-> evaluate, writing every artifact under one output directory. Each
stage is keyed by a content hash of its config slice plus the hashes of
its upstream artifacts; a rerun with an unchanged key and intact
artifacts is skipped, so editing training hyperparameters never repeats
dataset generation. All artifacts embed the hash of the config that
produced them, and reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import neuralnet as nn
from . import rbsim


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; earlier cached stages remain reusable."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    workers: int
    calibration: dict
    alpha_dataset: dict
    amplitude_dataset: dict
    alpha_network: dict
    amplitude_network: dict

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        missing = [
            k
            for k in (
                "seed", "out_dir", "calibration", "alpha_dataset",
                "amplitude_dataset", "alpha_network", "amplitude_network",
            )
            if k not in d
        ]
        if missing:
            raise ConfigError(f"config is missing required fields: {missing}")
        if not isinstance(d["seed"], int):
            raise ConfigError("seed must be an explicit integer")
        return cls(
            seed=d["seed"],
            out_dir=Path(d["out_dir"]),
            workers=int(d.get("workers", 1)),
            calibration=dict(d["calibration"]),
            alpha_dataset=dict(d["alpha_dataset"]),
            amplitude_dataset=dict(d["amplitude_dataset"]),
            alpha_network=dict(d["alpha_network"]),
            amplitude_network=dict(d["amplitude_network"]),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": str(self.out_dir),
            "workers": self.workers,
            "calibration": self.calibration,
            "alpha_dataset": self.alpha_dataset,
            "amplitude_dataset": self.amplitude_dataset,
            "alpha_network": self.alpha_network,
            "amplitude_network": self.amplitude_network,
        }

    def config_hash(self) -> str:
        # out_dir and worker count do not affect any computed value
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")
        return content_hash(d)


def desk_config(seed: int, out_dir: str | Path) -> PipelineConfig:
    """Reduced-size preset exercising the full pipeline in bounded time.

    The desk grids keep the paper-scale exponent range but restrict the
    amplitude axes to their high-signal decades, where short trainings
    can resolve the labels.
    """
    return PipelineConfig.from_dict(
        {
            "seed": seed,
            "out_dir": str(out_dir),
            "workers": 1,
            "calibration": {"reference_amp": 1e-3, "target_crossover": 1.0,
                            "n_runs": 200, "n_gates": 200},
            "alpha_dataset": {
                "n_alpha": 10, "alpha_range": [0.0, 3.0],
                "n_log_amp": 5, "log_amp_range": [-4.0, -3.0],
                "replicas_per_cell": 4, "rb_runs_per_replica": 50,
                "n_gates": 100, "holdout": 60,
            },
            "amplitude_dataset": {
                "alpha": 1.5,
                "n_log_amp": 50, "log_amp_range": [-4.5, -3.0],
                "replicas_per_cell": 4, "rb_runs_per_replica": 200,
                "n_gates": 100, "holdout": 60,
            },
            "alpha_network": {"learning_rate": 0.005, "bin_size": 10, "n_epochs": 300,
                              "n_neurons": 50, "n_hidden_layers": 2},
            "amplitude_network": {"learning_rate": 0.005, "bin_size": 10, "n_epochs": 300,
                                  "n_neurons": 50, "n_hidden_layers": 2},
        }
    )


def paper_config(seed: int, out_dir: str | Path, workers: int = 1) -> PipelineConfig:
    """Full-size preset matching the reference grids; hours of compute."""
    return PipelineConfig.from_dict(
        {
            "seed": seed,
            "out_dir": str(out_dir),
            "workers": workers,
            "calibration": {"reference_amp": 1e-3, "target_crossover": 1.0,
                            "n_runs": 200, "n_gates": 200},
            "alpha_dataset": {
                "n_alpha": 50, "alpha_range": [0.0, 3.0],
                "n_log_amp": 25, "log_amp_range": [-7.0, -4.0],
                "replicas_per_cell": 8, "rb_runs_per_replica": 200,
                "n_gates": 200, "holdout": 500,
            },
            "amplitude_dataset": {
                "alpha": 1.5,
                "n_log_amp": 400, "log_amp_range": [-8.0, -2.0],
                "replicas_per_cell": 25, "rb_runs_per_replica": 200,
                "n_gates": 200, "holdout": 500,
            },
            "alpha_network": {"learning_rate": 0.005, "bin_size": 10, "n_epochs": 1000,
                              "n_neurons": 50, "n_hidden_layers": 2},
            "amplitude_network": {"learning_rate": 0.005, "bin_size": 10, "n_epochs": 1000,
                                  "n_neurons": 50, "n_hidden_layers": 2},
        }
    )


def grid_from_config(cfg: dict, kind: str, base_seed: int) -> ds.GridSpec:
    """Build a GridSpec from explicit point lists or range/count pairs."""
    try:
        if "alpha_points" in cfg:
            alpha_points = tuple(float(a) for a in cfg["alpha_points"])
        elif kind == ds.KIND_AMPLITUDE:
            alpha_points = (float(cfg["alpha"]),)
        else:
            lo, hi = cfg["alpha_range"]
            alpha_points = ds.open_interval_grid(float(lo), float(hi), int(cfg["n_alpha"]))
        if "log_amp_points" in cfg:
            log_amp_points = tuple(float(a) for a in cfg["log_amp_points"])
        else:
            lo, hi = cfg["log_amp_range"]
            log_amp_points = ds.open_interval_grid(float(lo), float(hi), int(cfg["n_log_amp"]))
        return ds.GridSpec(
            alpha_points=alpha_points,
            log_amp_points=log_amp_points,
            replicas_per_cell=int(cfg["replicas_per_cell"]),
            base_seed=base_seed,
            rb_runs_per_replica=int(cfg.get("rb_runs_per_replica", 200)),
            n_gates=int(cfg.get("n_gates", 200)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} grid config: {exc}") from exc


def hyperparams_from_config(cfg: dict) -> nn.Hyperparams:
    try:
        return nn.Hyperparams(
            learning_rate=float(cfg.get("learning_rate", 0.005)),
            bin_size=int(cfg.get("bin_size", 10)),
            n_epochs=int(cfg.get("n_epochs", 1000)),
            n_neurons=int(cfg.get("n_neurons", 50)),
            n_hidden_layers=int(cfg.get("n_hidden_layers", 2)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid network config: {exc}") from exc


# ---------------------------------------------------------------------------
# Stage cache
# ---------------------------------------------------------------------------

class StageCache:
    """Index of completed stages: stage name -> key + artifact hashes."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.index: dict = {}
        if self.path.exists():
            try:
                self.index = json.loads(self.path.read_text())
            except json.JSONDecodeError:
                self.index = {}

    def is_current(self, stage: str, key: str, files: list[Path]) -> bool:
        entry = self.index.get(stage)
        if not entry or entry.get("key") != key:
            return False
        for f in files:
            if not f.exists() or entry.get("artifacts", {}).get(f.name) != file_hash(f):
                return False
        return True

    def record(self, stage: str, key: str, files: list[Path]) -> None:
        self.index[stage] = {
            "key": key,
            "artifacts": {f.name: file_hash(f) for f in files},
        }
        self.path.write_text(json.dumps(self.index, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _train_stage(
    cache: StageCache,
    stage: str,
    config: PipelineConfig,
    net_cfg: dict,
    data_file: Path,
    holdout_file: Path,
    net_file: Path,
    history_file: Path,
    make_net,
    seed_tag: int,
    deep: bool = False,
) -> None:
    hp = hyperparams_from_config(net_cfg)
    if deep:
        hp = nn.Hyperparams(
            learning_rate=hp.learning_rate, bin_size=hp.bin_size,
            n_epochs=hp.n_epochs, n_neurons=25, n_hidden_layers=4,
        )
    key = content_hash(
        {
            "net": net_cfg,
            "deep": deep,
            "seed": config.seed,
            "data": file_hash(data_file),
            "holdout": file_hash(holdout_file),
        }
    )
    files = [net_file, history_file]
    if cache.is_current(stage, key, files):
        return
    data = ds.load_dataset(data_file)
    holdout = ds.load_dataset(holdout_file)
    net = make_net(data.grid.n_gates, hp, seed=(config.seed, seed_tag))
    net.metadata["config_hash"] = config.config_hash()
    net.metadata["hyperparams"] = {
        "learning_rate": hp.learning_rate, "bin_size": hp.bin_size,
        "n_epochs": hp.n_epochs, "n_neurons": hp.n_neurons,
        "n_hidden_layers": hp.n_hidden_layers,
    }
    net.metadata["dataset_hash"] = file_hash(data_file)
    trained, report = nn.train(net, data.examples, hp, holdout.examples,
                               seed=(config.seed, seed_tag, 1))
    nn.save_network(trained, net_file)
    label = "delta" if trained.encoding == nn.ENCODING_ALPHA else "rel_error"
    lines = [f"# config_hash={config.config_hash()}", f"epoch,{label}"]
    lines += [f"{i+1},{repr(v)}" for i, v in enumerate(report.error_history)]
    history_file.write_text("\n".join(lines) + "\n")
    cache.record(stage, key, files)


def _dataset_stage(
    cache: StageCache, stage: str, config: PipelineConfig, grid: ds.GridSpec,
    kind: str, models, out_file: Path, holdout_n: int | None = None,
) -> None:
    key = content_hash(
        {
            "grid": grid.to_dict(),
            "kind": kind,
            "holdout": holdout_n,
            "models": rbsim.model_pair_id(*models) if isinstance(models, tuple)
            else rbsim.model_pair_id(models, models),
        }
    )
    files = [out_file]
    if cache.is_current(stage, key, files):
        return
    if holdout_n is not None:
        built = ds.split_holdout(grid, holdout_n, seed=grid.base_seed, models=models, kind=kind)
    elif kind == ds.KIND_ALPHA:
        built = ds.build_alpha_dataset(
            grid, models, workers=config.workers,
            checkpoint_path=out_file.with_suffix(".checkpoint"),
        )
    else:
        built = ds.build_amplitude_dataset(
            grid, models, workers=config.workers,
            checkpoint_path=out_file.with_suffix(".checkpoint"),
        )
    ds.save_dataset(built, out_file, extra_manifest={"config_hash": config.config_hash()})
    cache.record(stage, key, files)


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute every stage, reusing cached artifacts; returns the summary."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache.json")
    cfg_hash = config.config_hash()

    paths = {
        "models": out / "models.json",
        "alpha_data": out / "alpha_data.bin",
        "alpha_holdout": out / "alpha_holdout.bin",
        "amp_data": out / "amp_data.bin",
        "amp_holdout": out / "amp_holdout.bin",
        "alpha_net": out / "alpha_net.json",
        "alpha_history": out / "alpha_history.csv",
        "amp_net": out / "amp_net.json",
        "amp_history": out / "amp_history.csv",
    }

    def stage(name, fn):
        try:
            fn()
        except ConfigError:
            raise
        except Exception as exc:
            raise StageError(f"stage {name!r} failed: {exc}") from exc

    # calibrate
    def do_calibrate():
        cal = config.calibration
        key = content_hash({"calibration": cal})
        if cache.is_current("calibrate", key, [paths["models"]]):
            return
        unc, corr = rbsim.calibrate_models(
            reference_amp=float(cal.get("reference_amp", 1e-3)),
            target_crossover=float(cal.get("target_crossover", 1.0)),
            n_runs=int(cal.get("n_runs", 200)),
            n_gates=int(cal.get("n_gates", 200)),
        )
        rbsim.save_models(unc, corr, paths["models"], metadata={"config_hash": cfg_hash})
        cache.record("calibrate", key, [paths["models"]])

    stage("calibrate", do_calibrate)
    models = rbsim.load_models(paths["models"])
    uncorrected = models[0]

    alpha_grid = grid_from_config(config.alpha_dataset, ds.KIND_ALPHA, config.seed)
    amp_grid = grid_from_config(config.amplitude_dataset, ds.KIND_AMPLITUDE, config.seed)

    stage("alpha_data", lambda: _dataset_stage(
        cache, "alpha_data", config, alpha_grid, ds.KIND_ALPHA, models, paths["alpha_data"]))
    stage("alpha_holdout", lambda: _dataset_stage(
        cache, "alpha_holdout", config, alpha_grid, ds.KIND_ALPHA, models,
        paths["alpha_holdout"], holdout_n=int(config.alpha_dataset.get("holdout", 500))))
    stage("amp_data", lambda: _dataset_stage(
        cache, "amp_data", config, amp_grid, ds.KIND_AMPLITUDE, uncorrected, paths["amp_data"]))
    stage("amp_holdout", lambda: _dataset_stage(
        cache, "amp_holdout", config, amp_grid, ds.KIND_AMPLITUDE, uncorrected,
        paths["amp_holdout"], holdout_n=int(config.amplitude_dataset.get("holdout", 500))))

    try:
        stage("train_alpha", lambda: _train_stage(
            cache, "train_alpha", config, config.alpha_network,
            paths["alpha_data"], paths["alpha_holdout"],
            paths["alpha_net"], paths["alpha_history"],
            nn.make_alpha_network, seed_tag=1))
        stage("train_amp", lambda: _train_stage(
            cache, "train_amp", config, config.amplitude_network,
            paths["amp_data"], paths["amp_holdout"],
            paths["amp_net"], paths["amp_history"],
            nn.make_amplitude_network, seed_tag=2))
    except StageError as exc:
        if isinstance(exc.__cause__, nn.TrainingDivergenceError):
            raise exc.__cause__
        raise

    # evaluate
    alpha_net = nn.load_network(paths["alpha_net"])
    amp_net = nn.load_network(paths["amp_net"])
    alpha_holdout = ds.load_dataset(paths["alpha_holdout"])
    amp_holdout = ds.load_dataset(paths["amp_holdout"])
    baseline_alpha = nn.make_alpha_network(
        alpha_holdout.grid.n_gates, hyperparams_from_config(config.alpha_network),
        seed=(config.seed, 1),
    )

    pipeline_stages = (
        "calibrate", "alpha_data", "alpha_holdout", "amp_data", "amp_holdout",
        "train_alpha", "train_amp",
    )
    summary = {
        "config_hash": cfg_hash,
        "config": {k: v for k, v in config.to_dict().items() if k not in ("out_dir", "workers")},
        "stages": {name: cache.index[name]["key"] for name in pipeline_stages
                   if name in cache.index},
        "artifacts": {p.name: file_hash(p) for p in paths.values()},
        "metrics": {
            "alpha_holdout_delta": nn.evaluate_network(alpha_net, alpha_holdout.examples),
            "alpha_untrained_delta": nn.evaluate_network(baseline_alpha, alpha_holdout.examples),
            "amplitude_holdout_rel_error": nn.evaluate_network(amp_net, amp_holdout.examples),
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def depth_experiment(config: PipelineConfig) -> dict:
    """Train 4-hidden-layer, 25-neuron variants on the cached pipeline data.

    Runs (or reuses) the default pipeline first so both variants see
    identical datasets and seeds, then reports final held-out errors side
    by side.
    """
    summary = run_pipeline(config)
    out = Path(config.out_dir)
    cache = StageCache(out / "cache.json")

    deep_paths = {
        "alpha_net": out / "depth_alpha_net.json",
        "alpha_history": out / "depth_alpha_history.csv",
        "amp_net": out / "depth_amp_net.json",
        "amp_history": out / "depth_amp_history.csv",
    }
    try:
        _train_stage(
            cache, "train_alpha_deep", config, config.alpha_network,
            out / "alpha_data.bin", out / "alpha_holdout.bin",
            deep_paths["alpha_net"], deep_paths["alpha_history"],
            nn.make_alpha_network, seed_tag=1, deep=True)
        _train_stage(
            cache, "train_amp_deep", config, config.amplitude_network,
            out / "amp_data.bin", out / "amp_holdout.bin",
            deep_paths["amp_net"], deep_paths["amp_history"],
            nn.make_amplitude_network, seed_tag=2, deep=True)
    except nn.TrainingDivergenceError:
        raise
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError(f"depth experiment failed: {exc}") from exc

    alpha_holdout = ds.load_dataset(out / "alpha_holdout.bin")
    amp_holdout = ds.load_dataset(out / "amp_holdout.bin")
    report = {
        "config_hash": config.config_hash(),
        "alpha": {
            "default_delta": summary["metrics"]["alpha_holdout_delta"],
            "deep_delta": nn.evaluate_network(
                nn.load_network(deep_paths["alpha_net"]), alpha_holdout.examples),
            "deep_layers": list(nn.load_network(deep_paths["alpha_net"]).layer_sizes),
        },
        "amplitude": {
            "default_rel_error": summary["metrics"]["amplitude_holdout_rel_error"],
            "deep_rel_error": nn.evaluate_network(
                nn.load_network(deep_paths["amp_net"]), amp_holdout.examples),
            "deep_layers": list(nn.load_network(deep_paths["amp_net"]).layer_sizes),
        },
    }
    (out / "depth_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# Prediction on curve files
# ---------------------------------------------------------------------------

@dataclass
class SpectroscopyResult:
    predicted_alpha: float | None
    predicted_amplitude: float | None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "predicted_alpha": self.predicted_alpha,
            "predicted_amplitude": self.predicted_amplitude,
            "diagnostics": self.diagnostics,
        }


def predict_from_curves(
    kappa_curve: np.ndarray | None,
    fidelity_curve: np.ndarray | None,
    alpha_net: nn.Network | None,
    amp_net: nn.Network | None,
    true_alpha: float | None = None,
    true_amplitude: float | None = None,
) -> SpectroscopyResult:
    """Two-step spectroscopy on explicit curves; either step is optional."""
    diagnostics: dict = {}
    predicted_alpha = None
    predicted_amplitude = None
    if kappa_curve is not None:
        if alpha_net is None:
            raise ConfigError("a ratio curve was given but no exponent network")
        predicted_alpha = nn.predict_alpha(alpha_net, kappa_curve)
        diagnostics["kappa_curve_length"] = int(len(kappa_curve))
        diagnostics["alpha_network_layers"] = list(alpha_net.layer_sizes)
    if fidelity_curve is not None:
        if amp_net is None:
            raise ConfigError("a fidelity curve was given but no amplitude network")
        predicted_amplitude = nn.predict_amplitude(amp_net, fidelity_curve)
        diagnostics["fidelity_curve_length"] = int(len(fidelity_curve))
        diagnostics["amplitude_network_layers"] = list(amp_net.layer_sizes)
    if true_alpha is not None:
        diagnostics["true_alpha"] = true_alpha
    if true_amplitude is not None:
        diagnostics["true_amplitude"] = true_amplitude
    return SpectroscopyResult(
        predicted_alpha=predicted_alpha,
        predicted_amplitude=predicted_amplitude,
        diagnostics=diagnostics,
    )

"""Labeled dataset generation, persistence, and holdout construction.

An exponent dataset pairs ratio curves kappa^i with encoded exponents; an
amplitude dataset pairs uncorrected fidelity curves with encoded
log-amplitudes. Every example is the average of many RB runs at one grid
cell, with all RNG streams derived deterministically from the grid's base
seed, so a dataset is a pure function of (grid, models) and any example
can be regenerated bit-identically from its recorded provenance.

On disk a dataset is a single binary container (fixed header, JSON
metadata block, little-endian float64 payload, SHA-256 trailer) plus a
JSON manifest sidecar for quick inspection.
"""

from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .neuralnet import TrainingExample, encode_alpha, encode_log_amplitude
from .noisegen import NoiseSpectrum
from .rbsim import GateModel, average_rb, model_pair_id, ratio_curve
from .seeds import derive_seed, seed_fingerprint

KIND_ALPHA = "alpha"
KIND_AMPLITUDE = "amplitude"

# Role tags inside one replica's seed path.
_ROLE_SEQUENCE = 0
_ROLE_UNCORRECTED = 1
_ROLE_CORRECTED = 2
# Branch tags separating training from holdout streams.
_BRANCH_TRAIN = 0
_BRANCH_HOLDOUT = 1
# Kind tags keep alpha and amplitude streams disjoint under a shared seed.
_KIND_TAGS = {KIND_ALPHA: 0, KIND_AMPLITUDE: 1}

_MAGIC = b"RBSPECD1"
CHECKPOINT_INTERVAL = 500


class DatasetIOError(RuntimeError):
    """Unreadable, truncated, or wrong-format dataset file."""


class ChecksumError(DatasetIOError):
    """Stored checksum does not match the file contents."""


def open_interval_grid(lo: float, hi: float, n: int) -> tuple[float, ...]:
    """n cell centers uniformly covering the open interval (lo, hi)."""
    return tuple(lo + (hi - lo) * (k + 0.5) / n for k in range(n))


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid of noise parameters plus sampling depths."""

    alpha_points: tuple[float, ...]
    log_amp_points: tuple[float, ...]
    replicas_per_cell: int
    base_seed: int
    rb_runs_per_replica: int = 200
    n_gates: int = 200

    def __post_init__(self):
        if not self.alpha_points or not self.log_amp_points:
            raise ValueError("grid needs at least one point per axis")
        if self.replicas_per_cell < 1 or self.rb_runs_per_replica < 1 or self.n_gates < 1:
            raise ValueError("grid counts must be positive")

    @property
    def n_examples(self) -> int:
        return len(self.alpha_points) * len(self.log_amp_points) * self.replicas_per_cell

    def cells(self):
        idx = 0
        for alpha in self.alpha_points:
            for log_amp in self.log_amp_points:
                yield idx, alpha, log_amp
                idx += 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            alpha_points=tuple(d["alpha_points"]),
            log_amp_points=tuple(d["log_amp_points"]),
            replicas_per_cell=int(d["replicas_per_cell"]),
            base_seed=int(d["base_seed"]),
            rb_runs_per_replica=int(d["rb_runs_per_replica"]),
            n_gates=int(d["n_gates"]),
        )


def default_alpha_grid(base_seed: int) -> GridSpec:
    """Exponent-training grid: 50 alphas on (0,3) x 25 amps on (-7,-4) x 8."""
    return GridSpec(
        alpha_points=open_interval_grid(0.0, 3.0, 50),
        log_amp_points=open_interval_grid(-7.0, -4.0, 25),
        replicas_per_cell=8,
        base_seed=base_seed,
    )


def default_amplitude_grid(base_seed: int) -> GridSpec:
    """Amplitude-training grid: alpha 1.5, 400 amps on (-8,-2) x 25."""
    return GridSpec(
        alpha_points=(1.5,),
        log_amp_points=open_interval_grid(-8.0, -2.0, 400),
        replicas_per_cell=25,
        base_seed=base_seed,
    )


@dataclass
class Dataset:
    kind: str
    examples: list[TrainingExample]
    grid: GridSpec
    model_pair_id: str

    def __post_init__(self):
        if self.kind not in (KIND_ALPHA, KIND_AMPLITUDE):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        for ex in self.examples:
            if len(ex.input) != self.grid.n_gates:
                raise ValueError("example input length must equal the grid's n_gates")

    def inputs(self) -> np.ndarray:
        return np.stack([ex.input for ex in self.examples])

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples])


# ---------------------------------------------------------------------------
# Example generation
# ---------------------------------------------------------------------------

def _replica_example(
    kind: str,
    alpha: float,
    log_amp: float,
    cell: int,
    replica: int,
    grid: GridSpec,
    models: tuple[GateModel, GateModel] | GateModel,
    branch: int,
) -> TrainingExample:
    """One training example: average_rb at a grid cell, encoded label.

    The corrected and uncorrected averages replay the same gate sequences
    (shared sequence seed) under independent noise, so their ratio isolates
    the gate models' different noise response.
    """
    spec = NoiseSpectrum(amplitude=10.0**log_amp, exponent=alpha)
    path = (branch, _KIND_TAGS[kind], cell, replica)
    seq_seed = derive_seed(grid.base_seed, *path, _ROLE_SEQUENCE)
    unc_seed = derive_seed(grid.base_seed, *path, _ROLE_UNCORRECTED)

    if kind == KIND_ALPHA:
        uncorrected, corrected = models
        corr_seed = derive_seed(grid.base_seed, *path, _ROLE_CORRECTED)
        unc = average_rb(
            spec, uncorrected, grid.rb_runs_per_replica, grid.n_gates,
            seed=unc_seed, sequence_seed=seq_seed,
        )
        corr = average_rb(
            spec, corrected, grid.rb_runs_per_replica, grid.n_gates,
            seed=corr_seed, sequence_seed=seq_seed,
        )
        curve = ratio_curve(corr, unc).ratios
        target = encode_alpha(alpha)
        label = alpha
        seeds = [seed_fingerprint(s) for s in (seq_seed, unc_seed, corr_seed)]
    else:
        uncorrected = models
        unc = average_rb(
            spec, uncorrected, grid.rb_runs_per_replica, grid.n_gates,
            seed=unc_seed, sequence_seed=seq_seed,
        )
        curve = unc.fidelities
        target = encode_log_amplitude(10.0**log_amp)
        label = 10.0**log_amp
        seeds = [seed_fingerprint(s) for s in (seq_seed, unc_seed)]

    return TrainingExample(
        input=curve,
        target=float(target),
        label=float(label),
        provenance={
            "alpha": alpha,
            "log_amp": log_amp,
            "cell": cell,
            "replica": replica,
            "branch": branch,
            "seeds": seeds,
        },
    )


def _build_indexed(args):
    index, kind, alpha, log_amp, cell, replica, grid, models, branch = args
    return index, _replica_example(kind, alpha, log_amp, cell, replica, grid, models, branch)


def _grid_tasks(kind, grid, models, branch=_BRANCH_TRAIN):
    tasks = []
    index = 0
    for cell, alpha, log_amp in grid.cells():
        for replica in range(grid.replicas_per_cell):
            tasks.append((index, kind, alpha, log_amp, cell, replica, grid, models, branch))
            index += 1
    return tasks


def _checkpoint_fingerprint(kind, grid, pair_id) -> str:
    blob = json.dumps([kind, grid.to_dict(), pair_id], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _load_checkpoint(path: Path, fingerprint: str) -> dict[int, TrainingExample]:
    if not path.exists():
        return {}
    try:
        ds = load_dataset(path)
    except DatasetIOError:
        return {}
    if ds.model_pair_id != fingerprint:
        return {}
    return {ex.provenance["index"]: _strip_index(ex) for ex in ds.examples}


def _strip_index(ex: TrainingExample) -> TrainingExample:
    prov = dict(ex.provenance)
    prov.pop("index", None)
    return TrainingExample(input=ex.input, target=ex.target, label=ex.label, provenance=prov)


def _write_checkpoint(path: Path, kind, grid, fingerprint, done: dict[int, TrainingExample]):
    examples = []
    for idx in sorted(done):
        ex = done[idx]
        prov = dict(ex.provenance)
        prov["index"] = idx
        examples.append(
            TrainingExample(input=ex.input, target=ex.target, label=ex.label, provenance=prov)
        )
    partial = Dataset(kind=kind, examples=examples, grid=grid, model_pair_id=fingerprint)
    save_dataset(partial, path, manifest=False)


def _run_tasks(kind, grid, models, tasks, workers, checkpoint_path,
               checkpoint_every=CHECKPOINT_INTERVAL):
    fingerprint = _checkpoint_fingerprint(kind, grid, _models_id(kind, models))
    done: dict[int, TrainingExample] = {}
    ckpt = Path(checkpoint_path) if checkpoint_path else None
    if ckpt is not None:
        done = _load_checkpoint(ckpt, fingerprint)
    pending = [t for t in tasks if t[0] not in done]

    def note(index, example):
        done[index] = example
        if ckpt is not None and len(done) % checkpoint_every == 0:
            _write_checkpoint(ckpt, kind, grid, fingerprint, done)

    if workers > 1 and pending:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, example in pool.map(_build_indexed, pending, chunksize=8):
                note(index, example)
    else:
        for task in pending:
            note(*_build_indexed(task))

    if ckpt is not None and ckpt.exists():
        ckpt.unlink()
    return [done[i] for i in range(len(tasks))]


def _models_id(kind, models) -> str:
    if kind == KIND_ALPHA:
        return model_pair_id(models[0], models[1])
    return model_pair_id(models, models)


def build_alpha_dataset(
    grid: GridSpec,
    models: tuple[GateModel, GateModel],
    workers: int = 1,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = CHECKPOINT_INTERVAL,
) -> Dataset:
    """Ratio-curve dataset over the (alpha, amplitude) grid.

    ``models`` is the calibrated (uncorrected, corrected) pair. Generation
    is deterministic in (grid, models) regardless of ``workers``; passing
    ``checkpoint_path`` makes long builds resumable.
    """
    tasks = _grid_tasks(KIND_ALPHA, grid, models)
    examples = _run_tasks(
        KIND_ALPHA, grid, models, tasks, workers, checkpoint_path, checkpoint_every
    )
    return Dataset(
        kind=KIND_ALPHA, examples=examples, grid=grid, model_pair_id=_models_id(KIND_ALPHA, models)
    )


def build_amplitude_dataset(
    grid: GridSpec,
    uncorrected: GateModel,
    workers: int = 1,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = CHECKPOINT_INTERVAL,
) -> Dataset:
    """Uncorrected fidelity-curve dataset over the amplitude grid."""
    if len(grid.alpha_points) != 1:
        raise ValueError("amplitude dataset expects a single fixed exponent")
    tasks = _grid_tasks(KIND_AMPLITUDE, grid, uncorrected)
    examples = _run_tasks(
        KIND_AMPLITUDE, grid, uncorrected, tasks, workers, checkpoint_path, checkpoint_every
    )
    return Dataset(
        kind=KIND_AMPLITUDE,
        examples=examples,
        grid=grid,
        model_pair_id=_models_id(KIND_AMPLITUDE, uncorrected),
    )


def split_holdout(
    grid: GridSpec,
    n: int,
    seed: int,
    models,
    kind: str,
) -> Dataset:
    """n fresh evaluation examples at grid midpoints.

    Midpoint cells sit strictly between adjacent training grid values, so
    no holdout label ever coincides with a training label; the holdout
    seed branch keeps its RNG streams disjoint from training even for an
    identical base seed.
    """
    if n < 1:
        raise ValueError("holdout size must be >= 1")

    def midpoints(points):
        if len(points) == 1:
            return points
        return tuple((a + b) / 2 for a, b in zip(points, points[1:]))

    mid_grid = replace(
        grid,
        alpha_points=midpoints(grid.alpha_points),
        log_amp_points=midpoints(grid.log_amp_points),
        replicas_per_cell=1,
        base_seed=seed,
    )
    cells = list(mid_grid.cells())
    rng = np.random.default_rng(derive_seed(seed, _BRANCH_HOLDOUT))
    chosen = rng.choice(len(cells), size=n, replace=True)
    replica_counter: dict[int, int] = {}

    tasks = []
    for i, cell_pos in enumerate(chosen):
        cell, alpha, log_amp = cells[cell_pos]
        replica = replica_counter.get(cell, 0)
        replica_counter[cell] = replica + 1
        tasks.append(
            (i, kind, alpha, log_amp, cell, replica, mid_grid, models, _BRANCH_HOLDOUT)
        )
    examples = _run_tasks(kind, mid_grid, models, tasks, 1, None)
    return Dataset(
        kind=kind, examples=examples, grid=mid_grid, model_pair_id=_models_id(kind, models)
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_dataset(
    ds: Dataset,
    path: str | Path,
    manifest: bool = True,
    extra_manifest: dict | None = None,
) -> None:
    """Binary container with a trailing SHA-256 of everything before it."""
    header = {
        "schema_version": 1,
        "kind": ds.kind,
        "grid": ds.grid.to_dict(),
        "model_pair_id": ds.model_pair_id,
        "n_examples": len(ds.examples),
        "n_inputs": ds.grid.n_gates,
        "dtype": "<f8",
        "provenance": [ex.provenance for ex in ds.examples],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()

    inputs = np.ascontiguousarray(
        np.stack([ex.input for ex in ds.examples]) if ds.examples else np.zeros((0, 0)),
        dtype="<f8",
    )
    targets = np.array([ex.target for ex in ds.examples], dtype="<f8")
    labels = np.array([ex.label for ex in ds.examples], dtype="<f8")

    body = b"".join(
        [
            _MAGIC,
            struct.pack("<I", len(header_bytes)),
            header_bytes,
            inputs.tobytes(),
            targets.tobytes(),
            labels.tobytes(),
        ]
    )
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    path.write_bytes(body + digest)

    if manifest:
        manifest_doc = {
            "schema_version": 1,
            "kind": ds.kind,
            "n_examples": len(ds.examples),
            "n_inputs": ds.grid.n_gates,
            "grid": ds.grid.to_dict(),
            "model_pair_id": ds.model_pair_id,
            "sha256": digest.hex(),
            "data_file": path.name,
        }
        if extra_manifest:
            manifest_doc.update(extra_manifest)
        path.with_suffix(path.suffix + ".manifest.json").write_text(
            json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n"
        )


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 4 + 32 or raw[: len(_MAGIC)] != _MAGIC:
        raise DatasetIOError(f"{path}: not a dataset file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupted")

    offset = len(_MAGIC)
    (header_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    header = json.loads(body[offset : offset + header_len].decode())
    offset += header_len
    if header.get("schema_version") != 1:
        raise DatasetIOError(f"unsupported schema version {header.get('schema_version')}")

    n = header["n_examples"]
    width = header["n_inputs"]
    inputs = np.frombuffer(body, dtype="<f8", count=n * width, offset=offset).reshape(n, width)
    offset += n * width * 8
    targets = np.frombuffer(body, dtype="<f8", count=n, offset=offset)
    offset += n * 8
    labels = np.frombuffer(body, dtype="<f8", count=n, offset=offset)

    grid = GridSpec.from_dict(header["grid"])
    examples = [
        TrainingExample(
            input=inputs[i].copy(),
            target=float(targets[i]),
            label=float(labels[i]),
            provenance=header["provenance"][i],
        )
        for i in range(n)
    ]
    return Dataset(
        kind=header["kind"], examples=examples, grid=grid, model_pair_id=header["model_pair_id"]
    )


def export_csv(ds: Dataset, path: str | Path) -> None:
    """Interoperability export: one row per example, label then curve."""
    with Path(path).open("w", newline="") as fh:
        width = ds.grid.n_gates
        fh.write("label,target," + ",".join(f"x{i+1}" for i in range(width)) + "\n")
        for ex in ds.examples:
            fh.write(
                ",".join([repr(ex.label), repr(ex.target)] + [repr(float(v)) for v in ex.input])
                + "\n"
            )


def recorded_seeds(ds: Dataset) -> list[tuple]:
    """All RNG stream fingerprints used by a dataset, for disjointness checks."""
    out = []
    for ex in ds.examples:
        for s in ex.provenance["seeds"]:
            out.append(tuple(s))
    return out

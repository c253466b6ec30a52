"""Training runs, tolerance sweeps and checkpoint-based reconstruction."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState
from .checkpoint import load_checkpoint, restore, save_checkpoint
from .config import TrainConfig
from .data import Dataset, batches, generate_shapes, load_idx
from .gating import GateVector, hard_mask
from .geco import METRICS_FIELDS, GecoState, MetricsRow, TrainingDivergedError, make_lambda, train_step
from .vae import VaeModel, decode_array, encode_array

log = logging.getLogger(__name__)


def load_dataset(cfg: TrainConfig) -> Dataset:
    if cfg.is_shapes:
        return generate_shapes(cfg.dataset_count, np.random.default_rng(cfg.dataset_seed))
    ds = load_idx(cfg.dataset)
    return ds.subset(cfg.dataset_count) if cfg.dataset_count else ds


@dataclass
class Run:
    config: TrainConfig
    model: VaeModel
    gates: GateVector
    state: GecoState
    adam: AdamState
    noise_rng: np.random.Generator
    data_rng: np.random.Generator
    metrics: list[MetricsRow] = field(default_factory=list)

    @property
    def ma_error(self) -> float | None:
        return self.state.ma_error

    def open_gates(self) -> int:
        return int(hard_mask(self.gates).sum())


def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def init_run(cfg: TrainConfig, input_dim: int) -> Run:
    init_rng, data_rng, noise_rng = _streams(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    model = VaeModel(input_dim, cfg.latent_dim, cfg.hidden_layout, rng=init_rng, dtype=dtype)
    gates = GateVector.create(cfg.latent_dim, cfg.gamma_init, cfg.k, dtype=dtype)
    state = GecoState(
        tau=cfg.tau,
        alpha=cfg.alpha,
        lambda_min=cfg.lambda_min,
        lambda_max=cfg.lambda_max,
        lambda_raw=make_lambda(cfg.lambda_init, dtype),
    )
    adam = AdamState(learning_rate=cfg.learning_rate)
    return Run(cfg, model, gates, state, adam, noise_rng, data_rng)


def resume_run(checkpoint_path) -> Run:
    ckpt = load_checkpoint(checkpoint_path)
    model, gates, state = restore(ckpt)
    _, data_rng, noise_rng = _streams(ckpt.config.seed + state.batch_index)
    return Run(ckpt.config, model, gates, state, AdamState(learning_rate=ckpt.config.learning_rate), noise_rng, data_rng)


class MetricsWriter:
    """CSV sink that flushes after every row."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRICS_FIELDS)
        self._fh.flush()

    def write(self, row: MetricsRow) -> None:
        self._writer.writerow([repr(getattr(row, f)) if isinstance(getattr(row, f), float) else getattr(row, f) for f in METRICS_FIELDS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        MetricsRow(
            batch=int(r["batch"]),
            mse=float(r["mse"]),
            kl=float(r["kl"]),
            lambda_eff=float(r["lambda_eff"]),
            gate_mass=float(r["gate_mass"]),
            open_gates=int(r["open_gates"]),
            hit_rate=float(r["hit_rate"]),
            loss=float(r["loss"]),
        )
        for r in rows
    ]


def train(run: Run, dataset: Dataset, max_batches: int, sink: MetricsWriter | None = None, keep_metrics: bool = True) -> Run:
    if dataset.input_dim != run.model.input_dim:
        raise ValueError(f"dataset width {dataset.input_dim} != model input width {run.model.input_dim}")
    if max_batches == 0:
        return run
    stream = batches(dataset, run.config.batch_size, run.data_rng)
    for _ in range(max_batches):
        row = train_step(next(stream), run.model, run.gates, run.state, run.adam, run.noise_rng, run.config.metric)
        if keep_metrics:
            run.metrics.append(row)
        if sink is not None:
            sink.write(row)
        if row.batch % 1000 == 0:
            log.info(
                "batch %d mse %.3f lambda' %.3g gate mass %.3f open %d hit %s",
                row.batch, row.mse, row.lambda_eff, row.gate_mass, row.open_gates, run.state.hit,
            )
    return run


def write_gate_report(path, gates: GateVector) -> None:
    mask = hard_mask(gates)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "gamma", "open_probability", "hard_mask"])
        for j, (g, p, m) in enumerate(zip(gates.gamma.data, gates.open_probability, mask)):
            w.writerow([j, repr(float(g)), repr(float(p)), int(m)])


def summarize(run: Run) -> dict:
    return {
        "batches": run.state.batch_index,
        "tau": run.state.tau,
        "hit": run.state.hit,
        "open_gates": run.open_gates(),
        "gate_mass": float(run.gates.open_probability.sum()),
        "ma_error": run.ma_error,
        "lambda_eff": float(np.clip(np.logaddexp(0.0, float(run.state.lambda_raw.data)) ** 2, run.state.lambda_min, run.state.lambda_max)),
    }


def run_training(cfg: TrainConfig, dataset: Dataset | None = None, resume: str | None = None, keep_metrics: bool = True) -> Run:
    """Train for ``cfg.max_batches`` and write metrics, checkpoint, gate report and summary."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = load_dataset(cfg)
    run = resume_run(resume) if resume else init_run(cfg, dataset.input_dim)
    ckpt_path = out / "checkpoint.bin"
    with MetricsWriter(out / "metrics.csv") as sink:
        try:
            train(run, dataset, cfg.max_batches, sink, keep_metrics)
        except TrainingDivergedError:
            save_checkpoint(out / "last_good.bin", run.model, run.gates, run.state, run.config)
            log.error("training diverged; last good state saved to %s", out / "last_good.bin")
            raise
    save_checkpoint(ckpt_path, run.model, run.gates, run.state, run.config)
    write_gate_report(out / "gates.csv", run.gates)
    (out / "summary.json").write_text(json.dumps(summarize(run), indent=2) + "\n")
    return run


def _sweep_one(args) -> tuple[float, int, float | None]:
    cfg, = args
    run = run_training(cfg, keep_metrics=False)
    return cfg.tau, run.open_gates(), run.ma_error


def sweep(cfg: TrainConfig, taus: list[float], jobs: int = 1) -> list[tuple[float, int, float | None]]:
    """One independent run per tolerance; run i is seeded with ``seed + i``."""
    if not taus:
        raise ValueError("need at least one tolerance")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    configs = [cfg.replace(tau=float(t), seed=cfg.seed + i, output_dir=str(out / f"tau_{float(t):g}")) for i, t in enumerate(taus)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_sweep_one, [(c,) for c in configs]))
    else:
        rows = [_sweep_one((c,)) for c in configs]
    rows.sort(key=lambda r: r[0])
    with open(out / "pareto.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "open_gates", "ma_mse"])
        for tau, gates_open, ma in rows:
            w.writerow([repr(tau), gates_open, repr(ma)])
    return rows


def reconstruct(model: VaeModel, gates: GateVector, images: np.ndarray, metric: str = "sse") -> tuple[np.ndarray, np.ndarray]:
    """Hard-masked reconstructions from the posterior mean, plus per-image error."""
    mu, _ = encode_array(images, model)
    rec = decode_array(mu * hard_mask(gates), model)
    err = np.sum((rec - images) ** 2, axis=-1)
    if metric == "mse":
        err = err / images.shape[-1]
    return rec, err


def write_pgm(path, image: np.ndarray) -> None:
    h, w = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w).astype(np.float32) / maxval


def run_reconstruct(checkpoint_path, dataset: Dataset, out_dir, limit: int | None = None) -> np.ndarray:
    ckpt = load_checkpoint(checkpoint_path)
    model, gates, _ = restore(ckpt)
    if dataset.input_dim != model.input_dim:
        raise ValueError(f"inputs have {dataset.input_dim} pixels but the model expects {model.input_dim}")
    images = dataset.images if limit is None else dataset.images[:limit]
    rec, err = reconstruct(model, gates, images, ckpt.config.metric)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "error"])
        for i, (img, e) in enumerate(zip(rec, err)):
            write_pgm(out / f"recon_{i:05d}.pgm", img.reshape(dataset.image_height, dataset.image_width))
            w.writerow([i, repr(float(e))])
    return err

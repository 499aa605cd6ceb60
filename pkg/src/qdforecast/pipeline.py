"""Batch orchestration: generate, slice, optimize, train, forecast, report.

Every run writes its outputs plus a manifest (config hash, seed table, file
checksums) into one directory, so reruns with the same config and master
seed reproduce the same bytes.  The CLI and the HTTP service are thin
wrappers around the functions here.
"""

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import FULL, make_dataset, memory_time_to_steps, vectorize
from .ensemble import (EnsembleSpec, build_ensemble, ensemble_forecast,
                       error_report, forecast_to_csv)
from .hpo import (HyperPoint, SearchSpace, make_objective, run_campaign)
from .lstm import TrainConfig, save_checkpoint
from .physmodel import model_from_dict, model_preset
from .seeding import derive_seed
from .tdvp import PropagationConfig, Trajectory, propagate


class NumericalFailure(RuntimeError):
    """Propagation or training failed numerically (CLI exit code 2)."""


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: {"preset": "I"})
    dt_fs: float = 0.5
    t_end_fs: float = 1000.0
    scheme: str = "one-site"
    n_boson_levels: int = 6
    n_modes: int | None = 10          # per state; None = full grid of the model
    max_bond: int = 32
    svd_cutoff: float = 1e-13
    krylov_tol: float = 1e-9
    warmup_steps: int = 40
    history_fs: float = 350.0
    feature_mode: str = FULL
    hpo_method: str = "sa"
    n_tasks: int = 4
    iters: int = 25
    ensemble_label: str = "(SA-H3)xBT10"
    master_seed: int = 0
    paper_scale: bool = False
    train: dict = field(default_factory=dict)   # TrainConfig overrides

    def __post_init__(self):
        if self.history_fs >= self.t_end_fs:
            raise ValueError("history length must be shorter than t_end")
        if self.paper_scale:
            self.n_modes = None
            self.n_boson_levels = 6
            self.max_bond = 64
            self.krylov_tol = 1e-12
            self.n_tasks = 20
            self.iters = 100

    def build_model(self):
        if "preset" in self.model:
            base = model_preset(self.model["preset"])
            extra = {k: v for k, v in self.model.items() if k != "preset"}
            if extra:
                base = dataclasses.replace(base, **extra)
            return base
        return model_from_dict(self.model)

    def propagation(self) -> PropagationConfig:
        return PropagationConfig(dt=self.dt_fs, t_end=self.t_end_fs,
                                 scheme=self.scheme, svd_cutoff=self.svd_cutoff,
                                 max_bond=self.max_bond, krylov_tol=self.krylov_tol,
                                 warmup_steps=self.warmup_steps)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)

    def search_space(self) -> SearchSpace:
        if self.paper_scale:
            return SearchSpace.paper(self.history_fs, self.dt_fs)
        return SearchSpace.desk(self.history_fs, self.dt_fs)

    def as_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.as_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _checksum(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, cfg: RunConfig, seeds: dict, files):
    manifest = {
        "version": __version__,
        "config": cfg.as_dict(),
        "config_hash": config_hash(cfg),
        "seeds": seeds,
        "files": {str(Path(f).relative_to(out_dir)): _checksum(Path(f)) for f in files},
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


# ---------------------------------------------------------------------------
# subcommand bodies

def run_generate(cfg: RunConfig, out_dir) -> Path:
    """Propagate the configured model and write trajectory.csv + manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    try:
        traj = propagate(model, cfg.propagation(),
                         n_boson_levels=cfg.n_boson_levels,
                         n_modes_override=cfg.n_modes)
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericalFailure(f"propagation failed: {exc}") from exc
    traj.validate()
    path = out_dir / "trajectory.csv"
    traj.to_csv(path)
    write_manifest(out_dir, cfg, {}, [path])
    return path


def run_slice(cfg: RunConfig, trajectory_path, out_dir, memory_fs: float) -> Path:
    """Slice the training history into windows and record the split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = Trajectory.from_csv(trajectory_path)
    series = vectorize(traj.restricted(cfg.history_fs), cfg.feature_mode)
    window_length = memory_time_to_steps(memory_fs, series.dt)
    seed = derive_seed(cfg.master_seed, "split")
    ds = make_dataset(series, window_length, seed)
    payload = {
        "window_length": window_length,
        "memory_fs": memory_fs,
        "feature_mode": cfg.feature_mode,
        "history_fs": cfg.history_fs,
        "split_seed": seed,
        "n_samples": len(ds.samples),
        "train_starts": [s.start for s in ds.train],
        "internal_starts": [s.start for s in ds.internal],
        "external_starts": [s.start for s in ds.external],
    }
    path = out_dir / "dataset.json"
    with open(path, "w") as fh:
        json.dump(payload, fh)
    write_manifest(out_dir, cfg, {"split": seed}, [path])
    return path


def _history_series(cfg: RunConfig, trajectory_path):
    traj = Trajectory.from_csv(trajectory_path)
    if traj.times[-1] < cfg.history_fs:
        raise ValueError(f"trajectory ends at {traj.times[-1]} fs, "
                         f"before the {cfg.history_fs} fs history")
    return traj, vectorize(traj.restricted(cfg.history_fs), cfg.feature_mode)


def run_hpo(cfg: RunConfig, trajectory_path, out_dir):
    """Run the hyperparameter campaign; log one JSON line per trial."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    _, series = _history_series(cfg, trajectory_path)
    space = cfg.search_space()
    hpo_seed = derive_seed(cfg.master_seed, "hpo")
    objective = make_objective(series, cfg.train_config(0), keep_network=True)

    t_wall = [time.monotonic()]

    def timed_objective(x, seed):
        trial = objective(x, seed)
        now = time.monotonic()
        trial.wall_ms = (now - t_wall[0]) * 1e3
        t_wall[0] = now
        return trial

    campaign = run_campaign(space, cfg.hpo_method, timed_objective,
                            n_tasks=cfg.n_tasks, iters=cfg.iters,
                            master_seed=hpo_seed)
    log_path = out_dir / "campaign.jsonl"
    with open(log_path, "w") as fh:
        header = {"method": campaign.method, "master_seed": hpo_seed,
                  "n_tasks": cfg.n_tasks, "iters": cfg.iters,
                  "space": {"layer_counts": list(space.layer_counts),
                            "neuron_grid": list(space.neuron_grid),
                            "memory_grid_fs": list(space.memory_grid_fs)}}
        fh.write(json.dumps(header) + "\n")
        for ti, task in enumerate(campaign.tasks):
            for trial in task:
                fh.write(json.dumps({
                    "task": ti, "iter": trial.iteration, "x": trial.x.as_dict(),
                    "loss": trial.loss if np.isfinite(trial.loss) else None,
                    "wall_ms": getattr(trial, "wall_ms", None),
                }) + "\n")
    files = [log_path]
    for ti, best in enumerate(campaign.task_bests):
        if best.network is not None:
            p = ckpt_dir / f"task{ti:02d}_best.json"
            save_checkpoint(best.network, p)
            files.append(p)
    write_manifest(out_dir, cfg, {"hpo": hpo_seed}, files)
    return campaign, log_path


def load_campaign_bests(log_path):
    """Task-best hyperpoints (ascending loss) from a campaign log."""
    bests = {}
    with open(log_path) as fh:
        header = json.loads(fh.readline())
        for line in fh:
            rec = json.loads(line)
            loss = rec["loss"] if rec["loss"] is not None else np.inf
            if rec["task"] not in bests or loss < bests[rec["task"]][0]:
                bests[rec["task"]] = (loss, HyperPoint.from_dict(rec["x"]))
    ranked = sorted(bests.values(), key=lambda t: t[0])
    return header, [x for _, x in ranked]


def run_train(cfg: RunConfig, trajectory_path, out_dir, point: HyperPoint):
    """Train a single network at one hyperparameter point."""
    from .hpo import evaluate_point
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, series = _history_series(cfg, trajectory_path)
    seed = derive_seed(cfg.master_seed, "train-single")
    trial = evaluate_point(point, series, seed, cfg.train_config(0),
                           keep_network=True)
    if trial.network is None:
        raise NumericalFailure("training diverged")
    path = out_dir / "network.json"
    save_checkpoint(trial.network, path)
    with open(out_dir / "train.json", "w") as fh:
        json.dump({"x": point.as_dict(), "external_loss": trial.loss,
                   "history": trial.history}, fh)
    write_manifest(out_dir, cfg, {"train": seed},
                   [path, out_dir / "train.json"])
    return path, trial


def run_forecast(cfg: RunConfig, trajectory_path, campaign_log, out_dir):
    """Build the configured ensemble and forecast from T_hist to t_end."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj, series = _history_series(cfg, trajectory_path)
    spec = EnsembleSpec.parse(cfg.ensemble_label)
    _, structures = load_campaign_bests(campaign_log)

    split_seed = derive_seed(cfg.master_seed, "split")

    def dataset_for(x):
        L = memory_time_to_steps(x.memory_fs, series.dt)
        return make_dataset(series, L, split_seed)

    ens_seed = derive_seed(cfg.master_seed, "ensemble")
    members = build_ensemble(spec, structures, dataset_for,
                             cfg.train_config(0), master_seed=ens_seed)

    n_hist = len(series)
    full_series = vectorize(traj, cfg.feature_mode)
    n_steps = len(full_series) - n_hist
    if n_steps < 1:
        raise ValueError("nothing to forecast: history covers the trajectory")
    times = full_series.times[n_hist:]
    forecast = ensemble_forecast(members, series.values, n_steps, times=times)

    fc_path = out_dir / "forecast.csv"
    forecast_to_csv(forecast, fc_path)
    summary = error_report(forecast, full_series.values[n_hist:],
                           out_dir / "error.csv", out_dir / "summary.json")
    summary["n_members"] = forecast.n_members
    summary["mean_ci_width"] = float((2.0 * forecast.std).mean())

    bundle = out_dir / "plotdata.csv"
    _write_plot_bundle(bundle, full_series, forecast, n_hist)
    _render_svg(out_dir / "forecast.svg", full_series, forecast, n_hist)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    write_manifest(out_dir, cfg, {"split": split_seed, "ensemble": ens_seed},
                   [fc_path, out_dir / "error.csv", out_dir / "summary.json",
                    bundle, out_dir / "forecast.svg"])
    return forecast, summary


def _write_plot_bundle(path, full_series, forecast, n_hist):
    """Reference, training segment, ensemble mean and band on one grid."""
    n = len(full_series)
    seg = np.where(np.arange(n) < n_hist, "history", "forecast")
    mean = np.full(n, np.nan)
    std = np.full(n, np.nan)
    mean[n_hist:] = forecast.mean[:, 0]
    std[n_hist:] = forecast.std[:, 0]
    with open(path, "w") as fh:
        fh.write("t_fs,segment,ref_delta,mean_delta,std_delta\n")
        for i in range(n):
            fh.write(f"{full_series.times[i]:.17g},{seg[i]},"
                     f"{full_series.values[i, 0]:.17g},{mean[i]:.17g},{std[i]:.17g}\n")


def _render_svg(path, full_series, forecast, n_hist):
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(7, 3.2))
    t = full_series.times
    ax.plot(t, full_series.values[:, 0], "k-", lw=1, label="reference")
    tf = forecast.times
    ax.plot(tf, forecast.mean[:, 0], "r-", lw=1, label="ensemble mean")
    ax.fill_between(tf, forecast.mean[:, 0] - 2 * forecast.std[:, 0],
                    forecast.mean[:, 0] + 2 * forecast.std[:, 0],
                    color="r", alpha=0.25, label=r"$\pm 2\sigma$")
    ax.axvline(t[n_hist - 1], color="gray", ls="--", lw=0.8)
    ax.set_xlabel("t (fs)")
    ax.set_ylabel(r"$\Delta = \rho_{11} - \rho_{22}$")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_sweep_history(cfg: RunConfig, trajectory_path, lengths, out_dir):
    """Full hpo + forecast per history length; comparative error report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = {}
    for length in lengths:
        sub = dataclasses.replace(cfg, history_fs=float(length))
        sub_dir = out_dir / f"hist{int(length)}"
        try:
            _, log_path = run_hpo(sub, trajectory_path, sub_dir / "hpo")
            _, summary = run_forecast(sub, trajectory_path, log_path,
                                      sub_dir / "forecast")
            rows.append((length, summary))
        except Exception as exc:  # noqa: BLE001 - per-length isolation
            failures[length] = str(exc)
    report_path = out_dir / "sweep.csv"
    with open(report_path, "w") as fh:
        fh.write("history_fs,max_abs_err,mean_abs_err,mean_ci_width,n_members\n")
        for length, s in rows:
            fh.write(f"{length},{s['max_abs_err']:.17g},{s['mean_abs_err']:.17g},"
                     f"{s['mean_ci_width']:.17g},{s['n_members']}\n")
    if failures:
        with open(out_dir / "failures.json", "w") as fh:
            json.dump({str(k): v for k, v in failures.items()}, fh, indent=2)
    return report_path, rows, failures


def run_report(out_dir):
    """Aggregate manifests and summaries below out_dir into report.json."""
    out_dir = Path(out_dir)
    report = {"version": __version__, "runs": []}
    for manifest in sorted(out_dir.rglob("manifest.json")):
        with open(manifest) as fh:
            m = json.load(fh)
        entry = {"dir": str(manifest.parent.relative_to(out_dir)),
                 "config_hash": m["config_hash"], "files": sorted(m["files"])}
        summary = manifest.parent / "summary.json"
        if summary.exists():
            with open(summary) as fh:
                entry["summary"] = json.load(fh)
        report["runs"].append(entry)
    path = out_dir / "report.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return path

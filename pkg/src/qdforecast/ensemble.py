"""Ensemble forecasting with bootstrap and fixed-mask dropout members.

An ensemble spec like "(SA-H3)xBT10" or "(SA-H1)xBT50xMC50" combines k
optimized network structures with n bootstrap retrains and m dropout
variants per structure-resample pair.  Every member rolls out
autoregressively on its own predictions; the per-step mean is the forecast
and the per-step population standard deviation is the confidence interval
half-width.
"""

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .dataset import WindowedDataset, as_arrays
from .lstm import (LstmNetwork, TrainConfig, TrainingDivergence,
                   predict_autoregressive, train)
from .seeding import derive_seed

log = logging.getLogger(__name__)

_LABEL_RE = re.compile(
    r"^\((?P<opt>[A-Za-z]+)-H(?P<k>\d+)\)"
    r"(?:[x×]BT(?P<n>\d+))?"
    r"(?:[x×]MC(?P<m>\d+))?$"
)


@dataclass(frozen=True)
class EnsembleSpec:
    """Parsed (OPT-Hk)xBTn xMCm label; n or m of zero means that axis is off."""

    optimizer: str
    k: int
    n_bootstrap: int = 0
    m_dropout: int = 0
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one structure (k >= 1)")
        if self.n_bootstrap < 0 or self.m_dropout < 0:
            raise ValueError("bootstrap and dropout counts cannot be negative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def n_members(self):
        return self.k * max(self.n_bootstrap, 1) * max(self.m_dropout, 1)

    @property
    def label(self):
        out = f"({self.optimizer.upper()}-H{self.k})"
        if self.n_bootstrap:
            out += f"xBT{self.n_bootstrap}"
        if self.m_dropout:
            out += f"xMC{self.m_dropout}"
        return out

    @classmethod
    def parse(cls, label: str, dropout_rate: float = 0.5):
        m = _LABEL_RE.match(label.strip())
        if m is None:
            raise ValueError(f"cannot parse ensemble spec {label!r}")
        return cls(optimizer=m.group("opt").upper(),
                   k=int(m.group("k")),
                   n_bootstrap=int(m.group("n") or 0),
                   m_dropout=int(m.group("m") or 0),
                   dropout_rate=dropout_rate)


def bootstrap_resample(dataset: WindowedDataset, seed: int) -> WindowedDataset:
    """Same-size with-replacement resample of A1 and A2 merged, re-split 7:3.

    The external holdout passes through untouched.
    """
    merged = list(dataset.train) + list(dataset.internal)
    m = len(merged)
    if m == 0:
        raise ValueError("cannot resample an empty dataset")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, m, size=m)
    resampled = [merged[i] for i in picks]
    n_train = (7 * m) // 10
    return WindowedDataset(
        samples=resampled,
        window_length=dataset.window_length,
        train=resampled[:n_train],
        internal=resampled[n_train:],
        external=list(dataset.external),
        seed=seed,
    )


def retrain_on_resample(widths, dataset: WindowedDataset, cfg: TrainConfig,
                        seed: int, dropout_mask=None, dropout_rate: float = 0.0):
    """Fresh network of the given topology trained on the (re)sampled data."""
    dim = dataset.dim
    rng = np.random.default_rng(derive_seed(seed, "init"))
    net = LstmNetwork.initialize(dim, list(widths), dim, rng,
                                 window_length=dataset.window_length,
                                 dropout_mask=dropout_mask,
                                 dropout_rate=dropout_rate)
    train_cfg = TrainConfig(batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                            learning_rate=cfg.learning_rate, beta1=cfg.beta1,
                            beta2=cfg.beta2, eps=cfg.eps, patience=cfg.patience,
                            seed=derive_seed(seed, "train"))
    net, _ = train(net, as_arrays(dataset.train), as_arrays(dataset.internal), train_cfg)
    return net


def dropout_mask_for(width: int, rate: float, rng) -> np.ndarray:
    """0/1 mask over `width` units with exactly round(rate * width) zeros."""
    n_off = int(round(rate * width))
    mask = np.ones(width)
    off = rng.choice(width, size=n_off, replace=False)
    mask[off] = 0.0
    return mask


def mc_dropout_variants(widths, m: int, rate: float = 0.5, seed: int = 0):
    """m topology templates: last layer doubled, each with a fixed random mask.

    Returns a list of (widths, mask) pairs; each variant is meant to be
    trained from scratch with its mask active in training and prediction.
    """
    if m < 1:
        raise ValueError("need at least one dropout variant")
    widths = list(widths)
    widths[-1] = 2 * widths[-1]
    variants = []
    for v in range(m):
        rng = np.random.default_rng(derive_seed(seed, "mask", v))
        variants.append((tuple(widths), dropout_mask_for(widths[-1], rate, rng)))
    return variants


@dataclass
class EnsembleMember:
    network: LstmNetwork
    structure_index: int
    bootstrap_index: int
    dropout_index: int
    memory_steps: int


def build_ensemble(spec: EnsembleSpec, structures, make_dataset_for, cfg: TrainConfig,
                   master_seed: int = 0):
    """Train all k * max(n,1) * max(m,1) members of the spec.

    `structures` is a list of HyperPoint-like objects (widths, memory_fs);
    `make_dataset_for` maps a structure to its WindowedDataset.  Divergent
    members are dropped with a warning; the survivor list is returned.
    """
    if len(structures) < spec.k:
        raise ValueError(f"spec needs {spec.k} structures, got {len(structures)}")
    members = []
    n_dropped = 0
    for si, x in enumerate(structures[: spec.k]):
        base = make_dataset_for(x)
        for bi in range(max(spec.n_bootstrap, 1)):
            if spec.n_bootstrap:
                ds = bootstrap_resample(base, derive_seed(master_seed, "boot", si, bi))
            else:
                ds = base
            if spec.m_dropout:
                variants = mc_dropout_variants(x.widths, spec.m_dropout,
                                               spec.dropout_rate,
                                               derive_seed(master_seed, "mc", si, bi))
            else:
                variants = [(tuple(x.widths), None)]
            for mi, (widths, mask) in enumerate(variants):
                seed = derive_seed(master_seed, "member", si, bi, mi)
                try:
                    net = retrain_on_resample(
                        widths, ds, cfg, seed, dropout_mask=mask,
                        dropout_rate=spec.dropout_rate if mask is not None else 0.0)
                except TrainingDivergence as exc:
                    n_dropped += 1
                    log.warning("dropping diverged member (%d,%d,%d): %s", si, bi, mi, exc)
                    continue
                members.append(EnsembleMember(network=net, structure_index=si,
                                              bootstrap_index=bi, dropout_index=mi,
                                              memory_steps=ds.window_length))
    if not members:
        raise RuntimeError("all ensemble members diverged during training")
    if n_dropped:
        log.warning("ensemble proceeding with %d of %d members",
                    len(members), spec.n_members)
    return members


@dataclass
class EnsembleForecast:
    times: np.ndarray
    mean: np.ndarray   # (n_steps, d)
    std: np.ndarray    # (n_steps, d)
    n_members: int

    def __post_init__(self):
        if np.any(self.std < 0):
            raise ValueError("negative standard deviation")


def ensemble_predict(members, seed_window, n_steps: int,
                     times=None) -> EnsembleForecast:
    """Roll every member out from one shared seed window and aggregate."""
    if not members:
        raise ValueError("empty ensemble")
    window = np.asarray(seed_window, dtype=float)
    ls = {m.memory_steps for m in members}
    if ls != {window.shape[0]}:
        raise ValueError(f"member window lengths {sorted(ls)} do not match "
                         f"seed window of {window.shape[0]} rows")
    rollouts = np.stack([predict_autoregressive(m.network, window, n_steps)
                         for m in members])
    return _aggregate(rollouts, n_steps, times)


def ensemble_forecast(members, history_values, n_steps: int,
                      times=None) -> EnsembleForecast:
    """Like ensemble_predict but each member takes its own last-L seed window,
    so structures with different memory times can share one ensemble."""
    if not members:
        raise ValueError("empty ensemble")
    history = np.asarray(history_values, dtype=float)
    rollouts = []
    for m in members:
        if m.memory_steps > len(history):
            raise ValueError("history shorter than a member's window")
        rollouts.append(predict_autoregressive(
            m.network, history[len(history) - m.memory_steps:], n_steps))
    return _aggregate(np.stack(rollouts), n_steps, times)


def _aggregate(rollouts, n_steps, times):
    mean = rollouts.mean(axis=0)
    std = rollouts.std(axis=0)  # population convention: the ensemble is the whole model set
    if times is None:
        times = np.arange(n_steps, dtype=float)
    return EnsembleForecast(times=np.asarray(times, dtype=float), mean=mean,
                            std=std, n_members=rollouts.shape[0])


def prediction_error(forecast: EnsembleForecast, reference_values,
                     reference_times=None):
    """Signed and absolute per-step error of the ensemble mean.

    Returns (signed (n, d), absolute (n, d), summary dict).
    """
    ref = np.asarray(reference_values, dtype=float)
    if ref.shape != forecast.mean.shape:
        raise ValueError(f"reference shape {ref.shape} does not match "
                         f"forecast shape {forecast.mean.shape}")
    if reference_times is not None:
        rt = np.asarray(reference_times, dtype=float)
        if rt.shape != forecast.times.shape or not np.allclose(rt, forecast.times):
            raise ValueError("forecast and reference time grids differ")
    signed = forecast.mean - ref
    abserr = np.abs(signed)
    summary = {
        "max_abs_err": float(abserr.max()),
        "mean_abs_err": float(abserr.mean()),
        "horizon_fs": float(forecast.times[-1] - forecast.times[0]) if len(forecast.times) > 1 else 0.0,
    }
    return signed, abserr, summary


_FORECAST_COLS = {
    1: "t_fs,mean_delta,std_delta,n_members",
    3: "t_fs,mean_delta,std_delta,mean_re12,std_re12,mean_im12,std_im12,n_members",
}

_ERROR_COLS = {
    1: "t_fs,err_delta",
    3: "t_fs,err_delta,err_re12,err_im12",
}


def forecast_to_csv(forecast: EnsembleForecast, path):
    d = forecast.mean.shape[1]
    if d not in _FORECAST_COLS:
        raise ValueError(f"unsupported feature dimension {d}")
    cols = [forecast.times]
    for j in range(d):
        cols += [forecast.mean[:, j], forecast.std[:, j]]
    cols.append(np.full(len(forecast.times), forecast.n_members))
    np.savetxt(path, np.column_stack(cols), delimiter=",",
               header=_FORECAST_COLS[d], comments="", fmt="%.17g")


def forecast_from_csv(path) -> EnsembleForecast:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = (raw.shape[1] - 2) // 2
    mean = raw[:, 1 : 1 + 2 * d : 2]
    std = raw[:, 2 : 2 + 2 * d : 2]
    return EnsembleForecast(times=raw[:, 0], mean=mean, std=std,
                            n_members=int(raw[0, -1]))


def error_report(forecast: EnsembleForecast, reference_values, csv_path, json_path):
    """Write the per-step signed error CSV and the JSON summary."""
    signed, _, summary = prediction_error(forecast, reference_values)
    d = signed.shape[1]
    if d not in _ERROR_COLS:
        raise ValueError(f"unsupported feature dimension {d}")
    np.savetxt(csv_path, np.column_stack([forecast.times, signed]), delimiter=",",
               header=_ERROR_COLS[d], comments="", fmt="%.17g")
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary

"""Feature extraction and window slicing for the forecasting models.

A trajectory becomes a feature series X(t) = [delta, Re rho12, Im rho12]
(delta = rho11 - rho22) or just [delta] in population-only mode.  Sliding
windows of L consecutive steps plus a next-step target form the samples;
the chronological 3:1 split separates training material (group A) from the
external validation holdout (group B), and A is shuffled and re-split 7:3
into training (A1) and internal validation (A2).
"""

from dataclasses import dataclass

import numpy as np

from .tdvp import Trajectory

FULL = "full"
POPULATION_ONLY = "population"


@dataclass
class FeatureSeries:
    times: np.ndarray
    values: np.ndarray  # (n, 3) in full mode, (n, 1) in population-only mode
    mode: str

    def __len__(self):
        return len(self.times)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


@dataclass
class Sample:
    """L input rows plus the immediately following target row."""

    inputs: np.ndarray   # (L, d)
    target: np.ndarray   # (d,)
    start: int           # index of the first input row in the source series

    @property
    def target_index(self):
        return self.start + len(self.inputs)


@dataclass
class WindowedDataset:
    samples: list
    window_length: int
    train: list       # A1
    internal: list    # A2
    external: list    # B
    seed: int

    @property
    def dim(self):
        return self.samples[0].inputs.shape[1]


def vectorize(traj: Trajectory, mode: str = FULL) -> FeatureSeries:
    """Feature rows from a trajectory; delta = rho11 - rho22."""
    delta = traj.data[:, 0] - traj.data[:, 1]
    if mode == FULL:
        values = np.column_stack([delta, traj.data[:, 2], traj.data[:, 3]])
    elif mode == POPULATION_ONLY:
        values = delta[:, None]
    else:
        raise ValueError(f"unknown feature mode {mode!r}")
    return FeatureSeries(times=traj.times.copy(), values=values, mode=mode)


def slice_windows(series: FeatureSeries, window_length: int):
    """All n - L sliding windows with next-step targets."""
    n = len(series)
    if window_length < 1:
        raise ValueError("window length must be >= 1")
    if n <= window_length:
        raise ValueError(f"series of length {n} too short for windows of length {window_length}")
    return [
        Sample(inputs=series.values[i : i + window_length],
               target=series.values[i + window_length], start=i)
        for i in range(n - window_length)
    ]


def memory_time_to_steps(tau_fs: float, dt_fs: float) -> int:
    """Window length L = round(tau / dt)."""
    if tau_fs < dt_fs:
        raise ValueError("memory time must be at least one time step")
    return int(round(tau_fs / dt_fs))


def split_groups(samples, seed: int, window_length=None) -> WindowedDataset:
    """Chronological 3:1 split into A and B, then seeded 7:3 split of A.

    Group membership is assigned by window start time; group A keeps the
    first floor(3/4 * n) samples.  A is shuffled with `seed` and divided
    70/30 into A1 / A2 (floor for A1, remainder to A2); the samples' internal
    row order is never touched.
    """
    if len(samples) < 8:
        raise ValueError("need at least 8 samples to split")
    ordered = sorted(samples, key=lambda s: s.start)
    n = len(ordered)
    n_a = (3 * n) // 4
    group_a, group_b = ordered[:n_a], ordered[n_a:]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_a)
    shuffled = [group_a[i] for i in perm]
    n_a1 = (7 * n_a) // 10
    if window_length is None:
        window_length = len(ordered[0].inputs)
    return WindowedDataset(
        samples=ordered,
        window_length=window_length,
        train=shuffled[:n_a1],
        internal=shuffled[n_a1:],
        external=group_b,
        seed=seed,
    )


def make_dataset(series: FeatureSeries, window_length: int, seed: int) -> WindowedDataset:
    return split_groups(slice_windows(series, window_length), seed, window_length)


def as_arrays(samples):
    """Stack a sample list into (inputs (N, L, d), targets (N, d))."""
    x = np.stack([s.inputs for s in samples])
    y = np.stack([s.target for s in samples])
    return x, y

"""Hyperparameter search over network topology and memory time.

Three samplers share one trial interface: plain random search, simulated
annealing over the discrete grids (Metropolis acceptance exp(-df/T) with
geometric cooling), and a tree-structured Parzen estimator that splits the
history at the gamma-quantile and samples from the good-set density.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureSeries, as_arrays, make_dataset, memory_time_to_steps
from .lstm import LstmNetwork, TrainConfig, TrainingDivergence, predict_autoregressive, train
from .seeding import derive_seed


@dataclass(frozen=True)
class HyperPoint:
    """One point in the search space."""

    widths: tuple      # per-layer neuron counts; length = layer count
    memory_fs: float

    @property
    def n_layers(self):
        return len(self.widths)

    def as_dict(self):
        return {"widths": list(self.widths), "memory_fs": self.memory_fs}

    @classmethod
    def from_dict(cls, d):
        return cls(widths=tuple(int(w) for w in d["widths"]), memory_fs=float(d["memory_fs"]))


@dataclass(frozen=True)
class SearchSpace:
    layer_counts: tuple = (2, 3, 4)
    neuron_grid: tuple = tuple(range(10, 511, 20))
    memory_grid_fs: tuple = ()

    def __post_init__(self):
        if not (self.layer_counts and self.neuron_grid and self.memory_grid_fs):
            raise ValueError("all grids must be non-empty")

    @classmethod
    def paper(cls, history_fs: float, dt_fs: float = 0.5):
        """Memory-time grid from 5 fs to a quarter of the history duration."""
        upper = history_fs / 4.0
        n = int(math.floor((upper - 5.0) / dt_fs))
        if n < 0:
            raise ValueError("history too short for the 5 fs memory-time floor")
        memory = tuple(5.0 + dt_fs * k for k in range(n + 1))
        return cls(memory_grid_fs=memory)

    @classmethod
    def desk(cls, history_fs: float, dt_fs: float = 0.5):
        """Reduced grids that keep a full campaign in the minutes range.

        Structures with fewer than two layers of ~100 units or memory times
        below ~50 fs fit the one-step map well but drift on long
        autoregressive rollouts, so the desk grids stay clear of them; the
        publication-scale grids remain available through `paper`.
        """
        upper = history_fs / 4.0
        memory = tuple(t for t in np.arange(50.0, min(upper, 70.0) + 1e-9, 10.0))
        if not memory:
            memory = (max(5.0, upper),)
        return cls(layer_counts=(2,), neuron_grid=(120, 170), memory_grid_fs=memory)

    def contains(self, x: HyperPoint):
        return (
            x.n_layers in self.layer_counts
            and all(w in self.neuron_grid for w in x.widths)
            and any(abs(x.memory_fs - m) < 1e-9 for m in self.memory_grid_fs)
        )

    def sample(self, rng) -> HyperPoint:
        n_layers = int(rng.choice(self.layer_counts))
        widths = tuple(int(rng.choice(self.neuron_grid)) for _ in range(n_layers))
        memory = float(rng.choice(self.memory_grid_fs))
        return HyperPoint(widths=widths, memory_fs=memory)

    def neighbor(self, x: HyperPoint, rng) -> HyperPoint:
        """Perturb one coordinate to an adjacent grid value."""
        coords = ["layers", "memory"] + [f"w{i}" for i in range(x.n_layers)]
        pick = coords[int(rng.integers(len(coords)))]
        if pick == "layers":
            counts = sorted(self.layer_counts)
            ci = counts.index(x.n_layers)
            cj = min(max(ci + (1 if rng.random() < 0.5 else -1), 0), len(counts) - 1)
            target = counts[cj]
            widths = list(x.widths)
            while len(widths) < target:
                widths.append(int(rng.choice(self.neuron_grid)))
            widths = widths[:target]
            return HyperPoint(widths=tuple(widths), memory_fs=x.memory_fs)
        if pick == "memory":
            grid = sorted(self.memory_grid_fs)
            gi = int(np.argmin([abs(m - x.memory_fs) for m in grid]))
            gj = min(max(gi + (1 if rng.random() < 0.5 else -1), 0), len(grid) - 1)
            return HyperPoint(widths=x.widths, memory_fs=grid[gj])
        slot = int(pick[1:])
        grid = sorted(self.neuron_grid)
        gi = grid.index(x.widths[slot])
        gj = min(max(gi + (1 if rng.random() < 0.5 else -1), 0), len(grid) - 1)
        widths = list(x.widths)
        widths[slot] = grid[gj]
        return HyperPoint(widths=tuple(widths), memory_fs=x.memory_fs)


@dataclass
class Trial:
    x: HyperPoint
    loss: float
    seed: int
    iteration: int = -1
    network: object = None
    history: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# the training objective

def evaluate_point(x: HyperPoint, series: FeatureSeries, seed: int,
                   train_cfg: TrainConfig | None = None,
                   dropout_mask=None, dropout_rate=0.0,
                   keep_network=True) -> Trial:
    """Train a network at `x` and score it on the external validation group.

    The score is the MSE of a single autoregressive rollout over group B's
    time range against the exact series.  A training divergence records an
    infinite loss instead of failing the trial.
    """
    cfg = train_cfg or TrainConfig()
    cfg = TrainConfig(**{**cfg.__dict__, "seed": derive_seed(seed, "train")})
    window = memory_time_to_steps(x.memory_fs, series.dt)
    ds = make_dataset(series, window, seed=derive_seed(seed, "split"))
    rng = np.random.default_rng(derive_seed(seed, "init"))
    net = LstmNetwork.initialize(series.dim, list(x.widths), series.dim, rng,
                                 window_length=window,
                                 dropout_mask=dropout_mask, dropout_rate=dropout_rate)
    try:
        net, history = train(net, as_arrays(ds.train), as_arrays(ds.internal), cfg)
        loss = external_rollout_mse(net, series, ds)
    except TrainingDivergence:
        return Trial(x=x, loss=float("inf"), seed=seed)
    if not np.isfinite(loss):
        return Trial(x=x, loss=float("inf"), seed=seed)
    return Trial(x=x, loss=loss, seed=seed,
                 network=net if keep_network else None, history=history)


def external_rollout_mse(net: LstmNetwork, series: FeatureSeries, ds) -> float:
    """MSE of one autoregressive rollout across the group-B target range."""
    first_target = min(s.target_index for s in ds.external)
    n_steps = len(series) - first_target
    seed_window = series.values[first_target - ds.window_length : first_target]
    pred = predict_autoregressive(net, seed_window, n_steps)
    truth = series.values[first_target:]
    return float(np.mean((pred - truth) ** 2))


def make_objective(series: FeatureSeries, train_cfg: TrainConfig | None = None,
                   keep_network=True):
    def objective(x: HyperPoint, seed: int) -> Trial:
        return evaluate_point(x, series, seed, train_cfg=train_cfg, keep_network=keep_network)
    return objective


# ---------------------------------------------------------------------------
# samplers

def random_search(space: SearchSpace, budget: int, objective, seed: int):
    """Budget i.i.d. uniform draws; no adaptivity."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    trials = []
    for it in range(budget):
        x = space.sample(rng)
        t = objective(x, derive_seed(seed, "trial", it))
        t.iteration = it
        trials.append(t)
    return trials


def sa_accept(delta_f: float, temperature: float, rng) -> bool:
    """Metropolis rule: always accept improvements, otherwise exp(-df/T)."""
    if delta_f < 0:
        return True
    if temperature <= 0:
        return False
    return rng.random() < math.exp(-delta_f / temperature)


def sa_search(space: SearchSpace, budget: int, objective, seed: int,
              cooling: float = 0.97, warmup: int = 10, t0: float | None = None):
    """Simulated annealing walk over the grids.

    The first `warmup` trials are independent uniform probes whose
    consecutive |df| values set the starting temperature (their median,
    unless `t0` is given); the annealing walk then starts from the best
    probe and cools geometrically.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    trials = []
    n_probe = min(warmup, budget)
    for it in range(n_probe):
        t = objective(space.sample(rng), derive_seed(seed, "trial", it))
        t.iteration = it
        trials.append(t)
    if t0 is None:
        deltas = [abs(trials[i].loss - trials[i - 1].loss) for i in range(1, n_probe)
                  if np.isfinite(trials[i].loss) and np.isfinite(trials[i - 1].loss)
                  and trials[i].loss != trials[i - 1].loss]
        temperature = float(np.median(deltas)) if deltas else 1.0
    else:
        temperature = t0
    finite = [t for t in trials if np.isfinite(t.loss)]
    current = min(finite, key=lambda t: t.loss) if finite else trials[-1]
    for it in range(n_probe, budget):
        cand = space.neighbor(current.x, rng)
        t = objective(cand, derive_seed(seed, "trial", it))
        t.iteration = it
        trials.append(t)
        temperature *= cooling
        if np.isfinite(t.loss) and sa_accept(t.loss - current.loss, temperature, rng):
            current = t
    return trials


def _categorical_density(values, grid):
    """Add-one smoothed categorical frequencies over a discrete grid."""
    grid = list(grid)
    counts = np.ones(len(grid))
    index = {v: i for i, v in enumerate(grid)}
    for v in values:
        counts[index[v]] += 1
    return counts / counts.sum()


def tpe_split(losses, gamma: float):
    """Indices of the good / poor sets; |good| = ceil(gamma * n)."""
    n = len(losses)
    n_good = int(math.ceil(gamma * n))
    order = np.argsort(losses, kind="stable")
    return order[:n_good], order[n_good:]


def tpe_score(l_density: float, g_density: float, gamma: float) -> float:
    """Expected improvement up to a constant: (gamma + (g/l)(1-gamma))^-1."""
    if l_density <= 0:
        return 0.0
    return 1.0 / (gamma + (g_density / l_density) * (1.0 - gamma))


class TpeState:
    """Per-coordinate categorical Parzen estimators over the grids."""

    def __init__(self, space: SearchSpace, gamma: float):
        self.space = space
        self.gamma = gamma

    def fit(self, trials):
        losses = [t.loss for t in trials]
        if not np.isfinite(losses).all() or len(set(losses)) < 2:
            return None
        good_idx, poor_idx = tpe_split(losses, self.gamma)
        good = [trials[i] for i in good_idx]
        poor = [trials[i] for i in poor_idx]

        def densities(subset):
            layer_vals = [t.x.n_layers for t in subset]
            width_vals = [w for t in subset for w in t.x.widths]
            mem_vals = [min(self.space.memory_grid_fs, key=lambda m: abs(m - t.x.memory_fs))
                        for t in subset]
            return {
                "layers": _categorical_density(layer_vals, self.space.layer_counts),
                "widths": _categorical_density(width_vals, self.space.neuron_grid),
                "memory": _categorical_density(mem_vals, self.space.memory_grid_fs),
            }

        return densities(good), densities(poor)

    def sample_from(self, dens, rng) -> HyperPoint:
        n_layers = int(rng.choice(self.space.layer_counts, p=dens["layers"]))
        widths = tuple(int(rng.choice(self.space.neuron_grid, p=dens["widths"]))
                       for _ in range(n_layers))
        memory = float(rng.choice(self.space.memory_grid_fs, p=dens["memory"]))
        return HyperPoint(widths=widths, memory_fs=memory)

    def point_density(self, x: HyperPoint, dens) -> float:
        layers = sorted(self.space.layer_counts)
        grid = sorted(self.space.neuron_grid)
        memg = sorted(self.space.memory_grid_fs)
        p = dens["layers"][sorted(self.space.layer_counts).index(x.n_layers)]
        for w in x.widths:
            p *= dens["widths"][list(self.space.neuron_grid).index(w)]
        mem = min(memg, key=lambda m: abs(m - x.memory_fs))
        p *= dens["memory"][list(self.space.memory_grid_fs).index(mem)]
        return float(p)


def tpe_search(space: SearchSpace, budget: int, objective, seed: int,
               gamma: float = 0.25, n_startup: int = 20, n_candidates: int = 24):
    """TPE: startup random draws, then sample candidates from the good-set
    density and evaluate the one with the best l/g expected-improvement score."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    state = TpeState(space, gamma)
    trials = []
    seen = set()
    for it in range(budget):
        fitted = state.fit(trials) if it >= n_startup else None
        if fitted is None:
            x = space.sample(rng)
        else:
            good_dens, poor_dens = fitted
            candidates = [state.sample_from(good_dens, rng) for _ in range(n_candidates)]
            # revisiting an evaluated point only reinforces its own density
            fresh = [c for c in candidates if (c.widths, c.memory_fs) not in seen]
            if not fresh:
                fresh = [space.sample(rng)]
            scores = [
                tpe_score(state.point_density(c, good_dens),
                          state.point_density(c, poor_dens), gamma)
                for c in fresh
            ]
            x = fresh[int(np.argmax(scores))]
        seen.add((x.widths, x.memory_fs))
        t = objective(x, derive_seed(seed, "trial", it))
        t.iteration = it
        trials.append(t)
    return trials


# ---------------------------------------------------------------------------
# campaigns

def synthetic_objective(x: HyperPoint, seed: int = 0) -> Trial:
    """Deterministic quadratic bowl used to compare samplers without training.

    Minimum at first-layer width 170, three layers, memory time 50 fs.
    """
    loss = ((x.widths[0] - 170) ** 2
            + 100.0 * abs(x.n_layers - 3)
            + (x.memory_fs - 50.0) ** 2)
    return Trial(x=x, loss=float(loss), seed=seed)


def synthetic_space() -> SearchSpace:
    """Compact grids around the synthetic bowl's minimum.

    Small enough that plain random search locates the exact minimum within
    about a hundred draws with high probability.
    """
    return SearchSpace(layer_counts=(2, 3, 4),
                       neuron_grid=(150, 170, 190),
                       memory_grid_fs=(45.0, 50.0, 55.0))


METHODS = {"rs": random_search, "sa": sa_search, "tpe": tpe_search}
METHOD_ALIASES = {"rs": "rs", "sa": "sa", "tpe": "tpe", "bo": "tpe"}


@dataclass
class CampaignResult:
    method: str
    tasks: list          # per task: list of trials
    master_seed: int

    @property
    def n_trials(self):
        return sum(len(t) for t in self.tasks)

    @property
    def task_bests(self):
        return [min(task, key=lambda t: t.loss) for task in self.tasks]

    def top(self, k: int):
        """The k lowest-loss task bests, sorted ascending."""
        bests = sorted(self.task_bests, key=lambda t: t.loss)
        if len(bests) < k:
            raise ValueError(f"campaign has only {len(bests)} tasks, cannot select top {k}")
        return bests[:k]


def run_campaign(space: SearchSpace, method: str, objective, n_tasks: int = 20,
                 iters: int = 100, master_seed: int = 0, **sampler_kwargs) -> CampaignResult:
    key = METHOD_ALIASES.get(method.lower())
    if key is None:
        raise ValueError(f"unknown search method {method!r}")
    sampler = METHODS[key]
    tasks = []
    for task in range(n_tasks):
        task_seed = derive_seed(master_seed, "task", task)
        tasks.append(sampler(space, iters, objective, task_seed, **sampler_kwargs))
    return CampaignResult(method=key, tasks=tasks, master_seed=master_seed)

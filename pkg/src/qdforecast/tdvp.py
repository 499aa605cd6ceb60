"""TDVP propagation of the site-exciton MPS and trajectory recording.

The propagator advances one symmetric sweep per time step (left-to-right
half step, right-to-left half step); site tensors evolve forward and the
bond / zero-site tensors evolve backward, each through a Krylov local
integrator.  The two-site scheme grows bonds adaptively through truncated
SVD; the one-site scheme keeps bonds fixed and is exactly norm and energy
conserving up to integrator tolerance.
"""

from dataclasses import dataclass, replace

import numpy as np

from .physmodel import SiteExcitonModel, DiscretizedBath, discretize_bath
from .tensornet import (
    MatrixProductState,
    MatrixProductOperator,
    build_mpo,
    canonicalize,
    default_layout,
    expectation,
    krylov_expm_apply,
    product_state,
    svd_truncate,
)


@dataclass(frozen=True)
class PropagationConfig:
    dt: float = 0.5
    t_end: float = 1000.0
    scheme: str = "two-site"
    svd_cutoff: float = 1e-13
    max_bond: int = 64
    krylov_tol: float = 1e-12
    record_stride: int = 1
    # optional two-site warmup before a one-site run (bond growth)
    warmup_steps: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.t_end < self.dt:
            raise ValueError("t_end must be >= dt")
        if self.svd_cutoff < 0:
            raise ValueError("svd_cutoff must be >= 0")
        if self.scheme not in ("one-site", "two-site"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class Trajectory:
    """Time series of the electronic reduced density matrix.

    `data` columns: rho11, rho22, Re rho12, Im rho12.
    """

    times: np.ndarray
    data: np.ndarray

    HEADER = "t_fs,rho11,rho22,re_rho12,im_rho12"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (len(self.times), 4):
            raise ValueError("trajectory data must be (n_times, 4)")

    def __len__(self):
        return len(self.times)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def validate(self, trace_tol=1e-6):
        trace = self.data[:, 0] + self.data[:, 1]
        if np.max(np.abs(trace - 1.0)) > trace_tol:
            raise ValueError("trajectory trace deviates from 1 beyond tolerance")
        pops = self.data[:, :2]
        if pops.min() < -trace_tol or pops.max() > 1 + trace_tol:
            raise ValueError("populations out of [0, 1] beyond tolerance")

    def to_csv(self, path):
        rows = np.column_stack([self.times, self.data])
        np.savetxt(path, rows, delimiter=",", header=self.HEADER, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(times=rows[:, 0], data=rows[:, 1:5])

    def restricted(self, t_max):
        keep = self.times <= t_max + 1e-9
        return Trajectory(times=self.times[keep], data=self.data[keep])


def initial_state(model: SiteExcitonModel, bath: DiscretizedBath, n_boson_levels: int,
                  excited_site: int = 1, layout=None) -> MatrixProductState:
    """Product MPS: excited electronic state, every bath mode in its ground level."""
    if layout is None:
        layout = default_layout(bath)
    vac = np.zeros(n_boson_levels)
    vac[0] = 1.0
    elec = np.zeros(2)
    elec[excited_site - 1] = 1.0
    locals_ = [elec if s[0] == "elec" else vac for s in layout]
    return product_state(locals_)


def reduced_density_matrix(mps: MatrixProductState, elec_index=None):
    """2x2 electronic density matrix, rho[i, j] = <phi_i| Tr_bath |psi><psi| |phi_j>."""
    if elec_index is None:
        elec_index = mps.local_dims.index(2)
    if mps.center != elec_index:
        mps = canonicalize(mps, elec_index)
    m = mps.tensors[elec_index]
    rho = np.einsum("aib,ajb->ij", m, m.conj())
    return rho


# ---------------------------------------------------------------------------
# environment contractions

def _env_left_step(env, a, w):
    t = np.tensordot(env, a, axes=(2, 0))                 # (bra, op, d, ar)
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))         # (bra, ar, dbra, wr)
    t = np.tensordot(a.conj(), t, axes=([0, 1], [0, 2]))  # (arbra, ar, wr)
    return t.transpose(0, 2, 1)


def _env_right_step(env, a, w):
    t = np.tensordot(a, env, axes=(2, 2))                 # (al, d, bra, op)
    t = np.tensordot(t, w, axes=([1, 3], [2, 3]))         # (al, bra, wl, dbra)
    t = np.tensordot(a.conj(), t, axes=([1, 2], [3, 1]))  # (albra, al, wl)
    return t.transpose(0, 2, 1)


def _apply_h1(left, w, right, x):
    t = np.tensordot(left, x, axes=(2, 0))                # (bl, wl, d, ar)
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))         # (bl, ar, dbra, wr)
    t = np.tensordot(t, right, axes=([1, 3], [2, 1]))     # (bl, dbra, br)
    return t


def _apply_h0(left, right, c):
    t = np.tensordot(left, c, axes=(2, 0))                # (bl, wl, a)
    t = np.tensordot(t, right, axes=([2, 1], [2, 1]))     # (bl, br)
    return t


def _apply_h2(left, wi, wj, right, theta):
    t = np.tensordot(left, theta, axes=(2, 0))            # (bl, wl, d1, d2, ar)
    t = np.tensordot(t, wi, axes=([1, 2], [0, 2]))        # (bl, d2, ar, dbra1, w)
    t = np.tensordot(t, wj, axes=([4, 1], [0, 2]))        # (bl, ar, dbra1, dbra2, wr)
    t = np.tensordot(t, right, axes=([1, 4], [2, 1]))     # (bl, dbra1, dbra2, br)
    return t


class TdvpEngine:
    """Stateful sweep engine over one MPS / MPO pair."""

    def __init__(self, mps: MatrixProductState, mpo: MatrixProductOperator,
                 config: PropagationConfig):
        if mps.local_dims != mpo.local_dims:
            raise ValueError("MPS / MPO dimension mismatch")
        self.mps = canonicalize(mps, 0)
        self.mpo = mpo
        self.cfg = config
        m = len(mps)
        one = np.ones((1, 1, 1), dtype=complex)
        self.lenv = [one] + [None] * m
        self.renv = [None] * m + [one]
        for i in range(m - 1, 0, -1):
            self.renv[i] = _env_right_step(self.renv[i + 1], self.mps.tensors[i], self.mpo.tensors[i])

    # -- local solves ------------------------------------------------------
    def _evolve_site(self, i, dt, sign):
        a = self.mps.tensors[i]
        left, w, right = self.lenv[i], self.mpo.tensors[i], self.renv[i + 1]
        shape = a.shape
        out = krylov_expm_apply(
            lambda v: _apply_h1(left, w, right, v.reshape(shape)).ravel(),
            a.ravel(), dt, sign=sign, tol=self.cfg.krylov_tol)
        self.mps.tensors[i] = out.reshape(shape)

    def _evolve_bond(self, c, i_left_env, dt):
        # backward zero-site evolution between sites i_left_env-1 and i_left_env
        left, right = self.lenv[i_left_env], self.renv[i_left_env]
        shape = c.shape
        out = krylov_expm_apply(
            lambda v: _apply_h0(left, right, v.reshape(shape)).ravel(),
            c.ravel(), dt, sign=-1, tol=self.cfg.krylov_tol)
        return out.reshape(shape)

    # -- one-site scheme ---------------------------------------------------
    def _sweep_one_site(self, dt):
        m = len(self.mps)
        half = dt / 2.0
        for i in range(m):
            self._evolve_site(i, half, sign=+1)
            if i < m - 1:
                al, d, ar = self.mps.tensors[i].shape
                q, c = np.linalg.qr(self.mps.tensors[i].reshape(al * d, ar))
                self.mps.tensors[i] = q.reshape(al, d, -1)
                self.lenv[i + 1] = _env_left_step(self.lenv[i], self.mps.tensors[i], self.mpo.tensors[i])
                c = self._evolve_bond(c, i + 1, half)
                self.mps.tensors[i + 1] = np.tensordot(c, self.mps.tensors[i + 1], axes=(1, 0))
        for i in range(m - 1, -1, -1):
            self._evolve_site(i, half, sign=+1)
            if i > 0:
                al, d, ar = self.mps.tensors[i].shape
                q, r = np.linalg.qr(self.mps.tensors[i].reshape(al, d * ar).conj().T)
                self.mps.tensors[i] = q.conj().T.reshape(-1, d, ar)
                self.renv[i] = _env_right_step(self.renv[i + 1], self.mps.tensors[i], self.mpo.tensors[i])
                c = self._evolve_bond(r.conj().T, i, half)
                self.mps.tensors[i - 1] = np.tensordot(self.mps.tensors[i - 1], c, axes=(2, 0))
        self.mps.center = 0

    # -- two-site scheme ---------------------------------------------------
    def _split_theta(self, theta, keep_left):
        al, d1, d2, ar = theta.shape
        u, s, vh, _ = svd_truncate(theta.reshape(al * d1, d2 * ar),
                                   cutoff=self.cfg.svd_cutoff, max_bond=self.cfg.max_bond)
        k = len(s)
        if keep_left:
            # center stays on the left factor; right factor is orthonormal
            left = (u * s).reshape(al, d1, k)
            right = vh.reshape(k, d2, ar)
        else:
            left = u.reshape(al, d1, k)
            right = (s[:, None] * vh).reshape(k, d2, ar)
        return left, right

    def _evolve_theta(self, i, dt):
        theta = np.tensordot(self.mps.tensors[i], self.mps.tensors[i + 1], axes=(2, 0))
        left, right = self.lenv[i], self.renv[i + 2]
        wi, wj = self.mpo.tensors[i], self.mpo.tensors[i + 1]
        shape = theta.shape
        out = krylov_expm_apply(
            lambda v: _apply_h2(left, wi, wj, right, v.reshape(shape)).ravel(),
            theta.ravel(), dt, sign=+1, tol=self.cfg.krylov_tol)
        return out.reshape(shape)

    def _sweep_two_site(self, dt):
        m = len(self.mps)
        half = dt / 2.0
        for i in range(m - 1):
            theta = self._evolve_theta(i, half)
            a, b = self._split_theta(theta, keep_left=False)
            self.mps.tensors[i], self.mps.tensors[i + 1] = a, b
            self.lenv[i + 1] = _env_left_step(self.lenv[i], a, self.mpo.tensors[i])
            if i < m - 2:
                self._evolve_site(i + 1, -half, sign=+1)
        for i in range(m - 2, -1, -1):
            theta = self._evolve_theta(i, half)
            a, b = self._split_theta(theta, keep_left=True)
            self.mps.tensors[i], self.mps.tensors[i + 1] = a, b
            self.renv[i + 1] = _env_right_step(self.renv[i + 2], b, self.mpo.tensors[i + 1])
            if i > 0:
                self._evolve_site(i, -half, sign=+1)
        self.mps.center = 0

    def step(self, dt, scheme=None):
        scheme = scheme or self.cfg.scheme
        if scheme == "two-site" and len(self.mps) >= 2:
            self._sweep_two_site(dt)
        else:
            self._sweep_one_site(dt)

    def energy(self):
        """<H> from the effective one-site Hamiltonian at the current center."""
        c = self.mps.center
        if c is None:
            return float(np.real(expectation(self.mps, self.mpo)))
        a = self.mps.tensors[c]
        ha = _apply_h1(self.lenv[c], self.mpo.tensors[c], self.renv[c + 1], a)
        return float(np.real(np.vdot(a, ha)) / np.real(np.vdot(a, a)))

    def center_norm(self):
        c = self.mps.center
        if c is None:
            return self.mps.norm()
        return float(np.linalg.norm(self.mps.tensors[c]))


def tdvp_sweep(mps, mpo, dt, config: PropagationConfig | None = None):
    """Advance an MPS by one symmetric TDVP step; returns the evolved copy."""
    cfg = config or PropagationConfig(dt=dt, t_end=max(dt, 1.0))
    engine = TdvpEngine(mps, mpo, cfg)
    engine.step(dt)
    return engine.mps


def propagate(model: SiteExcitonModel, config: PropagationConfig,
              n_boson_levels: int = 6, bath: DiscretizedBath | None = None,
              excited_site: int = 1, n_modes_override=None,
              diagnostics: bool = False):
    """Propagate from the vertical-excitation initial state and record rho(t).

    Samples every record_stride steps, including t = 0.  With
    diagnostics=True also returns per-sample norm and energy.
    """
    if bath is None:
        bath = discretize_bath(model, n_modes_override=n_modes_override)
    layout = default_layout(bath)
    mpo = build_mpo(model, bath, n_boson_levels, layout=layout)
    psi0 = initial_state(model, bath, n_boson_levels, excited_site=excited_site, layout=layout)
    elec_index = layout.index(("elec",))
    engine = TdvpEngine(psi0, mpo, config)

    n_steps = int(round(config.t_end / config.dt))
    times = [0.0]
    rows = [_rho_row(reduced_density_matrix(engine.mps, elec_index))]
    norms = [engine.center_norm()]
    energies = [engine.energy()] if diagnostics else None

    for step in range(1, n_steps + 1):
        scheme = config.scheme
        if config.scheme == "one-site" and step <= config.warmup_steps:
            scheme = "two-site"
        engine.step(config.dt, scheme=scheme)
        if step % config.record_stride == 0 or step == n_steps:
            times.append(step * config.dt)
            rows.append(_rho_row(reduced_density_matrix(engine.mps, elec_index)))
            norms.append(engine.center_norm())
            if diagnostics:
                energies.append(engine.energy())

    traj = Trajectory(times=np.array(times), data=np.array(rows))
    if diagnostics:
        return traj, {"norms": np.array(norms), "energies": np.array(energies),
                      "bond_dims": list(engine.mps.bond_dims)}
    return traj


def _rho_row(rho):
    return [float(np.real(rho[0, 0])), float(np.real(rho[1, 1])),
            float(np.real(rho[0, 1])), float(np.imag(rho[0, 1]))]

"""Dense tensor kernels plus MPS / MPO machinery.

Conventions: an MPS site tensor has shape (left_bond, physical, right_bond),
an MPO site tensor has shape (left_bond, bra, ket, right_bond), boundary
bonds are 1.  Everything is complex double precision.
"""

import numpy as np

from .units import HBAR
from .physmodel import DiscretizedBath, SiteExcitonModel


# ---------------------------------------------------------------------------
# dense kernels

def svd_truncate(matrix, cutoff=0.0, max_bond=None):
    """Truncated SVD of a rank-2 array.

    Discards singular values below cutoff * s_max and caps the kept count at
    max_bond.  Returns (U, s, Vh, discarded_weight) where discarded_weight is
    the squared weight of the dropped values relative to the total.
    """
    matrix = np.asarray(matrix)
    if matrix.size == 0:
        raise ValueError("cannot SVD an empty matrix")
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    u, s, vh = np.linalg.svd(matrix, full_matrices=False)
    total = float(np.sum(s**2))
    keep = len(s)
    if total > 0 and cutoff > 0:
        keep = int(np.count_nonzero(s >= cutoff * s[0]))
    keep = max(keep, 1)
    if max_bond is not None:
        keep = min(keep, int(max_bond))
    discarded = float(np.sum(s[keep:] ** 2)) / total if total > 0 else 0.0
    return u[:, :keep], s[:keep], vh[:keep, :], discarded


def krylov_expm_apply(apply_h, v, dt, sign=+1, tol=1e-12, max_krylov=60):
    """Apply exp(-1j * sign * H * dt / hbar) to v via a Lanczos subspace.

    `apply_h` must be a Hermitian linear map acting on vectors like v.  The
    subspace is grown until the estimated residual drops below tol (relative
    to ||v||) or max_krylov is reached; breakdown terminates early.
    """
    v = np.asarray(v, dtype=complex).ravel()
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        raise ValueError("cannot propagate a zero vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entries in input vector")
    z = -1j * sign * dt / HBAR

    basis = [v / beta0]
    alphas = []
    betas = []
    result = None
    for j in range(max_krylov):
        w = apply_h(basis[j])
        a = float(np.real(np.vdot(basis[j], w)))
        alphas.append(a)
        w = w - a * basis[j]
        if j > 0:
            w = w - betas[-1] * basis[j - 1]
        # full reorthogonalization keeps the small-subspace arithmetic stable
        for q in basis:
            w = w - np.vdot(q, w) * q
        b = np.linalg.norm(w)

        k = j + 1
        t_mat = np.diag(alphas)
        if k > 1:
            t_mat = t_mat + np.diag(betas, 1) + np.diag(betas, -1)
        evals, evecs = np.linalg.eigh(t_mat)
        small = evecs @ (np.exp(z * evals) * evecs[0, :].conj())
        result = beta0 * np.stack(basis, axis=1) @ small
        # residual estimate: weight leaking out of the subspace
        if b * abs(small[-1]) * abs(z) <= tol or b < 1e-14:
            break
        betas.append(b)
        basis.append(w / b)
    return result


# ---------------------------------------------------------------------------
# matrix product state

class MatrixProductState:
    """Ordered site tensors with canonical-center bookkeeping.

    `center` is the index of the orthogonality center, or None when the
    gauge is unknown.
    """

    def __init__(self, tensors, center=None):
        self.tensors = [np.asarray(t, dtype=complex) for t in tensors]
        for i in range(len(self.tensors) - 1):
            if self.tensors[i].shape[2] != self.tensors[i + 1].shape[0]:
                raise ValueError(f"bond mismatch between sites {i} and {i + 1}")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must be 1")
        self.center = center

    def __len__(self):
        return len(self.tensors)

    @property
    def local_dims(self):
        return [t.shape[1] for t in self.tensors]

    @property
    def bond_dims(self):
        return [t.shape[2] for t in self.tensors[:-1]]

    def copy(self):
        return MatrixProductState([t.copy() for t in self.tensors], center=self.center)

    def norm(self):
        return float(np.sqrt(np.real(inner_product(self, self))))

    def to_dense(self):
        """Full state vector; only for small chains."""
        psi = self.tensors[0][0]  # (d0, a1)
        for t in self.tensors[1:]:
            psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1)


def product_state(local_states):
    """Bond-dimension-1 MPS from a list of local state vectors."""
    tensors = []
    for s in local_states:
        s = np.asarray(s, dtype=complex)
        tensors.append(s.reshape(1, -1, 1))
    return MatrixProductState(tensors, center=None)


def random_mps(local_dims, bond_dim, rng):
    """Random normalized MPS for tests."""
    m = len(local_dims)
    bonds = [1] + [min(bond_dim, int(np.prod(local_dims[: i + 1])), int(np.prod(local_dims[i + 1 :]))) for i in range(m - 1)] + [1]
    tensors = []
    for i, d in enumerate(local_dims):
        shape = (bonds[i], d, bonds[i + 1])
        tensors.append(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    mps = MatrixProductState(tensors)
    nrm = mps.norm()
    mps.tensors[0] = mps.tensors[0] / nrm
    return mps


def inner_product(a: MatrixProductState, b: MatrixProductState):
    """<a|b> by left-to-right contraction."""
    if a.local_dims != b.local_dims:
        raise ValueError("local dimension mismatch")
    env = np.ones((1, 1), dtype=complex)
    for ta, tb in zip(a.tensors, b.tensors):
        env = np.tensordot(env, tb, axes=(1, 0))          # (aA, d, aB')
        env = np.tensordot(ta.conj(), env, axes=([0, 1], [0, 1]))  # (aA', aB')
    return complex(env[0, 0])


def canonicalize(mps: MatrixProductState, center: int) -> MatrixProductState:
    """Return a mixed-canonical copy with the orthogonality center at `center`."""
    m = len(mps)
    if not 0 <= center < m:
        raise IndexError(f"center {center} out of range for {m} sites")
    out = mps.copy()
    for i in range(center):
        al, d, ar = out.tensors[i].shape
        q, r = np.linalg.qr(out.tensors[i].reshape(al * d, ar))
        out.tensors[i] = q.reshape(al, d, -1)
        out.tensors[i + 1] = np.tensordot(r, out.tensors[i + 1], axes=(1, 0))
    for i in range(m - 1, center, -1):
        al, d, ar = out.tensors[i].shape
        q, r = np.linalg.qr(out.tensors[i].reshape(al, d * ar).conj().T)
        out.tensors[i] = q.conj().T.reshape(-1, d, ar)
        out.tensors[i - 1] = np.tensordot(out.tensors[i - 1], r.conj().T, axes=(2, 0))
    out.center = center
    return out


# ---------------------------------------------------------------------------
# matrix product operator

class MatrixProductOperator:
    """Ordered operator tensors of shape (left, bra, ket, right)."""

    def __init__(self, tensors):
        self.tensors = [np.asarray(t, dtype=complex) for t in tensors]
        for i in range(len(self.tensors) - 1):
            if self.tensors[i].shape[3] != self.tensors[i + 1].shape[0]:
                raise ValueError(f"operator bond mismatch between sites {i} and {i + 1}")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[3] != 1:
            raise ValueError("boundary operator bonds must be 1")

    def __len__(self):
        return len(self.tensors)

    @property
    def local_dims(self):
        return [t.shape[1] for t in self.tensors]

    def to_dense(self):
        """Full matrix; only for small chains."""
        op = self.tensors[0][0]  # (d, d, b1)
        for t in self.tensors[1:]:
            op = np.tensordot(op, t, axes=(op.ndim - 1, 0))
            # (..bra, ket.., bra_i, ket_i, b)  -> interleave at the end
        # op has index order bra1 ket1 bra2 ket2 ... b(=1)
        op = op[..., 0]
        m = op.ndim // 2
        dims = op.shape
        bra = [2 * i for i in range(m)]
        ket = [2 * i + 1 for i in range(m)]
        op = np.transpose(op, bra + ket)
        dim = int(np.prod([dims[i] for i in bra]))
        return op.reshape(dim, dim)


def boson_operators(n_levels):
    """Truncated ladder operators: (annihilation b, number N, position Q)."""
    if n_levels < 2:
        raise ValueError("need at least 2 boson levels")
    b = np.diag(np.sqrt(np.arange(1, n_levels)), k=1).astype(complex)
    num = np.diag(np.arange(n_levels)).astype(complex)
    q = (b + b.conj().T) / np.sqrt(2.0)
    return b, num, q


def default_layout(bath: DiscretizedBath):
    """Site ordering: state-1 modes (descending omega), electronic site,
    state-2 modes (ascending omega)."""
    n = bath.n_modes
    left = [("bath1", j) for j in range(n - 1, -1, -1)]
    right = [("bath2", j) for j in range(n)]
    return left + [("elec",)] + right


def build_mpo(model: SiteExcitonModel, bath: DiscretizedBath, n_boson_levels: int,
              layout=None) -> MatrixProductOperator:
    """MPO for H = H_S + H_B + H_SB in second quantization.

    H_B = sum_kj omega_kj b+b (zero-point shift dropped) and
    H_SB = sum_k |k><k| sum_j kappa_kj (b+ + b)/sqrt(2).  The layout must
    keep all state-1 modes left of the electronic site and all state-2 modes
    right of it; the operator bond dimension is then 3 with channels
    [identity, coupling-in-flight, completed-H].
    """
    if layout is None:
        layout = default_layout(bath)
    _validate_layout(layout, bath.n_modes)

    _, num, q = boson_operators(n_boson_levels)
    eye_b = np.eye(n_boson_levels, dtype=complex)
    eye_e = np.eye(2, dtype=complex)
    omega = bath.omega_ev
    kappa = bath.kappa_ev
    h_sys = model.h_system()
    p1 = np.diag([1.0, 0.0]).astype(complex)
    p2 = np.diag([0.0, 1.0]).astype(complex)

    tensors = []
    for pos, site in enumerate(layout):
        if site[0] == "elec":
            w = np.zeros((3, 2, 2, 3), dtype=complex)
            w[0, :, :, 0] = eye_e
            w[0, :, :, 1] = p2      # open a coupling channel for the right bath
            w[0, :, :, 2] = h_sys
            w[1, :, :, 2] = p1      # close the left-bath coupling channel
            w[2, :, :, 2] = eye_e
        else:
            which, j = site
            d = n_boson_levels
            w = np.zeros((3, d, d, 3), dtype=complex)
            w[0, :, :, 0] = eye_b
            w[0, :, :, 2] = omega[j] * num
            w[2, :, :, 2] = eye_b
            if which == "bath1":
                w[0, :, :, 1] = kappa[j] * q   # accumulate kappa*Q, closed later by P1
                w[1, :, :, 1] = eye_b
            else:
                w[1, :, :, 1] = eye_b
                w[1, :, :, 2] = kappa[j] * q   # close the P2 channel
        if pos == 0:
            w = w[:1]
        if pos == len(layout) - 1:
            w = w[:, :, :, 2:]
        tensors.append(w)
    return MatrixProductOperator(tensors)


def _validate_layout(layout, n_modes):
    kinds = [s[0] for s in layout]
    if kinds.count("elec") != 1:
        raise ValueError("layout must contain exactly one electronic site")
    e = kinds.index("elec")
    if any(k != "bath1" for k in kinds[:e]) or any(k != "bath2" for k in kinds[e + 1 :]):
        raise ValueError("layout must place all state-1 modes left and state-2 modes right of the electronic site")
    for which, count in (("bath1", e), ("bath2", len(layout) - e - 1)):
        seen = sorted(s[1] for s in layout if s[0] == which)
        if count != n_modes or seen != list(range(n_modes)):
            raise ValueError(f"layout must list each {which} mode exactly once")


def expectation(mps: MatrixProductState, mpo: MatrixProductOperator):
    """<psi| O |psi> by left-to-right contraction."""
    if mps.local_dims != mpo.local_dims:
        raise ValueError("local dimension mismatch")
    env = np.ones((1, 1, 1), dtype=complex)  # (bra, op, ket)
    for a, w in zip(mps.tensors, mpo.tensors):
        env = np.tensordot(env, a, axes=(2, 0))               # (bra, op, d_k, ar)
        env = np.tensordot(env, w, axes=([1, 2], [0, 2]))      # (bra, ar, d_b, br)
        env = np.tensordot(a.conj(), env, axes=([0, 1], [0, 2]))  # (ar_bra, ar, br)
        env = env.transpose(0, 2, 1)
    return complex(env[0, 0, 0])

"""Two-state site-exciton model with a Debye bath.

The system consists of two local-excited electronic states with energies
V11, V22 and a real electronic coupling V12.  Each state couples linearly to
its own harmonic bath characterized by a Debye spectral density
J(w) = 2*lam*w*wc / (w^2 + wc^2), discretized on a regular frequency grid.
"""

from dataclasses import dataclass, field

import numpy as np

from .units import cm_to_ev


@dataclass(frozen=True)
class SpectralDensity:
    """Debye spectral density parameters, both in cm^-1."""

    reorganization_energy: float  # lam
    characteristic_frequency: float  # wc

    def __post_init__(self):
        if self.reorganization_energy < 0:
            raise ValueError("reorganization energy must be >= 0")
        if self.characteristic_frequency <= 0:
            raise ValueError("characteristic frequency must be > 0")

    def __call__(self, omega_cm):
        return eval_spectral_density(self, omega_cm)


def eval_spectral_density(sd: SpectralDensity, omega_cm):
    """J(w) = 2*lam*w*wc / (w^2 + wc^2), everything in cm^-1."""
    omega = np.asarray(omega_cm, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0")
    lam = sd.reorganization_energy
    wc = sd.characteristic_frequency
    out = 2.0 * lam * omega * wc / (omega**2 + wc**2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SiteExcitonModel:
    """System Hamiltonian parameters plus the bath discretization grid.

    delta_e_ev is the site-energy gap V11 - V22; we place V11 = delta_e_ev
    and V22 = 0.  Both electronic states carry an identical bath.
    """

    delta_e_ev: float
    v12_ev: float
    bath: SpectralDensity
    omega_max_cm: float = 1200.0
    delta_omega_cm: float = 12.0

    def __post_init__(self):
        if self.delta_omega_cm <= 0:
            raise ValueError("grid spacing must be > 0")
        ratio = self.omega_max_cm / self.delta_omega_cm
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("omega_max must be an integer multiple of delta_omega")

    @property
    def v11_ev(self):
        return self.delta_e_ev

    @property
    def v22_ev(self):
        return 0.0

    def h_system(self):
        """2x2 electronic Hamiltonian in eV."""
        return np.array(
            [[self.v11_ev, self.v12_ev], [self.v12_ev, self.v22_ev]], dtype=complex
        )


@dataclass(frozen=True)
class DiscretizedBath:
    """Per-state mode frequencies and couplings, in cm^-1.

    Both states share the same discretization, so a single pair of arrays
    describes either bath.
    """

    omega_cm: np.ndarray
    kappa_cm: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega_cm, dtype=float)
        kappa = np.asarray(self.kappa_cm, dtype=float)
        if omega.shape != kappa.shape:
            raise ValueError("frequency and coupling arrays must have equal length")
        if np.any(omega <= 0):
            raise ValueError("mode frequencies must be > 0")
        if np.any(kappa < 0):
            raise ValueError("mode couplings must be >= 0")
        object.__setattr__(self, "omega_cm", omega)
        object.__setattr__(self, "kappa_cm", kappa)

    @property
    def n_modes(self):
        return len(self.omega_cm)

    @property
    def omega_ev(self):
        return cm_to_ev(self.omega_cm)

    @property
    def kappa_ev(self):
        return cm_to_ev(self.kappa_cm)


def discretize_bath(model: SiteExcitonModel, n_modes_override=None) -> DiscretizedBath:
    """Discretize the Debye density on omega_j = j*dw, j = 1..omega_max/dw.

    kappa_j = sqrt((2/pi) * J(omega_j) * dw).  omega = 0 is excluded (J
    vanishes there and the mode would be inert).  `n_modes_override` keeps
    the 0..omega_max domain but re-spaces the grid to the requested count.
    """
    if n_modes_override is not None:
        dw = model.omega_max_cm / n_modes_override
    else:
        dw = model.delta_omega_cm
    n = int(round(model.omega_max_cm / dw))
    omega = dw * np.arange(1, n + 1)
    kappa = np.sqrt((2.0 / np.pi) * eval_spectral_density(model.bath, omega) * dw)
    return DiscretizedBath(omega_cm=omega, kappa_cm=kappa)


_PRESETS = {
    "I": dict(delta_e_ev=0.0, lam=64.0),
    "II": dict(delta_e_ev=0.0, lam=256.0),
    "III": dict(delta_e_ev=0.0186, lam=64.0),
    "IV": dict(delta_e_ev=0.0186, lam=225.0),
}


def model_preset(model_id: str, omega_max_cm=1200.0, delta_omega_cm=12.0) -> SiteExcitonModel:
    """Site-exciton presets I-IV; V12 = 0.0124 eV and wc = 200 cm^-1 throughout."""
    key = str(model_id).upper()
    if key not in _PRESETS:
        raise KeyError(f"unknown model preset {model_id!r}; expected one of I, II, III, IV")
    p = _PRESETS[key]
    return SiteExcitonModel(
        delta_e_ev=p["delta_e_ev"],
        v12_ev=0.0124,
        bath=SpectralDensity(reorganization_energy=p["lam"], characteristic_frequency=200.0),
        omega_max_cm=omega_max_cm,
        delta_omega_cm=delta_omega_cm,
    )


def model_from_dict(cfg: dict) -> SiteExcitonModel:
    """Build a model from a configuration mapping.

    Either `model_id` or the explicit parameter set {delta_e_ev, v12_ev,
    omega_c_cm, lambda_cm} must be present; grid fields are optional.
    """
    omega_max = float(cfg.get("omega_max_cm", 1200.0))
    dw = float(cfg.get("delta_omega_cm", 12.0))
    if "model_id" in cfg:
        return model_preset(cfg["model_id"], omega_max_cm=omega_max, delta_omega_cm=dw)
    try:
        return SiteExcitonModel(
            delta_e_ev=float(cfg["delta_e_ev"]),
            v12_ev=float(cfg["v12_ev"]),
            bath=SpectralDensity(
                reorganization_energy=float(cfg["lambda_cm"]),
                characteristic_frequency=float(cfg["omega_c_cm"]),
            ),
            omega_max_cm=omega_max,
            delta_omega_cm=dw,
        )
    except KeyError as exc:
        raise KeyError(f"model configuration missing field {exc.args[0]!r}") from exc

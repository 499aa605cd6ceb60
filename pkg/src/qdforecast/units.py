"""Unit conversions for the internal energy system.

Internal convention: energies in eV, time in fs.  Wavenumber inputs are
converted at the boundary; "fs^-1" denotes angular frequency, related to
energy by E = hbar * omega.
"""

import numpy as np

# hbar in eV*fs
HBAR = 0.6582119569

# CODATA: 1 eV = 8065.543937 cm^-1
CM_PER_EV = 8065.543937


def cm_to_ev(value):
    """Convert wavenumbers (cm^-1) to energy (eV)."""
    return np.asarray(value, dtype=float) / CM_PER_EV if np.ndim(value) else value / CM_PER_EV


def ev_to_cm(value):
    return np.asarray(value, dtype=float) * CM_PER_EV if np.ndim(value) else value * CM_PER_EV


_TO_EV = {
    "ev": 1.0,
    "cm-1": 1.0 / CM_PER_EV,
    "fs-1": HBAR,
}


def convert(value, from_unit, to_unit):
    """Convert `value` between energy-like units: 'eV', 'cm-1', 'fs-1'.

    'fs-1' is angular frequency (rad/fs); the eV equivalent is hbar*omega.
    Raises KeyError for unknown units.
    """
    fu = from_unit.lower()
    tu = to_unit.lower()
    if fu not in _TO_EV or tu not in _TO_EV:
        unknown = fu if fu not in _TO_EV else tu
        raise KeyError(f"unknown unit {unknown!r}; expected one of {sorted(_TO_EV)}")
    if fu == tu:
        return value
    return value * _TO_EV[fu] / _TO_EV[tu]

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qdforecast.units import HBAR, cm_to_ev, convert, ev_to_cm


def test_ev_to_cm_constant():
    assert abs(convert(1.0, "ev", "cm-1") - 8065.54) < 0.01


def test_identity():
    assert convert(3.7, "ev", "ev") == 3.7
    assert convert(120.0, "cm-1", "cm-1") == 120.0


def test_round_trip():
    x = 0.0124
    back = convert(convert(x, "ev", "cm-1"), "cm-1", "ev")
    assert abs(back - x) < 1e-12 * abs(x)


def test_angular_frequency():
    # E = hbar * omega for the fs^-1 unit
    assert np.isclose(convert(1.0, "ev", "fs-1"), 1.0 / HBAR)
    assert np.isclose(convert(1.0 / HBAR, "fs-1", "ev"), 1.0)


def test_unknown_unit():
    with pytest.raises(KeyError):
        convert(1.0, "ev", "parsec")


def test_cm_ev_helpers_match_convert():
    assert cm_to_ev(200.0) == convert(200.0, "cm-1", "ev")
    assert ev_to_cm(0.1) == convert(0.1, "ev", "cm-1")


@given(st.floats(min_value=1e-6, max_value=1e6),
       st.sampled_from(["ev", "cm-1", "fs-1"]),
       st.sampled_from(["ev", "cm-1", "fs-1"]))
def test_round_trip_property(x, u, v):
    assert convert(convert(x, u, v), v, u) == pytest.approx(x, rel=1e-12)

import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambicon.model import (
    EffortCapWarning,
    EmptyBand,
    FbRegime,
    NonNegativeReservation,
    NonPositiveParameter,
    RiskProfile,
    SbRegime,
    classify_fb,
    classify_sb,
    validate,
)

from conftest import band


def test_validate_interior_example(profile):
    m = validate(profile, band(0.5, 1.5), band(0.5, 1.0))
    assert m.fb_regime is FbRegime.INTERIOR
    assert m.sb_regime is SbRegime.PRINCIPAL_TOP_IN_AGENT_BAND
    assert not m.effort_cap_binds


def test_validate_degenerate_example(profile):
    m = validate(profile, band(1, 2), band(0.2, 0.5))
    assert m.fb_regime is FbRegime.DEGENERATE_LOW
    assert m.sb_regime is SbRegime.DEGENERATE


def test_positive_reservation_rejected(profile):
    with pytest.raises(NonNegativeReservation, match="NonNegativeReservation"):
        validate(profile.replace(reservation=0.5), band(0.5, 1.5), band(0.5, 1.0))


@pytest.mark.parametrize("field", ["r_agent", "r_principal", "cost_coeff", "effort_cap", "horizon"])
@pytest.mark.parametrize("value", [0.0, -1.0, math.inf, math.nan])
def test_nonpositive_parameters_rejected(profile, field, value):
    with pytest.raises(NonPositiveParameter):
        validate(profile.replace(**{field: value}), band(0.5, 1.5), band(0.5, 1.0))


def test_empty_band_rejected(profile):
    with pytest.raises(EmptyBand, match="EmptyBand"):
        validate(profile, band(1.5, 0.5), band(0.5, 1.0))
    with pytest.raises(NonPositiveParameter):
        validate(profile, band(0.0, 0.5), band(0.5, 1.0))


def test_effort_cap_warning(profile):
    with pytest.warns(EffortCapWarning):
        m = validate(profile.replace(effort_cap=0.5), band(0.5, 1.5), band(0.5, 1.0))
    assert m.effort_cap_binds
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        validate(profile, band(0.5, 1.5), band(0.5, 1.0))


@pytest.mark.parametrize(
    "a, p, fb, sb",
    [
        ((1, 2), (0.2, 0.5), FbRegime.DEGENERATE_LOW, SbRegime.DEGENERATE),
        ((0.2, 0.5), (1, 2), FbRegime.DEGENERATE_HIGH, SbRegime.DEGENERATE),
        ((1, 1.5), (0.5, 1), FbRegime.BOUNDARY_PA, SbRegime.PRINCIPAL_TOP_IN_AGENT_BAND),
        ((0.6, 1.5), (0.5, 1), FbRegime.INTERIOR, SbRegime.PRINCIPAL_TOP_IN_AGENT_BAND),
        ((0.7, 1), (0.5, 1), FbRegime.BOUNDARY_TOPS, SbRegime.PRINCIPAL_TOP_IN_AGENT_BAND),
        ((0.5, 0.8), (0.8, 1.2), FbRegime.BOUNDARY_AP, SbRegime.AGENT_TOP_IN_PRINCIPAL_BAND),
        ((0.5, 0.8), (0.3, 1), FbRegime.INTERIOR_REV, SbRegime.AGENT_TOP_IN_PRINCIPAL_BAND),
    ],
)
def test_classification_table(a, p, fb, sb):
    assert classify_fb(band(*a), band(*p)) is fb
    assert classify_sb(band(*a), band(*p)) is sb


def test_classification_tolerance():
    a, p = band(0.5, 1.0), band(0.5, 1.0 + 1e-12)
    assert classify_fb(a, p) is FbRegime.INTERIOR_REV
    assert classify_fb(a, p, tol=1e-9) is FbRegime.BOUNDARY_TOPS


positive = st.floats(0.01, 5.0, allow_nan=False)


@given(positive, positive, positive, positive)
def test_classification_total_and_consistent(a1, a2, p1, p2):
    ba, bp = band(min(a1, a2), max(a1, a2)), band(min(p1, p2), max(p1, p2))
    fb = classify_fb(ba, bp)
    sb = classify_sb(ba, bp)
    assert isinstance(fb, FbRegime) and isinstance(sb, SbRegime)
    disjoint = ba.intersect(bp) is None
    assert fb.degenerate == disjoint
    assert (sb is SbRegime.DEGENERATE) == disjoint


@given(st.floats(-10.0, -1e-3), st.floats(0.05, 20.0))
def test_reservation_certainty_equivalent_round_trip(r, ra):
    p = RiskProfile(ra, 1.0, 1.0, 2.0, 1.0, r)
    assert abs(-math.exp(-ra * p.reservation_cert) - r) <= 1e-12 * abs(r)

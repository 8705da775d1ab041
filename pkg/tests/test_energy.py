"""Energy and emission arithmetic."""

import pytest

from slidemil.energy import energy_estimate
from slidemil.errors import NumericDomainError


def test_reported_training_energy():
    est = energy_estimate(500, 400, 0.35)
    assert est.energy_kwh == 200.0
    assert est.co2_kg == 70.0


def test_intensity_range_gives_emission_range():
    est = energy_estimate(500, 400, (0.35, 0.525))
    assert est.energy_kwh == 200.0
    assert est.co2_kg == (70.0, 105.0)


def test_zero_hours():
    est = energy_estimate(0, 400, 0.35)
    assert est.energy_kwh == 0.0
    assert est.co2_kg == 0.0


def test_negative_inputs_rejected():
    with pytest.raises(NumericDomainError):
        energy_estimate(-1, 400, 0.35)
    with pytest.raises(NumericDomainError):
        energy_estimate(1, -400, 0.35)
    with pytest.raises(NumericDomainError):
        energy_estimate(1, 400, -0.35)


def test_linear_in_hours_and_watts():
    base = energy_estimate(100, 300, 0.4)
    assert energy_estimate(200, 300, 0.4).energy_kwh == 2 * base.energy_kwh
    assert energy_estimate(100, 600, 0.4).energy_kwh == 2 * base.energy_kwh
    assert energy_estimate(200, 300, 0.4).co2_kg == 2 * base.co2_kg


def test_reversed_range_normalized():
    est = energy_estimate(10, 100, (0.5, 0.3))
    assert est.intensity == (0.3, 0.5)
    assert est.co2_kg == (0.3, 0.5)

"""Training energy and carbon accounting.

Pure arithmetic: kWh = hours * watts / 1000 and CO2 = kWh * intensity,
where the grid carbon intensity (kg CO2 per kWh) may be a single value
or a (low, high) range, in which case the emission estimate is a range.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NumericDomainError


@dataclass
class EnergyEstimate:
    hours: float
    watts: float
    energy_kwh: float
    intensity: float | tuple[float, float]
    co2_kg: float | tuple[float, float]

    def format(self) -> str:
        lines = [
            f"runtime: {self.hours:g} h at {self.watts:g} W",
            f"energy: {self.energy_kwh:g} kWh",
        ]
        if isinstance(self.co2_kg, tuple):
            lo, hi = self.co2_kg
            lines.append(
                f"emissions: {lo:g} to {hi:g} kg CO2 "
                f"(intensity {self.intensity[0]:g} to {self.intensity[1]:g} kg/kWh)"
            )
        else:
            lines.append(
                f"emissions: {self.co2_kg:g} kg CO2 (intensity {self.intensity:g} kg/kWh)"
            )
        return "\n".join(lines) + "\n"


def energy_estimate(hours: float, watts: float, intensity) -> EnergyEstimate:
    hours = float(hours)
    watts = float(watts)
    if hours < 0 or watts < 0:
        raise NumericDomainError(f"hours and watts must be nonnegative, got {hours}, {watts}")

    if isinstance(intensity, (tuple, list)):
        if len(intensity) != 2:
            raise NumericDomainError(f"intensity range needs 2 endpoints, got {len(intensity)}")
        lo, hi = float(intensity[0]), float(intensity[1])
        if lo < 0 or hi < 0:
            raise NumericDomainError(f"intensity must be nonnegative, got {intensity}")
        if lo > hi:
            lo, hi = hi, lo
        kwh = hours * watts / 1000.0
        return EnergyEstimate(hours, watts, kwh, (lo, hi), (kwh * lo, kwh * hi))

    value = float(intensity)
    if value < 0:
        raise NumericDomainError(f"intensity must be nonnegative, got {value}")
    kwh = hours * watts / 1000.0
    return EnergyEstimate(hours, watts, kwh, value, kwh * value)

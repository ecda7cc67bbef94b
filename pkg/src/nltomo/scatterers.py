from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScattererSpec:
    """Point scatterer: elevation (m), linear amplitude and phase (rad)."""

    elevation: float
    amplitude: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        # wrap into (-pi, pi]
        p = math.remainder(float(self.phase), 2 * math.pi)
        if p == -math.pi:
            p = math.pi
        object.__setattr__(self, "phase", p)

    @property
    def complex_amplitude(self) -> complex:
        return self.amplitude * complex(math.cos(self.phase), math.sin(self.phase))

    @classmethod
    def from_complex(cls, elevation: float, a: complex) -> "ScattererSpec":
        return cls(float(elevation), float(abs(a)), float(np.angle(a)))


@dataclass(frozen=True)
class ScattererSet:
    """Scatterers detected in one pixel together with the selected model order."""

    scatterers: tuple[ScattererSpec, ...] = field(default_factory=tuple)
    k_hat: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.k_hat != len(self.scatterers):
            raise ValueError("k_hat must equal the number of scatterers")

    @property
    def elevations(self) -> np.ndarray:
        return np.array([s.elevation for s in self.scatterers])

"""wavemoment: a desk-scale lab for wave source/speed recovery from boundary data."""

__version__ = "0.1.0"

from .fields import (
    Lattice,
    Domain,
    ScalarField,
    SpeedModel,
    build_lattice,
    ball_domain,
    box_domain,
    sample_field,
    sample_speed,
    constant_speed,
    volume_integral,
    persist_field,
    load_field,
)

__all__ = [
    "Lattice", "Domain", "ScalarField", "SpeedModel",
    "build_lattice", "ball_domain", "box_domain",
    "sample_field", "sample_speed", "constant_speed",
    "volume_integral", "persist_field", "load_field",
]

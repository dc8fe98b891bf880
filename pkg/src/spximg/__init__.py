"""Single-pixel camera simulation and reconstruction."""
from .grids import ComplexField, ImageGrid
from .masks import (
    MaskEnsemble,
    apply_modulation_depth,
    generate_circulant_masks,
    generate_random_masks,
    random_circulant_masks,
)
from .report import RunReport
from .scene import compose_scene, make_gaussian_beam, make_phantom
from .sensing import (
    FresnelPropagator,
    Measurements,
    SensingOperator,
    add_noise,
    adjoint_measure,
    forward_measure,
)

__version__ = "0.1.0"


def fresnel_propagator(d1, d2, wavelength, distance, pitch):
    """Unitary angular-spectrum propagator; see :class:`FresnelPropagator`."""
    return FresnelPropagator(d1, d2, wavelength, distance, pitch)

"""Numerical laboratory for spectra of randomly perturbed non-self-adjoint
semiclassical models on the torus."""

__version__ = "0.1.0"

from .errors import (
    CertificateError,
    ClusterSplitError,
    InternalConsistencyError,
    RefusalError,
    ScheduleError,
    TruncationError,
    UnresolvedError,
    VolumeLeakError,
    WeylLabError,
)
from .symbols import (
    PhaseGrid,
    PlanarDomain,
    SymbolModel,
    REGISTRY,
    make_tilde,
    pushforward_check,
    schrodinger_cos,
    sublevel_volume_profile,
    symbol_log_potential,
    transport,
    weyl_volume,
)
from .operators import (
    SpectralBasis,
    basis_for,
    discretize,
    reference_eigenbasis,
    sobolev_norm,
)
from .perturbation import (
    CoefficientLaw,
    ParameterSchedule,
    build_schedule,
    draw_potential,
    gaussian_law,
    rng_stream,
    uniform_ball_law,
)

__all__ = [name for name in dir() if not name.startswith("_")]

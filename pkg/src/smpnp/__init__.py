"""Finite element solver for the size-modified Poisson-Nernst-Planck
ion channel model."""

from .errors import (ConfigError, ConvergenceError, FeasibilityError,
                     LinearSolveError, MeshError, MeshFormatError, NewtonError,
                     SingularMatrixError, SmpnpError)
from .physics_model import (IonSpecies, ModelConstants, SpeciesSet,
                            compute_coupling_constants, mixture_species,
                            volume_from_radius)
from .mesh import (ChannelGeometry, LabeledMesh, SolventSubmesh,
                   extract_solvent_submesh, load_mesh, save_mesh,
                   synth_channel_mesh, unit_cube_mesh)
from .driver import RunConfig, RunResult, parse_config, run

__version__ = "1.0.0"

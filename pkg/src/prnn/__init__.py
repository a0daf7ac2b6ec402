"""Physically recurrent neural networks for path-dependent composites.

The package contains the material models embedded in the network
(:mod:`prnn.constitutive`), the network itself (:mod:`prnn.network`), its
hand-written backpropagation-through-time trainer (:mod:`prnn.train`), the
strain-path generators (:mod:`prnn.pathgen`) and a periodic RVE finite
element solver used as the reference oracle (:mod:`prnn.microfe`).
"""

from .constitutive import (
    FIBER_PROPS,
    MATRIX_HARDENING,
    MATRIX_PROPS,
    ElasticMaterial,
    ElasticProps,
    HardeningLaw,
    J2Material,
    MaterialResponse,
    MaterialState,
    ReturnMapDiverged,
    elastic_stiffness,
    update_elastic,
    update_j2,
    yield_stress,
)
from .microfe import build_rve, homogenize, label_path, solve_step
from .network import (
    PrnnConfig,
    PrnnParams,
    PrnnState,
    forward_sequence,
    forward_step,
    init_params,
    jacobian,
    predict,
)
from .pathgen import GpSpec, LoadPath, gp_walk, known_directions, make_dataset
from .train import TrainSpec, TrainingFault, backward_sequence, train

__version__ = "0.1.0"

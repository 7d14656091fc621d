"""Design toolkit for a MEMS-actuated fiber cavity on a surface ion trap."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    DomainBox,
    ElectrodeLayout,
    FiberAssembly,
    IonSpecies,
    RFDrive,
    TrapGeometry,
    ValidationError,
    VoltageSet,
    reference_layout,
)
from .configio import (  # noqa: F401
    ConfigError,
    GridParams,
    TrapConfig,
    dumps_config,
    load_config,
    loads_config,
)
from .grids import Grid3D, ScalarField3D, build_grid, probe  # noqa: F401
from .solver import (  # noqa: F401
    BasisSet,
    FieldSolver,
    GridTooCoarseError,
    PoissonSystem,
    SolverError,
    compose,
)

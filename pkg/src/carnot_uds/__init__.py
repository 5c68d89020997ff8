"""Step-2 Carnot groups: exact arithmetic, horizontal curves, CC distance brackets,
Pansu difference quotients, the Engel counterexample and UDS covering sums."""

__version__ = "0.1.0"

from .algebra import (
    GroupPoint,
    GroupStructure,
    HomomorphismSpec,
    HorizontalVector,
    IsometryMap,
    apply_hom,
    build_quotient,
    dilate,
    exp_horizontal,
    flow_line,
    horizontal_isometry,
    load_structure,
    multiply,
)
from .curves import ControlCurve, check_horizontal, lift, lift_through_hom, measure
from .distance import (
    CurveSynthesisReport,
    DistanceBracket,
    cc_bracket,
    distance_differential,
    koranyi,
    lower_bound_check,
    synthesize_curve,
)
from .engel import EngelCurve, EngelPoint, cube_root_scan, engel_cc_bracket, engel_dilate, engel_lift, engel_multiply, martinet_project
from .errors import (
    CarnotError,
    DegenerateDirection,
    EvaluationError,
    InvalidArgument,
    InvalidStructure,
    StructureMismatch,
)
from ._controlopt import Budget

__all__ = [name for name in dir() if not name.startswith("_")]

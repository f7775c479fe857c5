"""Feature-corrective transfer learning toolkit.

Loss kernels with analytic gradients, seeded image degradations, a tiny
hand-differentiated detector and the dual-backbone training harness.
"""

from . import _backend
from .degrade import DegradeSpec, Kind, degrade_image
from .gradfield import GradientField, sobel_filter
from .loss import (
    EansdlParams,
    LossBreakdown,
    attenuation,
    eansdl,
    eansdl_backward,
    eansdl_pyramid,
    extended_consistency,
    finite_diff_grad,
    level_radius,
    local_discrepancy,
    weighted_local,
)
from .tensor import (
    DomainError,
    FeatureMap,
    FeaturePyramid,
    ImageRGB,
    InvalidDimsError,
    ShapeError,
    TensorFormatError,
    new_feature_map,
    read_tensor_file,
    write_tensor_file,
)

BACKEND = _backend.name

__version__ = "0.1.0"

"""Multi-object state estimation with permanent-based probabilistic data association."""

from .core import (
    DegenerateStateError,
    Detection,
    GaussianBelief,
    InvalidDetectionError,
    LinearModel,
    NumericalError,
    bbox_to_z,
    cv2d_motion_model,
    sort_motion_model,
    symmetrize,
    z_to_bbox,
)
from .assoc import (
    AmbiguityPartition,
    LikelihoodMatrix,
    PermanentSizeError,
    WeightMatrix,
    ambiguity_check,
    gaussian_likelihood,
    iou,
    iou_matrix,
    jpdaf_weights,
    likelihood_from_iou,
    linear_assignment,
    permanent,
    permanent_minors,
    pkf_weights,
)
from .filters import (
    info_form_update,
    jpdaf_update,
    kf_update,
    pkf_update,
    pkf_update_joint,
    pmht_update,
    predict,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguityPartition",
    "DegenerateStateError",
    "Detection",
    "GaussianBelief",
    "InvalidDetectionError",
    "LikelihoodMatrix",
    "LinearModel",
    "NumericalError",
    "PermanentSizeError",
    "WeightMatrix",
    "ambiguity_check",
    "bbox_to_z",
    "cv2d_motion_model",
    "gaussian_likelihood",
    "info_form_update",
    "iou",
    "iou_matrix",
    "jpdaf_update",
    "jpdaf_weights",
    "kf_update",
    "likelihood_from_iou",
    "linear_assignment",
    "permanent",
    "permanent_minors",
    "pkf_update",
    "pkf_update_joint",
    "pkf_weights",
    "pmht_update",
    "predict",
    "sort_motion_model",
    "symmetrize",
    "z_to_bbox",
    "__version__",
]

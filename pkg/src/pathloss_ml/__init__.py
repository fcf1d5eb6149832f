"""Path loss prediction from eight scalar obstruction features."""
from .features import FeatureVector, extract_features, select_config
from .profile import EARTH_RADIUS_M, PathProfile, clearance_profile, curvature_drop

__all__ = [
    "EARTH_RADIUS_M",
    "FeatureVector",
    "PathProfile",
    "clearance_profile",
    "curvature_drop",
    "extract_features",
    "select_config",
]
__version__ = "0.1.0"

"""Point cloud registration from softmax-correlation weighted correspondences."""
from .config import PipelineConfig, load_config
from .errors import RegistrationError
from .geom import PointCloud, Se3Transform
from .pipeline import register_pair

__all__ = ["PipelineConfig", "PointCloud", "RegistrationError", "Se3Transform",
           "load_config", "register_pair"]
__version__ = "0.1.0"

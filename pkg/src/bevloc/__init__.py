"""bevloc: semantic bird's-eye-view reconstruction from surround cameras
and template-matching relocalization against rasterized SD maps."""

from ._kernels import backend_name
from .bev import BevGrid, BevSpec, build_bev, flatten_volume, oracle_bev, project_to_volume
from .geometry import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraRig,
    EgoPose,
    compose_pose,
    ground_to_pixel,
    invert_pose,
    pixel_to_ground,
    surround_rig,
)
from .localizer import LocalizationResult, LocalizeConfig, localize, perturb, soft_argmax, softmax2d
from .semantic_map import MapRaster, MapTile, SemanticMap, crop_tile, load_raster, rasterize, save_raster
from .synthworld import (
    SurroundObservation,
    World,
    WorldSpec,
    expected_height,
    generate_world,
    height_to_distribution,
    render_surround,
)

__version__ = "0.1.0"

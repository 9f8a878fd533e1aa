from enum import Enum
from monty.json import MSONable

# Geometric tolerances

# minimum face area in world units squared
EPS_AREA = 1e-12

# threshold on |1 + n_z| below which the face frame uses the fixed
# pi rotation about x
EPS_ANTIPODAL = 1e-8

# rays (or texel normals) closer than this to a splat plane are skipped
EPS_PARALLEL = 1e-6

# barycentric sums below this fall back to the face centroid
EPS_BARYCENTRIC_SUM = 1e-12

# lower bound on splat scales
EPS_SCALE = 1e-6

# Rasterization constants

Z_NEAR = 0.01
T_MIN = 1e-4
ALPHA_MAX = 0.999

# E <= 4.5 is the 3 sigma ellipse
ENERGY_CUTOFF = 4.5

# squared local radius of the 3 sigma disc of a flat splat
LOCAL_CUTOFF = 9.0

# screen space dilation in pixels squared
BLUR = 0.3

TILE_SIZE = 16

# lower bound on accumulated alpha when dividing out coverage
EPS_ALPHA = 1e-8

# Walk on triangles
MAX_WALK_STEPS = 8

# Baking
BAKE_HOPS = 3
DEPTH_THRESHOLD = 0.01

# Losses
ALPHA_MASK = 0.5
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

MODE_2D = '2d'
MODE_3D = '3d'
MODES = (MODE_2D, MODE_3D)


class Terminal(MSONable, Enum):
    KEEP = 1
    DISCARD = -1
    CLONE = 2
    SPLIT = 3


class AnchorSplatError(Exception):
    pass

class InvalidTransformError(AnchorSplatError):
    pass

class DegenerateFaceError(AnchorSplatError):
    pass

class MeshTopologyError(AnchorSplatError):
    pass

class CameraError(AnchorSplatError):
    pass

class ImageShapeError(AnchorSplatError):
    pass

class ConfigError(AnchorSplatError):
    pass

class CheckpointMismatchError(AnchorSplatError):
    pass

class ProbeError(AnchorSplatError):
    pass

class OptimizationAbort(AnchorSplatError):
    pass

class MalformedInputError(AnchorSplatError):
    pass


# errors which mean the user handed us something unusable.
# the command line maps these to exit code 2
BAD_INPUT_ERRORS = (
    ConfigError,
    MeshTopologyError,
    CameraError,
    CheckpointMismatchError,
    ImageShapeError,
    InvalidTransformError,
    MalformedInputError
)

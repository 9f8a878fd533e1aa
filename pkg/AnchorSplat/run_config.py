from pathlib import Path
from monty.json import MSONable
from monty.serialization import dumpfn

from AnchorSplat.constants import ConfigError
from AnchorSplat.logging import log_message


class RunConfig(MSONable):
    """
    every knob of a run. Config files are flat `key = value` text with
    `#` comments; values are parsed with the type of the default. None
    of the loss weights, learning rates or stage lengths are tuned
    values, they are engineering defaults.
    """

    def __init__(
            self,
            # paths
            dataset_dir='',
            template_mesh='',
            output_dir='./output',

            seed=0,
            threads=1,

            # synthetic dataset
            image_size=128,
            train_views=20,
            holdout_views=5,
            fov=40.0,
            camera_radius=3.5,
            target_shape='sphere',
            target_subdivisions=3,
            texture='checker',
            checker_size=0.25,

            # template
            template='cube',
            template_resolution=11,
            template_half_size=0.8,
            splats_per_face=3,

            # schedule
            stage_iterations=(2000, 2000, 1000),
            use_3d_stage=True,

            # diffusion and vertex updates
            lambda_l=20.0,
            use_diffusion=True,
            diffuse_momentum=True,
            momentum=0.9,
            lr_vertex=1e-3,

            # adaptive moments for splat and transform parameters
            lr_position=1.6e-4,
            lr_rotation=1e-3,
            lr_scale=5e-3,
            lr_opacity=5e-2,
            lr_color=2.5e-3,
            lr_transform=1e-3,
            adam_beta1=0.9,
            adam_beta2=0.999,
            adam_epsilon=1e-15,
            freeze_transform_after_stage1=False,
            use_displacement=True,

            # loss weights
            lambda_photo=0.8,
            lambda_ssim=0.2,
            lambda_reg=1e-4,
            lambda_normal=0.05,
            lambda_dist=100.0,
            normal_reference='depth',

            # realignment
            use_realignment=True,
            realign_interval=50,

            # densification
            densify_interval=100,
            densify_from=500,
            densify_until=3000,
            opacity_reset_interval=600,
            tau_grad=2e-4,
            tau_opacity=0.005,
            opacity_reset=0.1,
            percent_dense=0.01,
            max_splats=20000,

            # rasterizer
            blur=0.3,
            max_walk_steps=8,

            # logging and checkpoints
            log_interval=100,
            checkpoint_interval=1000,

            # baking
            texel_size=0.02,
            atlas_width=1024,
            bake_sort='outward',
            refine_iterations=20,
            refine_lr=0.25,
            tessellation_level=4,
            world_space_normals=False):

        self.dataset_dir = dataset_dir
        self.template_mesh = template_mesh
        self.output_dir = output_dir
        self.seed = seed
        self.threads = threads
        self.image_size = image_size
        self.train_views = train_views
        self.holdout_views = holdout_views
        self.fov = fov
        self.camera_radius = camera_radius
        self.target_shape = target_shape
        self.target_subdivisions = target_subdivisions
        self.texture = texture
        self.checker_size = checker_size
        self.template = template
        self.template_resolution = template_resolution
        self.template_half_size = template_half_size
        self.splats_per_face = splats_per_face
        self.stage_iterations = tuple(stage_iterations)
        self.use_3d_stage = use_3d_stage
        self.lambda_l = lambda_l
        self.use_diffusion = use_diffusion
        self.diffuse_momentum = diffuse_momentum
        self.momentum = momentum
        self.lr_vertex = lr_vertex
        self.lr_position = lr_position
        self.lr_rotation = lr_rotation
        self.lr_scale = lr_scale
        self.lr_opacity = lr_opacity
        self.lr_color = lr_color
        self.lr_transform = lr_transform
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_epsilon = adam_epsilon
        self.freeze_transform_after_stage1 = freeze_transform_after_stage1
        self.use_displacement = use_displacement
        self.lambda_photo = lambda_photo
        self.lambda_ssim = lambda_ssim
        self.lambda_reg = lambda_reg
        self.lambda_normal = lambda_normal
        self.lambda_dist = lambda_dist
        self.normal_reference = normal_reference
        self.use_realignment = use_realignment
        self.realign_interval = realign_interval
        self.densify_interval = densify_interval
        self.densify_from = densify_from
        self.densify_until = densify_until
        self.opacity_reset_interval = opacity_reset_interval
        self.tau_grad = tau_grad
        self.tau_opacity = tau_opacity
        self.opacity_reset = opacity_reset
        self.percent_dense = percent_dense
        self.max_splats = max_splats
        self.blur = blur
        self.max_walk_steps = max_walk_steps
        self.log_interval = log_interval
        self.checkpoint_interval = checkpoint_interval
        self.texel_size = texel_size
        self.atlas_width = atlas_width
        self.bake_sort = bake_sort
        self.refine_iterations = refine_iterations
        self.refine_lr = refine_lr
        self.tessellation_level = tessellation_level
        self.world_space_normals = world_space_normals

        self.validate()

    def validate(self):
        if len(self.stage_iterations) != 3 or min(self.stage_iterations) < 0:
            raise ConfigError(
                "stage_iterations needs three non negative counts, got " +
                str(self.stage_iterations))
        if self.bake_sort not in ('outward', 'inward'):
            raise ConfigError("bake_sort must be outward or inward")
        if self.normal_reference not in ('depth', 'external'):
            raise ConfigError("normal_reference must be depth or external")
        if self.template not in ('cube', 'icosphere'):
            raise ConfigError("template must be cube or icosphere")
        if self.target_shape not in ('sphere', 'cube'):
            raise ConfigError("target_shape must be sphere or cube")
        if self.texture not in ('checker', 'face_colors'):
            raise ConfigError("texture must be checker or face_colors")
        if self.lambda_l < 0:
            raise ConfigError("lambda_l must be non negative")
        if self.splats_per_face < 1:
            raise ConfigError("splats_per_face must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @classmethod
    def keys(cls):
        return list(cls().as_dict_plain().keys())

    def as_dict_plain(self):
        d = self.as_dict()
        d.pop('@module', None)
        d.pop('@class', None)
        d.pop('@version', None)
        return d

    def updated(self, overrides):
        """
        new config with the given {key: value or string} overrides
        """
        values = self.as_dict_plain()
        for key, value in overrides.items():
            if key not in values:
                raise ConfigError("unknown config key " + repr(key))
            if isinstance(value, str):
                value = parse_value(key, value, values[key])
            values[key] = value
        return RunConfig(**values)

    def snapshot(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / 'config.json'
        log_message("writing config snapshot " + path.as_posix())
        dumpfn(self, path, indent=2)


def parse_value(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ('true', 'yes', '1', 'on'):
                return True
            if lowered in ('false', 'no', '0', 'off'):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, (tuple, list)):
            return tuple(int(x) for x in text.split(',') if x.strip())
    except ValueError:
        raise ConfigError(
            "could not parse " + repr(text) + " for config key " + repr(key))
    return text


def read_config_file(path):
    """
    {key: raw string} from a flat key = value file
    """
    entries = {}
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if line == '':
                continue
            if '=' not in line:
                raise ConfigError(
                    str(path) + ":" + str(number) + ": expected key = value")
            key, value = line.split('=', 1)
            entries[key.strip()] = value.strip()
    return entries


def load_config(path=None, overrides=None):
    """
    defaults <- config file <- overrides
    """
    config = RunConfig()
    if path is not None:
        config = config.updated(read_config_file(path))
    if overrides:
        config = config.updated(overrides)
    return config

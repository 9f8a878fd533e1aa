from pathlib import Path
import numpy as np

from AnchorSplat.constants import MeshTopologyError, CameraError, ImageShapeError
from AnchorSplat.mesh import icosphere, cube_mesh, load_mesh, write_obj
from AnchorSplat.camera import fibonacci_cameras, load_cameras, dump_cameras
from AnchorSplat.image_io import write_png, read_png, write_pfm, read_pfm
from AnchorSplat.logging import log_message, log_progress

"""
Synthetic datasets rendered by an exact ray caster of a textured mesh.
Nothing here touches the splat rasterizer, so its images can serve as
ground truth for the fit and the bake.

dataset layout:
    cameras.json            training cameras
    holdout_cameras.json    held out cameras
    images/train_NNN.png    linear colour encoded as sRGB, black background
    images/holdout_NNN.png
    normals/train_NNN.pfm   camera space surface normals, zero off the mesh
    target.obj              ground truth mesh
    template.obj            template mesh the fit starts from
"""

CHECKER_COLORS = np.array([
    [0.85, 0.72, 0.30],
    [0.18, 0.32, 0.70]])

EPS_DETERMINANT = 1e-12
# barycentric slack so rays through a shared edge hit one of its faces
EPS_EDGE = 1e-9
RAY_CHUNK = 512


class RayHits:
    """
    per ray: hit flag, camera depth Z, ray parameter, face id,
    barycentrics (1 - u - v, u, v) and world position
    """

    def __init__(self, hit, depth, distance, face_id, barycentric, position):
        self.hit = hit
        self.depth = depth
        self.distance = distance
        self.face_id = face_id
        self.barycentric = barycentric
        self.position = position


def camera_rays(camera):
    """
    unit world directions through every pixel centre, row major
    """
    x, y = camera.pixel_grid()
    directions = np.stack([x.ravel(), y.ravel(), np.ones(x.size)], axis=1)
    world = camera.camera_to_world_direction(directions)
    return world / np.linalg.norm(world, axis=1, keepdims=True)


def intersect_rays(origin, directions, vertices, faces, chunk=RAY_CHUNK):
    """
    vectorized Moller-Trumbore, nearest hit with t > 0 for every ray
    """
    v0 = vertices[faces[:, 0]]
    edge_1 = vertices[faces[:, 1]] - v0
    edge_2 = vertices[faces[:, 2]] - v0

    count = len(directions)
    best_t = np.full(count, np.inf)
    best_face = np.full(count, -1, dtype=np.int64)
    best_u = np.zeros(count)
    best_v = np.zeros(count)
    tvec = origin[None, :] - v0

    for start in range(0, count, chunk):
        ray = directions[start:start + chunk]
        pvec = np.cross(ray[:, None, :], edge_2[None, :, :])
        det = np.einsum('fk,rfk->rf', edge_1, pvec)
        usable = np.abs(det) > EPS_DETERMINANT
        inv_det = np.where(usable, 1.0 / np.where(usable, det, 1.0), 0.0)
        u = np.einsum('fk,rfk->rf', tvec, pvec) * inv_det
        qvec = np.cross(tvec, edge_1)
        v = np.einsum('rk,fk->rf', ray, qvec) * inv_det
        t = np.einsum('fk,fk->f', edge_2, qvec)[None, :] * inv_det

        hit = (usable & (u >= -EPS_EDGE) & (v >= -EPS_EDGE) &
               (u + v <= 1.0 + EPS_EDGE) & (t > 0.0))
        t = np.where(hit, t, np.inf)
        nearest = np.argmin(t, axis=1)
        rows = np.arange(len(ray))
        nearest_t = t[rows, nearest]
        found = np.isfinite(nearest_t)

        block = slice(start, start + len(ray))
        best_t[block] = nearest_t
        best_face[block] = np.where(found, nearest, -1)
        best_u[block] = np.where(found, u[rows, nearest], 0.0)
        best_v[block] = np.where(found, v[rows, nearest], 0.0)

    return best_t, best_face, best_u, best_v


def raycast(vertices, faces, camera):
    origin = camera.center
    directions = camera_rays(camera)
    t, face_id, u, v = intersect_rays(origin, directions, vertices, faces)
    hit = face_id >= 0
    distance = np.where(hit, t, 0.0)
    position = origin[None, :] + distance[:, None] * directions
    depth = np.where(hit, camera.world_to_camera(position)[:, 2], 0.0)
    barycentric = np.stack([1.0 - u - v, u, v], axis=1)
    return RayHits(hit, depth, distance, face_id, barycentric, position)


def checker_texture(positions, checker_size):
    cells = np.floor(positions / checker_size).astype(np.int64)
    parity = np.sum(cells, axis=-1) % 2
    return CHECKER_COLORS[parity]


def face_color_table(number_of_faces, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 0.9, size=(number_of_faces, 3))


class TexturedMesh:
    """
    closed mesh with an unlit albedo: either a world space checker or
    one colour per face
    """

    def __init__(self, mesh, texture='checker', checker_size=0.25, seed=0):
        if not mesh.is_closed:
            raise MeshTopologyError("synthetic targets must be closed meshes")
        self.mesh = mesh
        self.texture = texture
        self.checker_size = checker_size
        self.face_colors = face_color_table(mesh.number_of_faces, seed)

    def albedo(self, hits):
        if self.texture == 'checker':
            return checker_texture(hits.position, self.checker_size)
        return self.face_colors[np.maximum(hits.face_id, 0)]

    def render(self, camera):
        """
        (color (H,W,3), depth (H,W), normal (H,W,3) camera space, alpha)
        """
        hits = raycast(self.mesh.vertices, self.mesh.faces, camera)
        shape = (camera.height, camera.width)
        color = np.where(hits.hit[:, None], self.albedo(hits), 0.0)

        face_normals = self.mesh.face_normals()
        normal = np.where(
            hits.hit[:, None],
            face_normals[np.maximum(hits.face_id, 0)] @ camera.rotation.T,
            0.0)
        return (color.reshape(shape + (3,)),
                hits.depth.reshape(shape),
                normal.reshape(shape + (3,)),
                hits.hit.reshape(shape).astype(float))


def target_mesh(config):
    if config.target_shape == 'sphere':
        return icosphere(config.target_subdivisions, radius=1.0)
    return cube_mesh(4, half_size=0.75)


def template_mesh(config):
    if config.template_mesh:
        return load_mesh(config.template_mesh)
    if config.template == 'cube':
        return cube_mesh(config.template_resolution, config.template_half_size)
    return icosphere(3, radius=config.template_half_size)


def cmd_synth(config, output_dir=None):
    """
    render the training and held out views of the configured target
    """
    output_dir = Path(output_dir if output_dir is not None else config.dataset_dir)
    (output_dir / 'images').mkdir(parents=True, exist_ok=True)
    (output_dir / 'normals').mkdir(parents=True, exist_ok=True)

    target = TexturedMesh(
        target_mesh(config), config.texture, config.checker_size, config.seed)
    size = config.image_size
    train = fibonacci_cameras(
        config.train_views, config.camera_radius, width=size, height=size,
        fov_degrees=config.fov)
    holdout = fibonacci_cameras(
        config.holdout_views, config.camera_radius, width=size, height=size,
        fov_degrees=config.fov, offset=0.5)

    for prefix, cameras in [('train', train), ('holdout', holdout)]:
        for i, camera in enumerate(cameras):
            color, _, normal, _ = target.render(camera)
            name = prefix + '_%03d' % i
            write_png(output_dir / 'images' / (name + '.png'), color, srgb=True)
            write_pfm(output_dir / 'normals' / (name + '.pfm'), normal)
            log_progress(prefix + " views rendered", i + 1, len(cameras))

    dump_cameras(train, output_dir / 'cameras.json')
    dump_cameras(holdout, output_dir / 'holdout_cameras.json')
    write_obj(output_dir / 'target.obj', target.mesh.vertices, target.mesh.faces)
    template = template_mesh(config)
    write_obj(output_dir / 'template.obj', template.vertices, template.faces)
    log_message("synthetic dataset written to " + output_dir.as_posix())
    return output_dir


class Dataset:

    def __init__(self, cameras, images, holdout_cameras, holdout_images,
                 normals, target, template):
        self.cameras = cameras
        self.images = images
        self.holdout_cameras = holdout_cameras
        self.holdout_images = holdout_images
        self.normals = normals
        self.target = target
        self.template = template


def _load_views(directory, prefix, cameras):
    images = []
    normals = []
    for i, camera in enumerate(cameras):
        name = prefix + '_%03d' % i
        image = read_png(directory / 'images' / (name + '.png'), srgb=True)[..., 0:3]
        if image.shape[0:2] != (camera.height, camera.width):
            raise ImageShapeError(
                name + " is " + str(image.shape[0:2]) + ", camera expects " +
                str((camera.height, camera.width)))
        images.append(image)
        normal_path = directory / 'normals' / (name + '.pfm')
        normals.append(read_pfm(normal_path) if normal_path.exists() else None)
    return images, normals


def load_dataset(directory):
    directory = Path(directory)
    if not (directory / 'cameras.json').exists():
        raise CameraError(str(directory) + " has no cameras.json")
    cameras = load_cameras(directory / 'cameras.json')
    images, normals = _load_views(directory, 'train', cameras)

    holdout_cameras = []
    holdout_images = []
    if (directory / 'holdout_cameras.json').exists():
        holdout_cameras = load_cameras(directory / 'holdout_cameras.json')
        holdout_images, _ = _load_views(directory, 'holdout', holdout_cameras)

    target = None
    if (directory / 'target.obj').exists():
        target = load_mesh(directory / 'target.obj')
    template = None
    if (directory / 'template.obj').exists():
        template = load_mesh(directory / 'template.obj')

    log_message(
        "loaded dataset", directory.as_posix(), ":", len(cameras),
        "training views", len(holdout_cameras), "held out views")
    return Dataset(cameras, images, holdout_cameras, holdout_images,
                   normals, target, template)

from pathlib import Path
import numpy as np
from monty.serialization import dumpfn, loadfn

from AnchorSplat.constants import CheckpointMismatchError, InvalidTransformError
from AnchorSplat.mesh import Mesh, GlobalTransform, load_obj, write_obj
from AnchorSplat.splats import SplatSet, dump_splats, load_splats
from AnchorSplat.rotations import normalize
from AnchorSplat.logging import log_message


MESH_FILE = 'mesh.obj'
SPLAT_FILE = 'splats.txt'
TRANSFORM_FILE = 'transform.json'


class Scene:
    """
    template mesh, global transform and the splats anchored to the mesh.
    A checkpoint is a directory holding mesh.obj (template space
    vertices), splats.txt and transform.json.
    """

    def __init__(self, mesh, transform, splat_set):
        self.mesh = mesh
        self.transform = transform
        self.splat_set = splat_set

    def world_vertices(self):
        return self.transform.apply(self.mesh.vertices)

    def world_mesh(self):
        return self.mesh.with_vertices(self.world_vertices())

    def copy(self):
        return Scene(
            self.mesh.with_vertices(self.mesh.vertices.copy()),
            self.transform.copy(),
            self.splat_set.copy())

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_obj(directory / MESH_FILE, self.mesh.vertices, self.mesh.faces)
        dump_splats(self.splat_set, directory / SPLAT_FILE)
        dumpfn(self.transform, directory / TRANSFORM_FILE, indent=2)

    @classmethod
    def load(cls, directory, require_closed=True):
        directory = Path(directory)
        for name in [MESH_FILE, SPLAT_FILE, TRANSFORM_FILE]:
            if not (directory / name).exists():
                raise CheckpointMismatchError(
                    "checkpoint " + str(directory) + " has no " + name)

        vertices, faces, _, _ = load_obj(directory / MESH_FILE)
        mesh = Mesh(vertices, faces, require_closed=require_closed)
        splat_set = load_splats(
            directory / SPLAT_FILE, number_of_faces=mesh.number_of_faces)

        transform = loadfn(directory / TRANSFORM_FILE)
        if isinstance(transform, dict):
            transform = GlobalTransform(
                transform['scale'],
                transform['rotation'],
                transform['translation'])
        transform.validate()

        log_message(
            "loaded scene", str(directory), ":",
            mesh.number_of_faces, "faces", len(splat_set), "splats")
        return cls(mesh, transform, splat_set)


def apply_template_edit(scene, edited_vertices):
    """
    replace the template vertices. Splats are anchored by barycentric
    coordinates and normal offsets, so they follow the edited surface
    through the global transform unchanged.
    """
    edited_vertices = np.asarray(edited_vertices, dtype=float)
    if edited_vertices.shape != scene.mesh.vertices.shape:
        raise CheckpointMismatchError(
            "edited vertices have shape " + str(edited_vertices.shape) +
            ", template has " + str(scene.mesh.vertices.shape))
    return Scene(
        scene.mesh.with_vertices(edited_vertices),
        scene.transform.copy(),
        scene.splat_set.copy())


def _nlerp(a, b, t):
    if np.ndim(a) == 1:
        if np.dot(a, b) < 0:
            b = -b
    else:
        flip = np.sum(a * b, axis=-1) < 0
        b = np.where(flip[:, None], -b, b)
    return normalize((1.0 - t) * a + t * b)


def interpolate_scenes(a, b, t):
    """
    blend two scenes sharing topology and splat layout (same faces, same
    anchoring face of every splat)
    """
    if not np.array_equal(a.mesh.faces, b.mesh.faces):
        raise CheckpointMismatchError("scenes do not share mesh topology")
    if (len(a.splat_set) != len(b.splat_set) or
            not np.array_equal(a.splat_set.face_id, b.splat_set.face_id)):
        raise CheckpointMismatchError("scenes do not share splat layout")
    if a.splat_set.mode != b.splat_set.mode:
        raise CheckpointMismatchError("scenes use different splat modes")
    if not 0.0 <= t <= 1.0:
        raise InvalidTransformError("interpolation weight must be in [0, 1]")

    s = 1.0 - t
    mesh = a.mesh.with_vertices(s * a.mesh.vertices + t * b.mesh.vertices)
    transform = GlobalTransform(
        np.exp(s * np.log(a.transform.scale) + t * np.log(b.transform.scale)),
        _nlerp(a.transform.rotation, b.transform.rotation, t),
        s * a.transform.translation + t * b.transform.translation)

    sa = a.splat_set
    sb = b.splat_set
    splat_set = SplatSet(
        sa.face_id.copy(),
        s * sa.beta + t * sb.beta,
        s * sa.d + t * sb.d,
        _nlerp(normalize(sa.q_bar), normalize(sb.q_bar), t) if len(sa) > 0 else sa.q_bar,
        s * sa.log_scale + t * sb.log_scale,
        s * sa.opacity_logit + t * sb.opacity_logit,
        s * sa.color + t * sb.color,
        sa.mode)
    return Scene(mesh, transform, splat_set)

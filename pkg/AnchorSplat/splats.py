import numpy as np

from AnchorSplat.constants import (
    EPS_BARYCENTRIC_SUM,
    EPS_SCALE,
    MAX_WALK_STEPS,
    MODE_2D,
    MODE_3D,
    MODES,
    Terminal,
    ConfigError,
    CheckpointMismatchError
)
from AnchorSplat.rotations import (
    normalize,
    normalize_backward,
    cross_backward,
    quaternion_multiply,
    quaternion_multiply_backward,
    quaternion_to_rotation,
    quaternion_to_rotation_backward,
    face_frame_quaternion,
    face_frame_quaternion_backward
)
from AnchorSplat.mesh import GlobalTransform
from AnchorSplat.densify_questions import run_decision_tree
from AnchorSplat.logging import log_message

"""
Splats anchored to mesh faces.

A splat stores (face_id, beta, d, q_bar, s, o, c). Its world position is
p = sum_m beta_m v'_{f,m} + d n_f and its world rotation is
q = q_bar (x) q_f where q_f rotates (0,0,1) onto the face normal n_f.

SplatSet keeps the raw optimizer parameters as a struct of arrays:
scales through exp(log_scale) and opacity through a logistic.
"""

# thickness of 2d splats when the 3d path renders them, relative to
# their mean in plane scale
THIN_FRACTION = 1e-4


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))


class AnchoredSplat:

    def __init__(self, face_id, beta, d, q_bar, s, o, c):
        self.face_id = int(face_id)
        self.beta = np.array(beta, dtype=float)
        self.d = float(d)
        self.q_bar = np.array(q_bar, dtype=float)
        self.s = np.array(s, dtype=float)
        self.o = float(o)
        self.c = np.array(c, dtype=float)

    def __str__(self):
        return ("splat on face " + str(self.face_id) +
                " beta=" + str(self.beta) + " d=" + str(self.d))


class SplatSet:

    def __init__(
            self,
            face_id,
            beta,
            d,
            q_bar,
            log_scale,
            opacity_logit,
            color,
            mode=MODE_2D):

        if mode not in MODES:
            raise ConfigError("unknown splat mode " + str(mode))

        self.face_id = np.array(face_id, dtype=np.int64).reshape(-1)
        count = len(self.face_id)
        self.beta = np.array(beta, dtype=float).reshape(count, 3)
        self.d = np.array(d, dtype=float).reshape(count)
        self.q_bar = np.array(q_bar, dtype=float).reshape(count, 4)
        self.log_scale = np.array(log_scale, dtype=float).reshape(count, 3)
        self.opacity_logit = np.array(opacity_logit, dtype=float).reshape(count)
        self.color = np.array(color, dtype=float).reshape(count, 3)
        self.mode = mode
        self._face_index = None

    @classmethod
    def empty(cls, mode=MODE_2D):
        return cls(
            np.zeros(0), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 4)),
            np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), mode)

    @classmethod
    def from_splats(cls, splats, mode=MODE_2D):
        if len(splats) == 0:
            return cls.empty(mode)
        return cls(
            [s.face_id for s in splats],
            [s.beta for s in splats],
            [s.d for s in splats],
            [s.q_bar for s in splats],
            [np.log(np.maximum(s.s, EPS_SCALE)) for s in splats],
            [logit(s.o) for s in splats],
            [s.c for s in splats],
            mode)

    def __len__(self):
        return len(self.face_id)

    def __getitem__(self, index):
        return AnchoredSplat(
            self.face_id[index],
            self.beta[index],
            self.d[index],
            normalize(self.q_bar[index]),
            self.scale[index],
            self.opacity[index],
            self.color[index])

    @property
    def scale(self):
        return np.maximum(np.exp(self.log_scale), EPS_SCALE)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    def copy(self):
        return self.select(np.arange(len(self)))

    def select(self, indices):
        return SplatSet(
            self.face_id[indices],
            self.beta[indices],
            self.d[indices],
            self.q_bar[indices],
            self.log_scale[indices],
            self.opacity_logit[indices],
            self.color[indices],
            self.mode)

    def append(self, other):
        return SplatSet(
            np.concatenate([self.face_id, other.face_id]),
            np.concatenate([self.beta, other.beta]),
            np.concatenate([self.d, other.d]),
            np.concatenate([self.q_bar, other.q_bar]),
            np.concatenate([self.log_scale, other.log_scale]),
            np.concatenate([self.opacity_logit, other.opacity_logit]),
            np.concatenate([self.color, other.color]),
            self.mode)

    def invalidate_index(self):
        self._face_index = None

    def face_index(self, number_of_faces):
        """
        (offsets, splat_ids): the splats on face f are
        splat_ids[offsets[f]:offsets[f+1]], in increasing id order
        """
        if (self._face_index is None or
            len(self._face_index[0]) != number_of_faces + 1 or
            len(self._face_index[1]) != len(self)):

            splat_ids = np.argsort(self.face_id, kind='stable')
            counts = np.bincount(self.face_id, minlength=number_of_faces)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            self._face_index = (offsets, splat_ids)
        return self._face_index

    def splats_on_faces(self, face_ids, number_of_faces):
        offsets, splat_ids = self.face_index(number_of_faces)
        pieces = [splat_ids[offsets[f]:offsets[f + 1]] for f in face_ids]
        if len(pieces) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(pieces))


class ParameterGradients:
    """
    gradients of a scalar loss with respect to every parameter class.

    position is dL/dp_k through the splat mean only, which is what the
    vertex aggregation consumes. world_vertices and vertices are exact
    reverse mode gradients including the normal and face frame paths.
    """

    def __init__(self, number_of_splats, number_of_vertices):
        self.beta = np.zeros((number_of_splats, 3))
        self.d = np.zeros(number_of_splats)
        self.q_bar = np.zeros((number_of_splats, 4))
        self.log_scale = np.zeros((number_of_splats, 3))
        self.opacity_logit = np.zeros(number_of_splats)
        self.color = np.zeros((number_of_splats, 3))
        self.position = np.zeros((number_of_splats, 3))
        self.world_vertices = np.zeros((number_of_vertices, 3))
        self.vertices = np.zeros((number_of_vertices, 3))
        self.transform_log_scale = np.zeros(3)
        self.transform_rotation = np.zeros(4)
        self.transform_translation = np.zeros(3)
        self.screen = np.zeros(number_of_splats)
        self.visible = np.zeros(number_of_splats, dtype=bool)

    array_names = [
        'beta', 'd', 'q_bar', 'log_scale', 'opacity_logit', 'color',
        'position', 'world_vertices', 'vertices', 'transform_log_scale',
        'transform_rotation', 'transform_translation', 'screen']

    def non_finite_counts(self):
        return {
            name: int(np.count_nonzero(~np.isfinite(getattr(self, name))))
            for name in self.array_names}

    def is_finite(self):
        return all(count == 0 for count in self.non_finite_counts().values())


class SplatGeometry:
    """
    world space quantities of every splat plus the intermediates the
    reverse pass needs
    """

    def __init__(self, splat_set, mesh, transform, thin_fraction=THIN_FRACTION):
        self.splat_set = splat_set
        self.mesh = mesh
        self.transform = transform
        self.thin_fraction = thin_fraction

        self.world_vertices = transform.apply(mesh.vertices)
        self.corners = self.world_vertices[mesh.faces[splat_set.face_id]]
        self.edge_1 = self.corners[:, 1] - self.corners[:, 0]
        self.edge_2 = self.corners[:, 2] - self.corners[:, 0]
        self.cross = np.cross(self.edge_1, self.edge_2)
        self.face_normal = normalize(self.cross)
        self.face_quaternion = face_frame_quaternion(self.face_normal)
        self.local_quaternion = normalize(splat_set.q_bar)
        self.quaternion = quaternion_multiply(
            self.local_quaternion, self.face_quaternion)
        self.rotation = quaternion_to_rotation(self.quaternion)

        self.position = (
            np.einsum('nm,nmk->nk', splat_set.beta, self.corners) +
            splat_set.d[:, None] * self.face_normal)

        self.raw_scale = np.exp(splat_set.log_scale)
        self.scale = np.maximum(self.raw_scale, EPS_SCALE)
        self.opacity = sigmoid(splat_set.opacity_logit)
        self.color = splat_set.color

    def __len__(self):
        return len(self.splat_set)

    @property
    def splat_normal(self):
        return self.rotation[:, :, 2]

    def covariance_scales(self, mode):
        scales = self.scale.copy()
        if mode == MODE_2D:
            scales[:, 2] = (self.thin_fraction * 0.5 *
                            (self.scale[:, 0] + self.scale[:, 1]))
        return scales

    def covariance(self, mode):
        scales = self.covariance_scales(mode)
        scaled = self.rotation * (scales ** 2)[:, None, :]
        return scaled @ np.transpose(self.rotation, (0, 2, 1))

    def covariance_backward(self, grad_covariance, mode):
        """
        returns (grad_rotation, grad_scale)
        """
        scales = self.covariance_scales(mode)
        squared = scales ** 2
        sym = 0.5 * (grad_covariance + np.transpose(grad_covariance, (0, 2, 1)))
        grad_rotation = 2.0 * sym @ (self.rotation * squared[:, None, :])
        grad_squared = np.einsum(
            'nji,njk,nki->ni', self.rotation, sym, self.rotation)
        grad_scale = 2.0 * scales * grad_squared
        if mode == MODE_2D:
            thin = grad_scale[:, 2] * self.thin_fraction * 0.5
            grad_scale[:, 0] += thin
            grad_scale[:, 1] += thin
            grad_scale[:, 2] = 0.0
        return grad_rotation, grad_scale

    def backward(
            self,
            grad_position,
            grad_rotation,
            grad_scale,
            grad_opacity,
            grad_color):
        """
        pull world space gradients back to the raw splat parameters,
        the template vertices and the global transform
        """
        splat_set = self.splat_set
        mesh = self.mesh
        transform = self.transform
        gradients = ParameterGradients(len(splat_set), mesh.number_of_vertices)

        gradients.position = grad_position
        gradients.beta = np.einsum('nmk,nk->nm', self.corners, grad_position)
        gradients.d = np.einsum('nk,nk->n', self.face_normal, grad_position)
        grad_normal = splat_set.d[:, None] * grad_position

        grad_quaternion = quaternion_to_rotation_backward(
            self.quaternion, grad_rotation)
        grad_local, grad_face = quaternion_multiply_backward(
            self.local_quaternion, self.face_quaternion, grad_quaternion)
        gradients.q_bar = normalize_backward(splat_set.q_bar, grad_local)
        grad_normal = grad_normal + face_frame_quaternion_backward(
            self.face_normal, grad_face)

        grad_cross = normalize_backward(self.cross, grad_normal)
        grad_edge_1, grad_edge_2 = cross_backward(
            self.edge_1, self.edge_2, grad_cross)

        grad_corners = splat_set.beta[:, :, None] * grad_position[:, None, :]
        grad_corners[:, 0] -= grad_edge_1 + grad_edge_2
        grad_corners[:, 1] += grad_edge_1
        grad_corners[:, 2] += grad_edge_2

        np.add.at(
            gradients.world_vertices,
            mesh.faces[splat_set.face_id],
            grad_corners)

        gradients.log_scale = (
            grad_scale * self.raw_scale * (self.raw_scale > EPS_SCALE))
        gradients.opacity_logit = grad_opacity * self.opacity * (1.0 - self.opacity)
        gradients.color = grad_color

        transform_backward(
            gradients, mesh.vertices, transform)
        return gradients


def transform_backward(gradients, template_vertices, transform):
    """
    fills the template vertex and transform gradients from
    gradients.world_vertices
    """
    grad_world = gradients.world_vertices
    rotation = transform.rotation_matrix()
    scale = transform.scale
    matrix = scale[:, None] * rotation

    gradients.vertices = grad_world @ matrix
    gradients.transform_translation = grad_world.sum(axis=0)
    grad_matrix = grad_world.T @ template_vertices
    grad_scale = np.sum(grad_matrix * rotation, axis=1)
    gradients.transform_log_scale = grad_scale * scale
    grad_rotation = scale[:, None] * grad_matrix
    gradients.transform_rotation = normalize_backward(
        transform.rotation,
        quaternion_to_rotation_backward(transform.rotation, grad_rotation))


def single_splat_set(splat):
    return SplatSet.from_splats([splat])


def world_position(splat, mesh, transform=None):
    if transform is None:
        transform = GlobalTransform()
    world_vertices = transform.apply(mesh.vertices)
    corners = world_vertices[mesh.faces[splat.face_id]]
    normal = mesh.face_normal(splat.face_id, world_vertices)
    return splat.beta @ corners + splat.d * normal


def world_rotation(splat, mesh, transform=None):
    if transform is None:
        transform = GlobalTransform()
    world_vertices = transform.apply(mesh.vertices)
    normal = mesh.face_normal(splat.face_id, world_vertices)
    return quaternion_multiply(
        normalize(splat.q_bar), face_frame_quaternion(normal))


def world_covariance(splat, mesh, mode, transform=None, thickness=None):
    """
    R(q) diag(s^2) R(q)^T. In 2d mode the third scale is replaced by
    the thickness (THIN_FRACTION of the mean in plane scale unless
    given).
    """
    rotation = quaternion_to_rotation(world_rotation(splat, mesh, transform))
    scales = np.maximum(np.array(splat.s, dtype=float), EPS_SCALE)
    if mode == MODE_2D:
        if thickness is None:
            thickness = THIN_FRACTION * 0.5 * (scales[0] + scales[1])
        scales[2] = thickness
    return (rotation * scales ** 2) @ rotation.T


def reanchor_walk_batch(face_id, beta, mesh, max_walk_steps=MAX_WALK_STEPS):
    """
    walk on triangles for many splats at once.

    one negative coordinate: clamp it, renormalize and reassign the
    splat to the face across the edge opposite the clamped vertex.

    two negative coordinates: cross the edge opposite the most negative
    one (lowest local index on ties), unfolding the pair of triangles
    into a parallelogram, and keep walking.

    At a boundary the coordinates are clamped in place. Splats still
    outside after max_walk_steps are clamped in place and flagged.

    returns (face_id, beta, overflow)
    """
    face_id = np.array(face_id, dtype=np.int64, copy=True).reshape(-1)
    beta = np.array(beta, dtype=float, copy=True).reshape(-1, 3)
    overflow = np.zeros(len(face_id), dtype=bool)

    total = beta.sum(axis=1)
    degenerate = ~np.isfinite(total) | (np.abs(total) < EPS_BARYCENTRIC_SUM)
    beta[degenerate] = 1.0 / 3.0
    off = ~degenerate & (np.abs(total - 1.0) > 1e-12)
    beta[off] = beta[off] / total[off, None]

    for _ in range(max_walk_steps):
        pending = np.flatnonzero(np.any(beta < 0, axis=1))
        if len(pending) == 0:
            break

        b = beta[pending]
        f = face_id[pending]
        rows = np.arange(len(pending))

        edge = np.argmin(b, axis=1)
        negative_count = np.count_nonzero(b < 0, axis=1)
        neighbor = mesh.edge_opposite[f, edge]
        neighbor_local = mesh.edge_opposite_local[f, edge]

        beta_m = b[rows, edge]
        beta_a = b[rows, (edge + 1) % 3]
        beta_b = b[rows, (edge + 2) % 3]

        single = negative_count == 1
        kept = beta_a + beta_b
        new_a = np.where(single, beta_a / np.where(single, kept, 1.0),
                         beta_a + beta_m)
        new_b = np.where(single, beta_b / np.where(single, kept, 1.0),
                         beta_b + beta_m)
        new_opposite = np.where(single, 0.0, -beta_m)

        inner = neighbor >= 0
        moved = pending[inner]
        local = neighbor_local[inner]
        moved_beta = np.zeros((len(moved), 3))
        moved_rows = np.arange(len(moved))
        moved_beta[moved_rows, local] = new_opposite[inner]
        moved_beta[moved_rows, (local + 1) % 3] = new_b[inner]
        moved_beta[moved_rows, (local + 2) % 3] = new_a[inner]
        beta[moved] = moved_beta
        face_id[moved] = neighbor[inner]

        stuck = pending[~inner]
        if len(stuck) > 0:
            clamped = np.maximum(beta[stuck], 0.0)
            beta[stuck] = clamped / clamped.sum(axis=1, keepdims=True)

    pending = np.flatnonzero(np.any(beta < 0, axis=1))
    if len(pending) > 0:
        overflow[pending] = True
        clamped = np.maximum(beta[pending], 0.0)
        beta[pending] = clamped / clamped.sum(axis=1, keepdims=True)

    return face_id, beta, overflow


def reanchor_walk(splat, mesh, max_walk_steps=MAX_WALK_STEPS):
    """
    single splat version of reanchor_walk_batch. returns
    (updated splat, overflow flag)
    """
    face_id, beta, overflow = reanchor_walk_batch(
        [splat.face_id], [splat.beta], mesh, max_walk_steps)
    updated = AnchoredSplat(
        face_id[0], beta[0], splat.d, splat.q_bar, splat.s, splat.o, splat.c)
    return updated, bool(overflow[0])


def reanchor_splat_set(splat_set, mesh, max_walk_steps=MAX_WALK_STEPS):
    face_id, beta, overflow = reanchor_walk_batch(
        splat_set.face_id, splat_set.beta, mesh, max_walk_steps)
    splat_set.face_id = face_id
    splat_set.beta = beta
    splat_set.invalidate_index()
    return overflow


def stratified_barycentrics(count):
    """
    centroids of the sub triangles of an m x m subdivision of the
    reference triangle, m = ceil(sqrt(count)), upward sub triangles
    first
    """
    m = int(np.ceil(np.sqrt(count)))
    samples = []
    for i in range(m):
        for j in range(m - i):
            samples.append(((i + 1.0 / 3.0) / m, (j + 1.0 / 3.0) / m))
    for i in range(m - 1):
        for j in range(m - 1 - i):
            samples.append(((i + 2.0 / 3.0) / m, (j + 2.0 / 3.0) / m))

    st = np.array(samples[:count])
    return np.stack([1.0 - st[:, 0] - st[:, 1], st[:, 0], st[:, 1]], axis=1)


def seed_splats(
        mesh,
        per_face_count,
        mode=MODE_2D,
        transform=None,
        scale_fraction=0.5,
        thickness_fraction=0.1,
        opacity=0.5,
        color=0.5):

    if per_face_count < 1:
        raise ConfigError("per_face_count must be at least 1")
    if transform is None:
        transform = GlobalTransform()

    number_of_faces = mesh.number_of_faces
    barycentrics = stratified_barycentrics(per_face_count)
    mean_edge = mesh.mean_edge_length(transform.apply(mesh.vertices))
    scale = scale_fraction * mean_edge / np.ceil(np.sqrt(per_face_count))
    scales = np.array([scale, scale, thickness_fraction * scale])

    count = number_of_faces * per_face_count
    log_message("seeding", count, "splats at scale", scale)
    q_bar = np.zeros((count, 4))
    q_bar[:, 0] = 1.0
    return SplatSet(
        np.repeat(np.arange(number_of_faces), per_face_count),
        np.tile(barycentrics, (number_of_faces, 1)),
        np.zeros(count),
        q_bar,
        np.tile(np.log(scales), (count, 1)),
        np.full(count, logit(opacity)),
        np.full((count, 3), color),
        mode)


class GradientAccumulator:
    """
    running sums of per splat screen space gradient norms between
    densification passes
    """

    def __init__(self, number_of_splats):
        self.total = np.zeros(number_of_splats)
        self.count = np.zeros(number_of_splats, dtype=np.int64)

    def add(self, screen_gradient, visible):
        self.total[visible] += screen_gradient[visible]
        self.count[visible] += 1

    def mean(self):
        return self.total / np.maximum(self.count, 1)


def barycentric_offset(edge_1, edge_2, offset):
    """
    least squares barycentric change whose displacement in the face
    plane best matches offset
    """
    g11 = np.einsum('nk,nk->n', edge_1, edge_1)
    g12 = np.einsum('nk,nk->n', edge_1, edge_2)
    g22 = np.einsum('nk,nk->n', edge_2, edge_2)
    r1 = np.einsum('nk,nk->n', edge_1, offset)
    r2 = np.einsum('nk,nk->n', edge_2, offset)
    det = g11 * g22 - g12 * g12
    a = (g22 * r1 - g12 * r2) / det
    b = (g11 * r2 - g12 * r1) / det
    return np.stack([-a - b, a, b], axis=1)


def densify_and_prune(
        splat_set,
        gradient_stats,
        iteration,
        mesh,
        transform,
        decision_tree,
        rng,
        opacity_reset_interval=600,
        opacity_reset=0.1,
        max_splats=None,
        logging_decision_tree=Terminal.DISCARD,
        max_walk_steps=MAX_WALK_STEPS):
    """
    returns (new splat set, parents, fresh, logged)

    parents[i] is the index in splat_set new splat i came from and
    fresh[i] is True for clones and split children, whose optimizer
    moments start at zero. logged holds (index, splat, decision pathway)
    for every splat the logging tree sends to KEEP.
    """
    geometry = SplatGeometry(splat_set, mesh, transform)
    mean_gradient = gradient_stats.mean()
    opacity = geometry.opacity
    max_scale = geometry.scale[:, :2].max(axis=1)
    params = {'iteration': iteration}

    survivors = []
    clones = []
    splits = []
    logged = []
    current_count = len(splat_set)

    for index in range(len(splat_set)):
        splat = {
            'index': index,
            'opacity': opacity[index],
            'gradient': mean_gradient[index],
            'max_scale': max_scale[index],
            'visible_count': gradient_stats.count[index]
        }

        decision_pathway = []
        decision = run_decision_tree(
            splat, params, decision_tree, decision_pathway)

        if (decision in (Terminal.CLONE, Terminal.SPLIT) and
            max_splats is not None and current_count + 1 > max_splats):
            decision = Terminal.KEEP
            decision_pathway.append("max_splats reached, kept")

        if decision == Terminal.KEEP:
            survivors.append(index)
        elif decision == Terminal.CLONE:
            survivors.append(index)
            clones.append(index)
            current_count += 1
        elif decision == Terminal.SPLIT:
            splits.append(index)
            current_count += 1
        else:
            current_count -= 1

        if run_decision_tree(
                splat, params, logging_decision_tree) == Terminal.KEEP:
            logged.append((index, splat, decision_pathway))

    survivors = np.array(survivors, dtype=np.int64)
    clones = np.array(clones, dtype=np.int64)
    splits = np.array(splits, dtype=np.int64)

    kept_set = splat_set.select(survivors)

    clone_set = splat_set.select(clones)
    jitter = 1e-3 * rng.standard_normal((len(clones), 3))
    clone_set.beta = clone_set.beta + jitter - jitter.mean(axis=1, keepdims=True)

    children = np.repeat(splits, 2)
    child_set = splat_set.select(children)
    if len(children) > 0:
        samples = rng.standard_normal((len(children), 2))
        rotation = geometry.rotation[children]
        scale = geometry.scale[children]
        offset = (rotation[:, :, 0] * (scale[:, 0] * samples[:, 0])[:, None] +
                  rotation[:, :, 1] * (scale[:, 1] * samples[:, 1])[:, None])
        child_set.beta = child_set.beta + barycentric_offset(
            geometry.edge_1[children], geometry.edge_2[children], offset)
        child_set.log_scale = child_set.log_scale - np.log(2.0)

    new_set = kept_set.append(clone_set).append(child_set)
    reanchor_splat_set(new_set, mesh, max_walk_steps)

    parents = np.concatenate([survivors, clones, children])
    fresh = np.concatenate([
        np.zeros(len(survivors), dtype=bool),
        np.ones(len(clones) + len(children), dtype=bool)])

    if opacity_reset_interval and iteration > 0 and (
            iteration % opacity_reset_interval == 0):
        reset_opacity(new_set, opacity_reset)

    log_message(
        "densify at iteration", iteration, ":",
        len(splat_set) - len(survivors) - len(splits), "pruned",
        len(clones), "cloned",
        len(splits), "split",
        len(new_set), "splats")

    return new_set, parents, fresh, logged


def reset_opacity(splat_set, opacity_reset):
    splat_set.opacity_logit = np.full(len(splat_set), logit(opacity_reset))


def dump_splats(splat_set, path):
    with open(path, 'w') as f:
        f.write(splat_set.mode + ' ' + str(len(splat_set)) + '\n')
        scale = splat_set.scale
        opacity = splat_set.opacity
        q_bar = normalize(splat_set.q_bar) if len(splat_set) > 0 else splat_set.q_bar
        for i in range(len(splat_set)):
            values = ([splat_set.beta[i, m] for m in range(3)] +
                      [splat_set.d[i]] +
                      [q_bar[i, m] for m in range(4)] +
                      [scale[i, m] for m in range(3)] +
                      [opacity[i]] +
                      [splat_set.color[i, m] for m in range(3)])
            f.write(str(int(splat_set.face_id[i])) + ' ' +
                    ' '.join(['%.17g' % v for v in values]) + '\n')


def load_splats(path, number_of_faces=None):
    with open(path, 'r') as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] not in MODES:
            raise CheckpointMismatchError(
                "bad splat checkpoint header in " + str(path))
        mode = header[0]
        count = int(header[1])
        rows = [line.split() for line in f if line.strip()]

    if len(rows) != count:
        raise CheckpointMismatchError(
            str(path) + " declares " + str(count) +
            " splats but holds " + str(len(rows)))

    if count == 0:
        return SplatSet.empty(mode)

    face_id = np.array([int(row[0]) for row in rows], dtype=np.int64)
    values = np.array([[float(x) for x in row[1:]] for row in rows])
    if values.shape[1] != 15:
        raise CheckpointMismatchError(
            "expected 16 fields per splat in " + str(path))

    if number_of_faces is not None and (
            face_id.min() < 0 or face_id.max() >= number_of_faces):
        raise CheckpointMismatchError(
            "splat checkpoint references face " + str(int(face_id.max())) +
            " but the mesh has " + str(number_of_faces) + " faces")

    return SplatSet(
        face_id,
        values[:, 0:3],
        values[:, 3],
        values[:, 4:8],
        np.log(np.maximum(values[:, 8:11], EPS_SCALE)),
        logit(values[:, 11]),
        values[:, 12:15],
        mode)

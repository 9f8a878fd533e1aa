import numpy as np

from AnchorSplat.constants import (
    Z_NEAR,
    T_MIN,
    ALPHA_MAX,
    ENERGY_CUTOFF,
    LOCAL_CUTOFF,
    EPS_PARALLEL,
    EPS_ALPHA,
    BLUR,
    TILE_SIZE,
    MODE_2D,
    MODE_3D
)
from AnchorSplat.splats import SplatGeometry

"""
Desk scale software rasterizer for anchored splats.

Every splat is tested against the pixels of the 16x16 tiles its 3 sigma
bounding box touches. A (splat, pixel) pair contributes when

        3d: camera Z > z_near and E <= 4.5
        2d: |n.w|/|w| >= eps_parallel, ray depth > z_near and
            a^2 + b^2 <= 9 in splat local units

Contributors are sorted per pixel by depth (ties by splat id) and
composited front to back with alpha = min(o exp(-E), 0.999) until the
transmittance in front of a contributor drops below T_min. Boxes and
tiles only prune pairs which fail the predicate anyway, so the result
equals brute_force_render exactly.

All image plane math happens on the normalized plane x = (j + 0.5 - cx)/fx,
y = (i + 0.5 - cy)/fy.
"""


def invert_2x2(matrix):
    a = matrix[..., 0, 0]
    b = matrix[..., 0, 1]
    c = matrix[..., 1, 0]
    d = matrix[..., 1, 1]
    det = a * d - b * c
    inverse = np.empty(matrix.shape)
    inverse[..., 0, 0] = d / det
    inverse[..., 0, 1] = -b / det
    inverse[..., 1, 0] = -c / det
    inverse[..., 1, 1] = a / det
    return inverse


def projection_jacobian(camera_position):
    x = camera_position[..., 0]
    y = camera_position[..., 1]
    z = camera_position[..., 2]
    jacobian = np.zeros(camera_position.shape[:-1] + (2, 3))
    jacobian[..., 0, 0] = 1.0 / z
    jacobian[..., 0, 2] = -(x / z) / z
    jacobian[..., 1, 1] = 1.0 / z
    jacobian[..., 1, 2] = -(y / z) / z
    return jacobian


class ProjectedSplat:
    """
    struct of arrays. camera_position p = (X,Y,Z), mu = (u,v) = (X/Z,Y/Z),
    depth d = Z, jacobian J, camera_covariance, image_covariance
    Lambda = J Sigma J^T + blur, its inverse and the inclusive pixel
    bounding box. valid is False for culled splats.
    """

    def __init__(self, camera_position, camera_covariance, camera, blur, z_near):
        self.camera_position = camera_position
        self.camera_covariance = camera_covariance
        self.depth = camera_position[:, 2]
        self.valid = self.depth > z_near

        with np.errstate(divide='ignore', invalid='ignore'):
            self.u = camera_position[:, 0] / self.depth
            self.v = camera_position[:, 1] / self.depth
            self.jacobian = projection_jacobian(camera_position)
            self.image_covariance = (
                self.jacobian @ camera_covariance @
                np.transpose(self.jacobian, (0, 2, 1)) +
                camera.blur_matrix(blur))
            self.inverse_covariance = invert_2x2(self.image_covariance)

            radius_x = 3.0 * np.sqrt(self.image_covariance[:, 0, 0])
            radius_y = 3.0 * np.sqrt(self.image_covariance[:, 1, 1])
            center_x = camera.fx * self.u + camera.cx
            center_y = camera.fy * self.v + camera.cy
            half_x = camera.fx * radius_x
            half_y = camera.fy * radius_y

        self.valid &= np.isfinite(center_x) & np.isfinite(center_y)
        self.valid &= np.isfinite(half_x) & np.isfinite(half_y)
        self.box = pixel_box(
            center_x - half_x, center_x + half_x,
            center_y - half_y, center_y + half_y,
            camera, self.valid)
        self.valid &= (self.box[:, 0] <= self.box[:, 1]) & (
            self.box[:, 2] <= self.box[:, 3])


def pixel_box(x_low, x_high, y_low, y_high, camera, valid):
    """
    inclusive pixel index ranges whose centres lie in the given
    continuous ranges, padded by one pixel and clipped to the image
    """
    width = camera.width
    height = camera.height
    x_low = np.where(valid, x_low, 0.0)
    x_high = np.where(valid, x_high, -1.0)
    y_low = np.where(valid, y_low, 0.0)
    y_high = np.where(valid, y_high, -1.0)

    x0 = np.ceil(np.clip(x_low - 0.5, -2.0, width + 1.0)) - 1
    x1 = np.floor(np.clip(x_high - 0.5, -2.0, width + 1.0)) + 1
    y0 = np.ceil(np.clip(y_low - 0.5, -2.0, height + 1.0)) - 1
    y1 = np.floor(np.clip(y_high - 0.5, -2.0, height + 1.0)) + 1

    box = np.stack([
        np.clip(x0, 0, width - 1),
        np.where(x1 < 0, -1, np.clip(x1, 0, width - 1)),
        np.clip(y0, 0, height - 1),
        np.where(y1 < 0, -1, np.clip(y1, 0, height - 1))
    ], axis=1).astype(np.int64)
    box[~valid] = [0, -1, 0, -1]
    box[x0 > width - 1] = [0, -1, 0, -1]
    box[y0 > height - 1] = [0, -1, 0, -1]
    return box


def project_splat(mean, covariance, camera, blur=BLUR, z_near=Z_NEAR):
    """
    project world space means (N,3) and covariances (N,3,3). A single
    mean (3,) and covariance (3,3) are accepted too.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    covariance = np.asarray(covariance, dtype=float).reshape(-1, 3, 3)
    camera_position = camera.world_to_camera(mean)
    rotation = camera.rotation
    camera_covariance = rotation @ covariance @ rotation.T
    return ProjectedSplat(camera_position, camera_covariance, camera, blur, z_near)


def gaussian_energy(projected, x, y, index=None):
    """
    E = 1/2 r^T Lambda^-1 r with r = mu - x on the normalized plane
    """
    if index is None:
        u = projected.u
        v = projected.v
        inverse = projected.inverse_covariance
    else:
        u = projected.u[index]
        v = projected.v[index]
        inverse = projected.inverse_covariance[index]

    r0 = u - x
    r1 = v - y
    return 0.5 * (inverse[..., 0, 0] * r0 * r0 +
                  (inverse[..., 0, 1] + inverse[..., 1, 0]) * r0 * r1 +
                  inverse[..., 1, 1] * r1 * r1)


def energy_uvd_gradient(camera_covariance, camera_position, pixel, blur_matrix):
    """
    derivatives of E with respect to (u, v, d) for any leading shape.

        g = Lambda^-1 r, h = Sigma J^T g
        dE/du = g1 (1 + h3/d)
        dE/dv = g2 (1 + h3/d)
        dE/dd = h^T J^T g / d      (= 2E/d without blur)

    returns (E, dE/d(u,v,d), g, h, J^T g)
    """
    depth = camera_position[..., 2]
    u = camera_position[..., 0] / depth
    v = camera_position[..., 1] / depth
    jacobian = projection_jacobian(camera_position)
    image_covariance = (
        jacobian @ camera_covariance @ np.swapaxes(jacobian, -1, -2) +
        blur_matrix)
    inverse = invert_2x2(image_covariance)

    r = np.stack([u - pixel[..., 0], v - pixel[..., 1]], axis=-1)
    g = np.einsum('...ij,...j->...i', inverse, r)
    energy = 0.5 * np.sum(r * g, axis=-1)
    jtg = np.einsum('...ji,...j->...i', jacobian, g)
    h = np.einsum('...ij,...j->...i', camera_covariance, jtg)

    stretch = 1.0 + h[..., 2] / depth
    d_uvd = np.stack([
        g[..., 0] * stretch,
        g[..., 1] * stretch,
        np.sum(h * jtg, axis=-1) / depth
    ], axis=-1)
    return energy, d_uvd, g, h, jtg


def uvd_to_position_gradient(camera_position, d_uvd):
    """
    applies T^T where T = d(u,v,d)/d(X,Y,Z)
    """
    depth = camera_position[..., 2]
    u = camera_position[..., 0] / depth
    v = camera_position[..., 1] / depth
    return np.stack([
        d_uvd[..., 0] / depth,
        d_uvd[..., 1] / depth,
        d_uvd[..., 2] - (u * d_uvd[..., 0] + v * d_uvd[..., 1]) / depth
    ], axis=-1)


def energy_position_gradient(camera_covariance, camera_position, pixel, blur_matrix):
    """
    returns (E, dE/dp, dE/dSigma) in camera space
    """
    energy, d_uvd, g, h, jtg = energy_uvd_gradient(
        camera_covariance, camera_position, pixel, blur_matrix)
    d_position = uvd_to_position_gradient(camera_position, d_uvd)
    d_covariance = -0.5 * jtg[..., :, None] * jtg[..., None, :]
    return energy, d_position, d_covariance


def _expand(counts):
    """
    (owner, local): owner[k] is the index of the range element k
    belongs to and local[k] its position inside that range
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total) - starts[owner]
    return owner, local


def candidate_pairs(box, valid, camera):
    """
    (splat, pixel) pairs from tile binning of the inclusive pixel boxes
    """
    splats = np.flatnonzero(valid)
    box = box[splats]
    tile_x0 = box[:, 0] // TILE_SIZE
    tile_x1 = box[:, 1] // TILE_SIZE
    tile_y0 = box[:, 2] // TILE_SIZE
    tile_y1 = box[:, 3] // TILE_SIZE
    tiles_x = tile_x1 - tile_x0 + 1
    tiles_y = tile_y1 - tile_y0 + 1

    owner, local = _expand(tiles_x * tiles_y)
    tile_x = tile_x0[owner] + local % tiles_x[owner]
    tile_y = tile_y0[owner] + local // tiles_x[owner]

    x0 = np.maximum(tile_x * TILE_SIZE, box[owner, 0])
    x1 = np.minimum(tile_x * TILE_SIZE + TILE_SIZE - 1, box[owner, 1])
    y0 = np.maximum(tile_y * TILE_SIZE, box[owner, 2])
    y1 = np.minimum(tile_y * TILE_SIZE + TILE_SIZE - 1, box[owner, 3])
    span_x = np.maximum(x1 - x0 + 1, 0)
    span_y = np.maximum(y1 - y0 + 1, 0)

    pair_owner, pair_local = _expand(span_x * span_y)
    px = x0[pair_owner] + pair_local % span_x[pair_owner]
    py = y0[pair_owner] + pair_local // span_x[pair_owner]

    return splats[owner[pair_owner]], py * camera.width + px


def all_pairs(number_of_splats, camera):
    splat = np.repeat(np.arange(number_of_splats), camera.number_of_pixels)
    pixel = np.tile(np.arange(camera.number_of_pixels), number_of_splats)
    return splat, pixel


class SplatPlanes:
    """
    camera space frames of flat splats: centre p, tangents t_u, t_v,
    normal n and in plane scales
    """

    def __init__(self, geometry, camera, z_near):
        rotation = camera.rotation @ geometry.rotation
        self.camera_position = camera.world_to_camera(geometry.position)
        self.tangent_u = rotation[:, :, 0]
        self.tangent_v = rotation[:, :, 1]
        self.normal = rotation[:, :, 2]
        self.scale_u = geometry.scale[:, 0]
        self.scale_v = geometry.scale[:, 1]
        p = self.camera_position
        n = self.normal
        self.offset = n[:, 0] * p[:, 0] + n[:, 1] * p[:, 1] + n[:, 2] * p[:, 2]

        corners = []
        for su in (-3.0, 3.0):
            for sv in (-3.0, 3.0):
                corners.append(
                    p +
                    (su * self.scale_u)[:, None] * self.tangent_u +
                    (sv * self.scale_v)[:, None] * self.tangent_v)
        corners = np.stack(corners, axis=1)
        corner_z = corners[:, :, 2]
        in_front = np.all(corner_z > z_near, axis=1)
        behind = np.all(corner_z <= z_near, axis=1)

        with np.errstate(divide='ignore', invalid='ignore'):
            px = camera.fx * corners[:, :, 0] / corner_z + camera.cx
            py = camera.fy * corners[:, :, 1] / corner_z + camera.cy
        px = np.where(in_front[:, None], px, 0.0)
        py = np.where(in_front[:, None], py, 0.0)

        x_low = np.where(in_front, px.min(axis=1), 0.0)
        x_high = np.where(in_front, px.max(axis=1), float(camera.width))
        y_low = np.where(in_front, py.min(axis=1), 0.0)
        y_high = np.where(in_front, py.max(axis=1), float(camera.height))

        self.valid = ~behind & np.isfinite(self.offset)
        self.box = pixel_box(x_low, x_high, y_low, y_high, camera, self.valid)
        self.valid &= (self.box[:, 0] <= self.box[:, 1]) & (
            self.box[:, 2] <= self.box[:, 3])


def ray_splat_intersection(planes, splat, x, y):
    """
    returns (n.w, lambda, D = lambda w - p, a, b) for rays
    w = (x, y, 1) against the planes of the given splats
    """
    n = planes.normal[splat]
    p = planes.camera_position[splat]
    tu = planes.tangent_u[splat]
    tv = planes.tangent_v[splat]

    with np.errstate(divide='ignore', invalid='ignore'):
        n_dot_w = n[:, 0] * x + n[:, 1] * y + n[:, 2]
        lam = planes.offset[splat] / n_dot_w
        d0 = lam * x - p[:, 0]
        d1 = lam * y - p[:, 1]
        d2 = lam - p[:, 2]
        a = (d0 * tu[:, 0] + d1 * tu[:, 1] + d2 * tu[:, 2]) / planes.scale_u[splat]
        b = (d0 * tv[:, 0] + d1 * tv[:, 1] + d2 * tv[:, 2]) / planes.scale_v[splat]
    return n_dot_w, lam, np.stack([d0, d1, d2], axis=1), a, b


def contributors_3d(projected, opacity, splat, pixel, camera):
    x, y = camera.pixel_coordinates(pixel)
    energy = gaussian_energy(projected, x, y, splat)
    keep = energy <= ENERGY_CUTOFF
    alpha_raw = opacity[splat] * np.exp(-energy)
    alpha = np.minimum(alpha_raw, ALPHA_MAX)
    depth = projected.depth[splat]
    return keep, alpha_raw, alpha, depth


def contributors_2d(planes, opacity, splat, pixel, camera, z_near):
    x, y = camera.pixel_coordinates(pixel)
    n_dot_w, lam, _, a, b = ray_splat_intersection(planes, splat, x, y)
    ray_length = np.sqrt(x * x + y * y + 1.0)
    radius = a * a + b * b
    with np.errstate(invalid='ignore'):
        keep = ((np.abs(n_dot_w) / ray_length >= EPS_PARALLEL) &
                (lam > z_near) &
                (radius <= LOCAL_CUTOFF))
    energy = 0.5 * np.where(keep, radius, 0.0)
    alpha_raw = opacity[splat] * np.exp(-energy)
    alpha = np.minimum(alpha_raw, ALPHA_MAX)
    depth = np.where(keep, lam, 0.0)
    return keep, alpha_raw, alpha, depth


class RenderOutput:
    """
    color (H,W,3) linear, depth (H,W) alpha weighted expected depth,
    normal (H,W,3) alpha weighted camera space splat normals (2d only),
    alpha (H,W) accumulated opacity, plus the tape for the reverse pass
    """

    def __init__(self, color, depth, normal, alpha, tape):
        self.color = color
        self.depth = depth
        self.normal = normal
        self.alpha = alpha
        self.tape = tape


class RenderTape:
    """
    contributors sorted by (pixel, depth, splat id). row is the index of
    the pixel in `pixels`, rank the position of the contributor along
    its pixel's ray.
    """
    pass


class ImageGradients:

    def __init__(
            self,
            color=None,
            depth=None,
            normal=None,
            alpha=None,
            contributor_weight=None,
            contributor_depth=None):
        self.color = color
        self.depth = depth
        self.normal = normal
        self.alpha = alpha
        self.contributor_weight = contributor_weight
        self.contributor_depth = contributor_depth

    @classmethod
    def zeros(cls, height, width):
        return cls(
            np.zeros((height, width, 3)),
            np.zeros((height, width)),
            np.zeros((height, width, 3)),
            np.zeros((height, width)))


def composite(splat, pixel, depth, alpha, features, t_min):
    """
    front to back compositing of contributors already filtered by the
    predicate. returns a tape with sorted contributors and the per pixel
    accumulated features
    """
    order = np.lexsort((splat, depth, pixel))
    splat = splat[order]
    pixel = pixel[order]
    depth = depth[order]
    alpha = alpha[order]
    features = features[order]

    tape = RenderTape()
    tape.order = order
    tape.splat = splat
    tape.pixel = pixel
    tape.depth = depth
    tape.alpha = alpha

    if len(splat) == 0:
        tape.pixels = np.zeros(0, dtype=np.int64)
        tape.row = np.zeros(0, dtype=np.int64)
        tape.rank = np.zeros(0, dtype=np.int64)
        tape.number_of_rows = 0
        tape.depth_complexity = 0
        tape.transmittance = np.zeros(0)
        tape.alive = np.zeros(0, dtype=bool)
        tape.weight = np.zeros(0)
        tape.accumulated = np.zeros((0, features.shape[1]))
        tape.accumulated_alpha = np.zeros(0)
        return tape

    pixels, row, counts = np.unique(
        pixel, return_inverse=True, return_counts=True)
    row = row.ravel()
    starts = np.cumsum(counts) - counts
    rank = np.arange(len(splat)) - starts[row]
    number_of_rows = len(pixels)
    depth_complexity = int(counts.max())

    dense_alpha = np.zeros((number_of_rows, depth_complexity))
    dense_valid = np.zeros((number_of_rows, depth_complexity), dtype=bool)
    dense_features = np.zeros(
        (number_of_rows, depth_complexity, features.shape[1]))
    dense_alpha[row, rank] = alpha
    dense_valid[row, rank] = True
    dense_features[row, rank] = features

    dense_transmittance = np.zeros((number_of_rows, depth_complexity))
    dense_alive = np.zeros((number_of_rows, depth_complexity), dtype=bool)
    transmittance = np.ones(number_of_rows)
    accumulated = np.zeros((number_of_rows, features.shape[1]))
    accumulated_alpha = np.zeros(number_of_rows)

    for k in range(depth_complexity):
        a = dense_alpha[:, k]
        alive = dense_valid[:, k] & (transmittance >= t_min)
        dense_transmittance[:, k] = transmittance
        dense_alive[:, k] = alive
        w = np.where(alive, a * transmittance, 0.0)
        accumulated = accumulated + w[:, None] * dense_features[:, k]
        accumulated_alpha = accumulated_alpha + w
        transmittance = np.where(alive, transmittance * (1.0 - a), transmittance)

    tape.pixels = pixels
    tape.row = row
    tape.rank = rank
    tape.number_of_rows = number_of_rows
    tape.depth_complexity = depth_complexity
    tape.transmittance = dense_transmittance[row, rank]
    tape.alive = dense_alive[row, rank]
    tape.weight = np.where(tape.alive, alpha * tape.transmittance, 0.0)
    tape.accumulated = accumulated
    tape.accumulated_alpha = accumulated_alpha
    return tape


def _images_from_tape(tape, camera, mode):
    number_of_pixels = camera.number_of_pixels
    color = np.zeros((number_of_pixels, 3))
    depth = np.zeros(number_of_pixels)
    alpha = np.zeros(number_of_pixels)

    color[tape.pixels] = tape.accumulated[:, 0:3]
    alpha[tape.pixels] = tape.accumulated_alpha
    depth[tape.pixels] = tape.accumulated[:, 3] / np.maximum(
        tape.accumulated_alpha, EPS_ALPHA)

    shape = (camera.height, camera.width)
    normal = None
    if mode == MODE_2D:
        normal = np.zeros((number_of_pixels, 3))
        normal[tape.pixels] = tape.accumulated[:, 4:7]
        normal = normal.reshape(shape + (3,))

    return (color.reshape(shape + (3,)),
            depth.reshape(shape),
            normal,
            alpha.reshape(shape))


def render_3d(
        splat_set,
        mesh,
        transform,
        camera,
        blur=BLUR,
        z_near=Z_NEAR,
        t_min=T_MIN,
        geometry=None):

    if geometry is None:
        geometry = SplatGeometry(splat_set, mesh, transform)
    covariance = geometry.covariance(splat_set.mode)
    projected = project_splat(geometry.position, covariance, camera, blur, z_near)

    splat, pixel = candidate_pairs(projected.box, projected.valid, camera)
    keep, alpha_raw, alpha, depth = contributors_3d(
        projected, geometry.opacity, splat, pixel, camera)

    splat = splat[keep]
    pixel = pixel[keep]
    features = np.concatenate([
        geometry.color[splat], depth[keep][:, None]], axis=1)
    tape = composite(splat, pixel, depth[keep], alpha[keep], features, t_min)
    tape.alpha_raw = alpha_raw[keep][tape.order]
    tape.mode = MODE_3D
    tape.camera = camera
    tape.geometry = geometry
    tape.projected = projected
    tape.blur = blur

    color, depth_image, _, alpha_image = _images_from_tape(tape, camera, MODE_3D)
    return RenderOutput(color, depth_image, None, alpha_image, tape)


def render_2d(
        splat_set,
        mesh,
        transform,
        camera,
        z_near=Z_NEAR,
        t_min=T_MIN,
        geometry=None):

    if geometry is None:
        geometry = SplatGeometry(splat_set, mesh, transform)
    planes = SplatPlanes(geometry, camera, z_near)

    splat, pixel = candidate_pairs(planes.box, planes.valid, camera)
    keep, alpha_raw, alpha, depth = contributors_2d(
        planes, geometry.opacity, splat, pixel, camera, z_near)

    splat = splat[keep]
    pixel = pixel[keep]
    features = np.concatenate([
        geometry.color[splat],
        depth[keep][:, None],
        planes.normal[splat]], axis=1)
    tape = composite(splat, pixel, depth[keep], alpha[keep], features, t_min)
    tape.alpha_raw = alpha_raw[keep][tape.order]
    tape.mode = MODE_2D
    tape.camera = camera
    tape.geometry = geometry
    tape.planes = planes
    tape.z_near = z_near

    color, depth_image, normal, alpha_image = _images_from_tape(
        tape, camera, MODE_2D)
    return RenderOutput(color, depth_image, normal, alpha_image, tape)


def render(splat_set, mesh, transform, camera, mode=None, blur=BLUR):
    if mode is None:
        mode = splat_set.mode
    if mode == MODE_2D:
        return render_2d(splat_set, mesh, transform, camera)
    return render_3d(splat_set, mesh, transform, camera, blur=blur)


def brute_force_render(
        splat_set,
        mesh,
        transform,
        camera,
        mode,
        blur=BLUR,
        z_near=Z_NEAR,
        t_min=T_MIN):
    """
    reference renderer: every splat against every pixel, a full sort per
    pixel and a scalar compositing loop. Only for small scenes.
    """
    geometry = SplatGeometry(splat_set, mesh, transform)
    splat, pixel = all_pairs(len(splat_set), camera)

    if mode == MODE_3D:
        covariance = geometry.covariance(splat_set.mode)
        projected = project_splat(
            geometry.position, covariance, camera, blur, z_near)
        keep, _, alpha, depth = contributors_3d(
            projected, geometry.opacity, splat, pixel, camera)
        keep &= projected.depth[splat] > z_near
        normals = None
    else:
        planes = SplatPlanes(geometry, camera, z_near)
        keep, _, alpha, depth = contributors_2d(
            planes, geometry.opacity, splat, pixel, camera, z_near)
        normals = planes.normal

    number_of_pixels = camera.number_of_pixels
    color = np.zeros((number_of_pixels, 3))
    depth_image = np.zeros(number_of_pixels)
    normal_image = np.zeros((number_of_pixels, 3))
    alpha_image = np.zeros(number_of_pixels)

    per_pixel = [[] for _ in range(number_of_pixels)]
    for index in np.flatnonzero(keep):
        per_pixel[pixel[index]].append(
            (depth[index], int(splat[index]), alpha[index]))

    for p in range(number_of_pixels):
        entries = sorted(per_pixel[p], key=lambda e: (e[0], e[1]))
        transmittance = 1.0
        accumulated = [0.0, 0.0, 0.0]
        accumulated_normal = [0.0, 0.0, 0.0]
        accumulated_depth = 0.0
        accumulated_alpha = 0.0
        for (z, k, a) in entries:
            if transmittance < t_min:
                break
            w = a * transmittance
            for channel in range(3):
                accumulated[channel] = (
                    accumulated[channel] + w * geometry.color[k, channel])
                if normals is not None:
                    accumulated_normal[channel] = (
                        accumulated_normal[channel] + w * normals[k, channel])
            accumulated_depth = accumulated_depth + w * z
            accumulated_alpha = accumulated_alpha + w
            transmittance = transmittance * (1.0 - a)

        color[p] = accumulated
        normal_image[p] = accumulated_normal
        alpha_image[p] = accumulated_alpha
        depth_image[p] = accumulated_depth / max(accumulated_alpha, EPS_ALPHA)

    shape = (camera.height, camera.width)
    return (color.reshape(shape + (3,)),
            depth_image.reshape(shape),
            normal_image.reshape(shape + (3,)) if mode == MODE_2D else None,
            alpha_image.reshape(shape))


def _scatter(values, index, count):
    values = np.asarray(values)
    flat = values.reshape(len(values), -1)
    out = np.zeros((count, flat.shape[1]))
    for column in range(flat.shape[1]):
        out[:, column] = np.bincount(
            index, weights=flat[:, column], minlength=count)
    return out.reshape((count,) + values.shape[1:])


def _pixel_values(image, tape, channels):
    flat = image.reshape(-1, channels) if channels > 1 else image.reshape(-1)
    return flat[tape.pixels]


def contributor_gradients(tape, image_gradients):
    """
    gradients of the loss with respect to each contributor's alpha,
    depth, color and (2d) normal. returns
    (grad_alpha_raw, grad_depth, grad_color, grad_normal)
    """
    camera = tape.camera
    geometry = tape.geometry
    row = tape.row
    splat = tape.splat
    weight = tape.weight
    count = len(splat)
    height, width = camera.height, camera.width

    grad_color_image = image_gradients.color
    if grad_color_image is None:
        grad_color_image = np.zeros((height, width, 3))
    grad_depth_image = image_gradients.depth
    if grad_depth_image is None:
        grad_depth_image = np.zeros((height, width))
    grad_alpha_image = image_gradients.alpha
    if grad_alpha_image is None:
        grad_alpha_image = np.zeros((height, width))

    grad_color_pixel = _pixel_values(grad_color_image, tape, 3)[row]
    grad_depth_pixel = _pixel_values(grad_depth_image, tape, 1)[row]
    grad_alpha_pixel = _pixel_values(grad_alpha_image, tape, 1)[row]

    accumulated_alpha = tape.accumulated_alpha[row]
    clamped_alpha = np.maximum(accumulated_alpha, EPS_ALPHA)
    accumulated_depth = tape.accumulated[row, 3]
    d_depth_d_alpha = np.where(
        accumulated_alpha > EPS_ALPHA,
        -accumulated_depth / clamped_alpha ** 2,
        0.0)

    color = geometry.color[splat]
    grad_weight = (
        np.sum(grad_color_pixel * color, axis=1) +
        grad_depth_pixel * (tape.depth / clamped_alpha + d_depth_d_alpha) +
        grad_alpha_pixel)
    grad_depth = grad_depth_pixel * weight / clamped_alpha
    grad_color = grad_color_pixel * weight[:, None]

    grad_normal = None
    if tape.mode == MODE_2D:
        grad_normal_image = image_gradients.normal
        if grad_normal_image is None:
            grad_normal_image = np.zeros((height, width, 3))
        grad_normal_pixel = _pixel_values(grad_normal_image, tape, 3)[row]
        normal = tape.planes.normal[splat]
        grad_weight = grad_weight + np.sum(grad_normal_pixel * normal, axis=1)
        grad_normal = grad_normal_pixel * weight[:, None]

    if image_gradients.contributor_weight is not None:
        grad_weight = grad_weight + image_gradients.contributor_weight
    if image_gradients.contributor_depth is not None:
        grad_depth = grad_depth + image_gradients.contributor_depth

    grad_weight = np.where(tape.alive, grad_weight, 0.0)
    grad_depth = np.where(tape.alive, grad_depth, 0.0)

    dense = np.zeros((tape.number_of_rows, tape.depth_complexity))
    dense[row, tape.rank] = grad_weight * weight
    suffix = np.cumsum(dense[:, ::-1], axis=1)[:, ::-1] - dense
    behind = suffix[row, tape.rank]

    grad_alpha = (grad_weight * tape.transmittance -
                  behind / (1.0 - tape.alpha))
    grad_alpha = np.where(tape.alive, grad_alpha, 0.0)
    grad_alpha_raw = np.where(tape.alpha_raw > ALPHA_MAX, 0.0, grad_alpha)

    if count == 0:
        grad_alpha_raw = np.zeros(0)
    return grad_alpha_raw, grad_depth, grad_color, grad_normal


def _backward_3d(tape, grad_alpha_raw, grad_depth):
    """
    per splat (grad camera position, grad camera covariance, grad opacity)
    """
    geometry = tape.geometry
    projected = tape.projected
    camera = tape.camera
    splat = tape.splat
    number_of_splats = len(geometry)

    x, y = camera.pixel_coordinates(tape.pixel)
    pixel = np.stack([x, y], axis=1)
    energy, d_position, d_covariance = energy_position_gradient(
        projected.camera_covariance[splat],
        projected.camera_position[splat],
        pixel,
        camera.blur_matrix(tape.blur))

    grad_energy = -grad_alpha_raw * tape.alpha_raw
    grad_opacity = grad_alpha_raw * np.exp(-energy)

    grad_position = grad_energy[:, None] * d_position
    grad_position[:, 2] += grad_depth
    grad_covariance = grad_energy[:, None, None] * d_covariance

    return (_scatter(grad_position, splat, number_of_splats),
            _scatter(grad_covariance, splat, number_of_splats),
            _scatter(grad_opacity, splat, number_of_splats))


def _backward_2d(tape, grad_alpha_raw, grad_depth, grad_normal):
    """
    per splat gradients with respect to the camera space plane frame:
    (position, tangent_u, tangent_v, normal, scale_u, scale_v, opacity)
    """
    geometry = tape.geometry
    planes = tape.planes
    camera = tape.camera
    splat = tape.splat
    number_of_splats = len(geometry)

    x, y = camera.pixel_coordinates(tape.pixel)
    n_dot_w, lam, hit, a, b = ray_splat_intersection(planes, splat, x, y)
    ray = np.stack([x, y, np.ones(len(x))], axis=1)

    energy = 0.5 * (a * a + b * b)
    grad_energy = -grad_alpha_raw * tape.alpha_raw
    grad_opacity = grad_alpha_raw * np.exp(-energy)

    scale_u = planes.scale_u[splat]
    scale_v = planes.scale_v[splat]
    tangent_u = planes.tangent_u[splat]
    tangent_v = planes.tangent_v[splat]
    normal = planes.normal[splat]
    position = planes.camera_position[splat]

    coef_u = grad_energy * a / scale_u
    coef_v = grad_energy * b / scale_v
    grad_hit = coef_u[:, None] * tangent_u + coef_v[:, None] * tangent_v
    grad_tangent_u = coef_u[:, None] * hit
    grad_tangent_v = coef_v[:, None] * hit
    grad_scale_u = -grad_energy * a * a / scale_u
    grad_scale_v = -grad_energy * b * b / scale_v

    grad_lam = np.sum(grad_hit * ray, axis=1) + grad_depth
    ratio = grad_lam / n_dot_w
    grad_position = -grad_hit + ratio[:, None] * normal
    grad_plane_normal = ratio[:, None] * (position - lam[:, None] * ray)
    grad_plane_normal = grad_plane_normal + grad_normal

    return (_scatter(grad_position, splat, number_of_splats),
            _scatter(grad_tangent_u, splat, number_of_splats),
            _scatter(grad_tangent_v, splat, number_of_splats),
            _scatter(grad_plane_normal, splat, number_of_splats),
            _scatter(grad_scale_u, splat, number_of_splats),
            _scatter(grad_scale_v, splat, number_of_splats),
            _scatter(grad_opacity, splat, number_of_splats))


def screen_gradient(camera_position, grad_camera_position, camera):
    """
    norm of the gradient with respect to the projected centre in
    normalized device coordinates ([-1, 1] across the image)
    """
    z = camera_position[:, 2]
    return np.sqrt(
        (z * grad_camera_position[:, 0] * 0.5 * camera.width / camera.fx) ** 2 +
        (z * grad_camera_position[:, 1] * 0.5 * camera.height / camera.fy) ** 2)


def backward_position(tape, image_gradients):
    """
    dL/dp_k for every splat. returns (camera space, world space)
    """
    grad_alpha_raw, grad_depth, _, grad_normal = contributor_gradients(
        tape, image_gradients)
    if tape.mode == MODE_3D:
        grad_camera = _backward_3d(tape, grad_alpha_raw, grad_depth)[0]
    else:
        grad_camera = _backward_2d(
            tape, grad_alpha_raw, grad_depth, grad_normal)[0]
    return grad_camera, grad_camera @ tape.camera.rotation


def backward_appearance(tape, image_gradients):
    """
    full reverse pass to every parameter class. returns
    ParameterGradients
    """
    geometry = tape.geometry
    camera = tape.camera
    rotation_c = camera.rotation
    number_of_splats = len(geometry)

    grad_alpha_raw, grad_depth, grad_color, grad_normal = contributor_gradients(
        tape, image_gradients)
    grad_color_splat = _scatter(grad_color, tape.splat, number_of_splats)

    if tape.mode == MODE_3D:
        grad_camera, grad_camera_covariance, grad_opacity = _backward_3d(
            tape, grad_alpha_raw, grad_depth)
        grad_world_covariance = (
            rotation_c.T @ grad_camera_covariance @ rotation_c)
        grad_rotation, grad_scale = geometry.covariance_backward(
            grad_world_covariance, geometry.splat_set.mode)
        camera_position = tape.projected.camera_position
    else:
        (grad_camera, grad_tangent_u, grad_tangent_v, grad_plane_normal,
         grad_scale_u, grad_scale_v, grad_opacity) = _backward_2d(
             tape, grad_alpha_raw, grad_depth, grad_normal)
        grad_frame = np.stack(
            [grad_tangent_u, grad_tangent_v, grad_plane_normal], axis=2)
        grad_rotation = rotation_c.T @ grad_frame
        grad_scale = np.stack([
            grad_scale_u, grad_scale_v, np.zeros(number_of_splats)], axis=1)
        camera_position = tape.planes.camera_position

    grad_world = grad_camera @ rotation_c
    gradients = geometry.backward(
        grad_world, grad_rotation, grad_scale, grad_opacity, grad_color_splat)

    gradients.screen = screen_gradient(camera_position, grad_camera, camera)
    gradients.visible = np.bincount(
        tape.splat[tape.alive], minlength=number_of_splats) > 0
    return gradients

import numpy as np
from monty.json import MSONable
from monty.serialization import dumpfn, loadfn
from pathlib import Path

from AnchorSplat.constants import (
    EPS_PARALLEL,
    EPS_ALPHA,
    ALPHA_MAX,
    LOCAL_CUTOFF,
    T_MIN,
    Z_NEAR,
    BAKE_HOPS,
    DEPTH_THRESHOLD,
    ConfigError
)
from AnchorSplat.rotations import face_frame_quaternion, quaternion_to_rotation
from AnchorSplat.splats import SplatGeometry
from AnchorSplat.rasterizer import composite, render_2d
from AnchorSplat.mesh import write_obj
from AnchorSplat.image_io import (
    write_png,
    read_png,
    write_pfm,
    read_pfm,
    bilinear_sample
)
from AnchorSplat.logging import log_message, log_progress

"""
Baking splat attributes into per face charts.

Each face is a local orthographic projection surface. A texel of face j
sits at p_hat = sum beta_hat v' and shoots a ray along the face normal
n_j. For a splat k with centre p_k, normal n_k and tangents t_u, t_v

        delta = ((p_k - p_hat) . n_k) / (n_j . n_k)
        x_hat = ((p_hat + delta n_j - p_k) . t_u / s_u,
                 (p_hat + delta n_j - p_k) . t_v / s_v)
        alpha = min(o_k exp(-|x_hat|^2 / 2), 0.999)     |x_hat|^2 <= 9

Contributions are ordered by (p_k - p_hat) . n_j, outermost first by
default, and composited front to back with the same routine the
rasterizer uses. Diffuse colour and displacement are divided by the
accumulated coverage; the normal is the normalized weighted sum of
splat normals expressed in the face frame.

Chart layout: a face of resolution R owns an R x R block of the atlas.
Its vertices sit at the texel centres (0,0), (R-1,0) and (0,R-1), so
texel (a, b) has beta_hat = (1 - s - t, s, t) with s = a/(R-1),
t = b/(R-1). Texels beyond the hypotenuse are baked at the clamped
barycentrics so bilinear lookups never read unbaked texels.
"""

FILL_NORMAL = np.array([0.0, 0.0, 1.0])
GUTTER = 1


def face_resolutions(mesh, transform, texel_size, minimum=4, maximum=64):
    areas = mesh.face_areas(transform.apply(mesh.vertices))
    resolution = np.ceil(np.sqrt(areas) / texel_size)
    return np.clip(resolution, minimum, maximum).astype(np.int64)


class ChartTable(MSONable):
    """
    chart of face f: atlas block [x[f], x[f] + R[f]) x [y[f], y[f] + R[f])
    """

    def __init__(self, x, y, resolution, width, height):
        self.x = np.array(x, dtype=np.int64)
        self.y = np.array(y, dtype=np.int64)
        self.resolution = np.array(resolution, dtype=np.int64)
        self.width = int(width)
        self.height = int(height)

    def __len__(self):
        return len(self.resolution)

    def as_dict(self):
        return {
            "@module": type(self).__module__,
            "@class": type(self).__name__,
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "resolution": self.resolution.tolist(),
            "width": self.width,
            "height": self.height}

    def texel_to_uv(self, face_id, a, b):
        """
        OBJ texture coordinates (origin bottom left) of the chart texel
        centre (a, b), fractional texels allowed
        """
        u = (self.x[face_id] + a + 0.5) / self.width
        v = 1.0 - (self.y[face_id] + b + 0.5) / self.height
        return u, v

    def barycentric_to_uv(self, face_id, beta):
        scale = self.resolution[face_id] - 1
        return self.texel_to_uv(
            face_id, beta[..., 1] * scale, beta[..., 2] * scale)

    def overlaps(self):
        """
        number of chart pairs which overlap or touch without a gutter
        """
        count = 0
        for f in range(len(self)):
            for g in range(f + 1, len(self)):
                separated = (
                    self.x[f] + self.resolution[f] + GUTTER <= self.x[g] or
                    self.x[g] + self.resolution[g] + GUTTER <= self.x[f] or
                    self.y[f] + self.resolution[f] + GUTTER <= self.y[g] or
                    self.y[g] + self.resolution[g] + GUTTER <= self.y[f])
                if not separated:
                    count += 1
        return count


def pack_charts(resolutions, atlas_width):
    """
    shelf packing of square charts in face id order with a one texel
    gutter
    """
    resolutions = np.asarray(resolutions, dtype=np.int64)
    if len(resolutions) > 0 and resolutions.max() > atlas_width:
        raise ConfigError(
            "chart of resolution " + str(int(resolutions.max())) +
            " does not fit an atlas of width " + str(atlas_width))

    x = np.zeros(len(resolutions), dtype=np.int64)
    y = np.zeros(len(resolutions), dtype=np.int64)
    cursor_x = 0
    shelf_y = 0
    shelf_height = 0
    for face_id, resolution in enumerate(resolutions):
        if cursor_x + resolution > atlas_width:
            shelf_y += shelf_height + GUTTER
            cursor_x = 0
            shelf_height = 0
        x[face_id] = cursor_x
        y[face_id] = shelf_y
        cursor_x += resolution + GUTTER
        shelf_height = max(shelf_height, resolution)

    return ChartTable(x, y, resolutions, atlas_width, max(shelf_y + shelf_height, 1))


def texel_barycentrics(resolution):
    """
    (beta_hat (R*R, 3), inside (R*R,)) for texels in row major (b, a)
    order
    """
    b, a = np.meshgrid(
        np.arange(resolution), np.arange(resolution), indexing='ij')
    s = a.ravel() / (resolution - 1.0)
    t = b.ravel() / (resolution - 1.0)
    beta = np.stack([1.0 - s - t, s, t], axis=1)
    inside = beta[:, 0] >= -1e-12
    clamped = np.maximum(beta, 0.0)
    beta = np.where(
        inside[:, None], beta, clamped / clamped.sum(axis=1, keepdims=True))
    return beta, inside


def texel_world_position(face_id, beta, mesh, transform):
    corners = transform.apply(mesh.vertices)[mesh.faces[face_id]]
    return beta @ corners


class TexelSample:
    """
    one texel against one splat
    """

    def __init__(self, face_id, beta, position, delta, local, alpha):
        self.face_id = face_id
        self.beta = beta
        self.position = position
        self.delta = delta
        self.local = local
        self.alpha = alpha


def texel_contributions(
        texel_positions,
        face_normal,
        splat_position,
        splat_rotation,
        splat_scale,
        splat_opacity):
    """
    vectorized over matching rows of texel and splat arrays. returns
    (keep, delta, local (n,2), alpha, order_key) where order_key is
    (p_k - p_hat) . n_j
    """
    splat_normal = splat_rotation[:, :, 2]
    tangent_u = splat_rotation[:, :, 0]
    tangent_v = splat_rotation[:, :, 1]
    offset = splat_position - texel_positions

    cosine = (face_normal[:, 0] * splat_normal[:, 0] +
              face_normal[:, 1] * splat_normal[:, 1] +
              face_normal[:, 2] * splat_normal[:, 2])
    along = (offset[:, 0] * splat_normal[:, 0] +
             offset[:, 1] * splat_normal[:, 1] +
             offset[:, 2] * splat_normal[:, 2])
    parallel = np.abs(cosine) < EPS_PARALLEL
    delta = np.where(parallel, 0.0, along / np.where(parallel, 1.0, cosine))

    hit = texel_positions + delta[:, None] * face_normal - splat_position
    local_u = (hit[:, 0] * tangent_u[:, 0] + hit[:, 1] * tangent_u[:, 1] +
               hit[:, 2] * tangent_u[:, 2]) / splat_scale[:, 0]
    local_v = (hit[:, 0] * tangent_v[:, 0] + hit[:, 1] * tangent_v[:, 1] +
               hit[:, 2] * tangent_v[:, 2]) / splat_scale[:, 1]
    radius = local_u * local_u + local_v * local_v

    keep = ~parallel & (radius <= LOCAL_CUTOFF)
    alpha = np.minimum(
        splat_opacity * np.exp(-0.5 * np.where(keep, radius, 0.0)), ALPHA_MAX)
    order_key = (offset[:, 0] * face_normal[:, 0] +
                 offset[:, 1] * face_normal[:, 1] +
                 offset[:, 2] * face_normal[:, 2])
    return keep, delta, np.stack([local_u, local_v], axis=1), alpha, order_key


def splat_texel_contribution(splat_index, texel_position, face_normal, geometry):
    """
    TexelSample for one splat against one texel, or None when the texel
    ray is parallel to the splat plane
    """
    keep, delta, local, alpha, _ = texel_contributions(
        np.asarray(texel_position, dtype=float)[None, :],
        np.asarray(face_normal, dtype=float)[None, :],
        geometry.position[[splat_index]],
        geometry.rotation[[splat_index]],
        geometry.scale[[splat_index]],
        geometry.opacity[[splat_index]])
    cosine = np.dot(face_normal, geometry.splat_normal[splat_index])
    if abs(cosine) < EPS_PARALLEL:
        return None
    return TexelSample(
        None, None, np.asarray(texel_position), delta[0], local[0],
        alpha[0] if keep[0] else 0.0)


class FaceChart:

    def __init__(self, face_id, resolution, diffuse, normal, displacement,
                 coverage, inside):
        self.face_id = face_id
        self.resolution = resolution
        self.diffuse = diffuse
        self.normal = normal
        self.displacement = displacement
        self.coverage = coverage
        self.inside = inside


class BakeContext:
    """
    read only world space data shared by every face bake
    """

    def __init__(self, scene, world_space_normals=False, sort='outward'):
        self.scene = scene
        self.mesh = scene.mesh
        self.transform = scene.transform
        self.splat_set = scene.splat_set
        self.geometry = SplatGeometry(scene.splat_set, scene.mesh, scene.transform)
        self.world_vertices = self.geometry.world_vertices
        self.face_normals = self.mesh.face_normals(self.world_vertices)
        self.world_space_normals = world_space_normals
        self.sort = sort

    def neighborhood_splats(self, face_id, hops=BAKE_HOPS):
        faces = self.mesh.face_neighborhood(face_id, hops)
        return self.splat_set.splats_on_faces(faces, self.mesh.number_of_faces)

    def all_splats(self):
        return np.arange(len(self.splat_set))


def bake_face(context, face_id, resolution, candidates):
    """
    bake one chart from the candidate splats
    """
    geometry = context.geometry
    beta, inside = texel_barycentrics(resolution)
    corners = context.world_vertices[context.mesh.faces[face_id]]
    texels = beta @ corners
    normal = context.face_normals[face_id]
    count = len(texels)

    candidates = np.asarray(candidates, dtype=np.int64)
    texel = np.repeat(np.arange(count), len(candidates))
    splat = np.tile(candidates, count)

    keep, delta, _, alpha, order_key = texel_contributions(
        texels[texel],
        np.broadcast_to(normal, (len(texel), 3)),
        geometry.position[splat],
        geometry.rotation[splat],
        geometry.scale[splat],
        geometry.opacity[splat])

    texel = texel[keep]
    splat = splat[keep]
    delta = delta[keep]
    alpha = alpha[keep]
    order = -order_key[keep] if context.sort == 'outward' else order_key[keep]

    splat_normals = geometry.splat_normal[splat]
    if not context.world_space_normals:
        face_frame = quaternion_to_rotation(face_frame_quaternion(normal))
        splat_normals = splat_normals @ face_frame

    features = np.concatenate([
        geometry.color[splat], delta[:, None], splat_normals], axis=1)
    tape = composite(splat, texel, order, alpha, features, T_MIN)

    diffuse = np.zeros((count, 3))
    displacement = np.zeros(count)
    normals = np.tile(FILL_NORMAL, (count, 1))
    coverage = np.zeros(count)

    covered = tape.pixels
    accumulated_alpha = tape.accumulated_alpha
    has = accumulated_alpha > EPS_ALPHA
    rows = covered[has]
    coverage[covered] = accumulated_alpha
    diffuse[rows] = tape.accumulated[has, 0:3] / accumulated_alpha[has, None]
    displacement[rows] = tape.accumulated[has, 3] / accumulated_alpha[has]
    summed = tape.accumulated[has, 4:7]
    norms = np.linalg.norm(summed, axis=1)
    good = norms > 0
    normals[rows[good]] = summed[good] / norms[good, None]

    shape = (resolution, resolution)
    return FaceChart(
        face_id,
        resolution,
        diffuse.reshape(shape + (3,)),
        normals.reshape(shape + (3,)),
        displacement.reshape(shape),
        coverage.reshape(shape),
        inside.reshape(shape))


class AttributeAtlas:
    """
    diffuse (H,W,4) linear RGB plus coverage alpha, normal (H,W,3)
    encoded (n + 1)/2, displacement (H,W) signed world units
    """

    def __init__(self, chart_table):
        self.chart_table = chart_table
        height, width = chart_table.height, chart_table.width
        self.diffuse = np.zeros((height, width, 4))
        self.normal = np.tile(0.5 * (FILL_NORMAL + 1.0), (height, width, 1))
        self.displacement = np.zeros((height, width))
        self.visible_views = None

    def insert(self, chart):
        table = self.chart_table
        x0 = table.x[chart.face_id]
        y0 = table.y[chart.face_id]
        r = chart.resolution
        self.diffuse[y0:y0 + r, x0:x0 + r, 0:3] = chart.diffuse
        self.diffuse[y0:y0 + r, x0:x0 + r, 3] = chart.coverage
        self.normal[y0:y0 + r, x0:x0 + r] = 0.5 * (chart.normal + 1.0)
        self.displacement[y0:y0 + r, x0:x0 + r] = chart.displacement

    def chart_view(self, image, face_id):
        table = self.chart_table
        x0 = table.x[face_id]
        y0 = table.y[face_id]
        r = table.resolution[face_id]
        return image[y0:y0 + r, x0:x0 + r]

    def decoded_normals(self):
        return 2.0 * self.normal - 1.0

    def sample(self, image, face_id, beta):
        """
        bilinear lookup inside the chart of face_id at barycentrics beta
        (n,3)
        """
        table = self.chart_table
        scale = table.resolution[face_id] - 1
        a = np.clip(beta[..., 1] * scale, 0.0, scale)
        b = np.clip(beta[..., 2] * scale, 0.0, scale)
        return bilinear_sample(image, table.x[face_id] + a, table.y[face_id] + b)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_png(directory / 'diffuse.png', self.diffuse, srgb=True)
        write_png(directory / 'normal.png', self.normal, srgb=False)
        write_pfm(directory / 'displacement.pfm', self.displacement)
        write_pfm(directory / 'diffuse.pfm', self.diffuse[:, :, 0:3])
        write_pfm(directory / 'coverage.pfm', self.diffuse[:, :, 3])
        dumpfn(self.chart_table, directory / 'charts.json', indent=2)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        table = loadfn(directory / 'charts.json')
        if isinstance(table, dict):
            table = ChartTable(
                table['x'], table['y'], table['resolution'],
                table['width'], table['height'])
        atlas = cls(table)
        atlas.diffuse[:, :, 0:3] = read_pfm(directory / 'diffuse.pfm')
        atlas.diffuse[:, :, 3] = read_pfm(directory / 'coverage.pfm')
        atlas.normal = read_png(directory / 'normal.png', srgb=False)[:, :, 0:3]
        atlas.displacement = read_pfm(directory / 'displacement.pfm')
        return atlas


def bake_all(
        scene,
        texel_size=0.02,
        atlas_width=1024,
        sort='outward',
        world_space_normals=False,
        face_order=None,
        hops=BAKE_HOPS):
    """
    every face baked from the splats within `hops` faces. faces write
    disjoint chart blocks, so face_order does not change the result.
    """
    context = BakeContext(scene, world_space_normals, sort)
    resolutions = face_resolutions(scene.mesh, scene.transform, texel_size)
    table = pack_charts(resolutions, atlas_width)
    atlas = AttributeAtlas(table)

    number_of_faces = scene.mesh.number_of_faces
    if face_order is None:
        face_order = range(number_of_faces)

    log_message("baking atlas", table.width, "x", table.height,
                "for", number_of_faces, "faces")
    for done, face_id in enumerate(face_order):
        chart = bake_face(
            context, face_id, resolutions[face_id],
            context.neighborhood_splats(face_id, hops))
        atlas.insert(chart)
        if (done + 1) % 1000 == 0:
            log_progress("faces baked", done + 1, number_of_faces)
    return atlas


def brute_force_bake(
        scene,
        texel_size=0.02,
        atlas_width=1024,
        sort='outward',
        world_space_normals=False):
    """
    every splat against every texel. Only for tests and small scenes.
    """
    context = BakeContext(scene, world_space_normals, sort)
    resolutions = face_resolutions(scene.mesh, scene.transform, texel_size)
    table = pack_charts(resolutions, atlas_width)
    atlas = AttributeAtlas(table)
    everything = context.all_splats()
    for face_id in range(scene.mesh.number_of_faces):
        atlas.insert(bake_face(context, face_id, resolutions[face_id], everything))
    return atlas


def hop_limit_excess(scene, face_id, resolution, hops=BAKE_HOPS, sort='outward'):
    """
    largest total alpha any texel of the face receives from splats
    beyond the hop limit
    """
    context = BakeContext(scene, sort=sort)
    near = set(context.neighborhood_splats(face_id, hops).tolist())
    far = np.array([k for k in range(len(scene.splat_set)) if k not in near],
                   dtype=np.int64)
    if len(far) == 0:
        return 0.0

    beta, _ = texel_barycentrics(resolution)
    texels = beta @ context.world_vertices[scene.mesh.faces[face_id]]
    texel = np.repeat(np.arange(len(texels)), len(far))
    splat = np.tile(far, len(texels))
    geometry = context.geometry
    keep, _, _, alpha, _ = texel_contributions(
        texels[texel],
        np.broadcast_to(context.face_normals[face_id], (len(texel), 3)),
        geometry.position[splat],
        geometry.rotation[splat],
        geometry.scale[splat],
        geometry.opacity[splat])
    total = np.bincount(
        texel, weights=np.where(keep, alpha, 0.0), minlength=len(texels))
    return total.max()


def atlas_texels(atlas, mesh, transform):
    """
    (face_id, row, col, world position, face normal) for every chart texel
    """
    table = atlas.chart_table
    world_vertices = transform.apply(mesh.vertices)
    normals = mesh.face_normals(world_vertices)
    faces = []
    rows = []
    cols = []
    positions = []
    face_normals = []
    for face_id in range(len(table)):
        resolution = table.resolution[face_id]
        beta, _ = texel_barycentrics(resolution)
        b, a = np.divmod(np.arange(resolution * resolution), resolution)
        faces.append(np.full(len(beta), face_id))
        rows.append(table.y[face_id] + b)
        cols.append(table.x[face_id] + a)
        positions.append(beta @ world_vertices[mesh.faces[face_id]])
        face_normals.append(np.tile(normals[face_id], (len(beta), 1)))
    return (np.concatenate(faces), np.concatenate(rows), np.concatenate(cols),
            np.concatenate(positions), np.concatenate(face_normals))


def refine_texture(
        atlas,
        scene,
        cameras,
        targets,
        iterations=20,
        learning_rate=0.25,
        depth_threshold=DEPTH_THRESHOLD,
        depth_maps=None):
    """
    multi view refinement of the diffuse chart. A texel at its displaced
    position p* = p_hat + d n is visible in a view when its depth is
    within depth_threshold of the rendered depth at its projection. Its
    colour takes gradient steps on the mean squared difference to the
    bilinearly sampled target colours of the visible views.

    returns (refined atlas, per iteration mean texel error)
    """
    _, rows, cols, positions, normals = atlas_texels(
        atlas, scene.mesh, scene.transform)
    displaced = positions + atlas.displacement[rows, cols][:, None] * normals

    if depth_maps is None:
        depth_maps = []
        for camera in cameras:
            output = render_2d(
                scene.splat_set, scene.mesh, scene.transform, camera)
            depth_maps.append(np.where(output.alpha > 0.5, output.depth, 0.0))

    count = len(rows)
    sample_sum = np.zeros((count, 3))
    sample_square = np.zeros(count)
    visible_views = np.zeros(count, dtype=np.int64)
    for camera, depth, target in zip(cameras, depth_maps, targets):
        x, y, z = camera.project(displaced)
        column = np.floor(x).astype(np.int64)
        row = np.floor(y).astype(np.int64)
        inside = ((z > Z_NEAR) & (column >= 0) & (column < camera.width) &
                  (row >= 0) & (row < camera.height))
        rendered = np.zeros(count)
        rendered[inside] = depth[row[inside], column[inside]]
        visible = inside & (rendered > 0) & (np.abs(z - rendered) < depth_threshold)

        colors = bilinear_sample(target, x[visible] - 0.5, y[visible] - 0.5)
        sample_sum[visible] += colors
        sample_square[visible] += np.sum(colors * colors, axis=1)
        visible_views[visible] += 1

    seen = visible_views > 0
    views = np.maximum(visible_views, 1)[:, None]
    mean_target = sample_sum / views
    target_square = sample_square / views[:, 0]

    refined = AttributeAtlas(atlas.chart_table)
    refined.diffuse = atlas.diffuse.copy()
    refined.normal = atlas.normal.copy()
    refined.displacement = atlas.displacement.copy()

    color = refined.diffuse[rows, cols, 0:3]
    errors = []

    def texel_error(c):
        # mean over visible views of |c - t_v|^2
        error = (np.sum(c * c, axis=1) - 2.0 * np.sum(c * mean_target, axis=1) +
                 target_square)
        return float(np.mean(error[seen])) if np.any(seen) else 0.0

    errors.append(texel_error(color))
    for _ in range(iterations):
        gradient = 2.0 * (color - mean_target)
        step = np.where(seen[:, None], learning_rate * gradient, 0.0)
        color = np.clip(color - step, 0.0, 1.0)
        errors.append(texel_error(color))

    refined.diffuse[rows, cols, 0:3] = color
    visible_image = np.zeros(atlas.displacement.shape, dtype=np.int64)
    visible_image[rows, cols] = visible_views
    refined.visible_views = visible_image
    log_message(
        "refined", int(np.count_nonzero(seen)), "of", count,
        "texels, error", "%.6f" % errors[0], "->", "%.6f" % errors[-1])
    return refined, errors


def tessellate_displaced(mesh, transform, atlas, level=4):
    """
    uniform level x level subdivision of every face with vertices moved
    along the face normal by the sampled displacement. returns
    (vertices, faces, uvs, face_ids, betas): per vertex a uv and the
    barycentrics in its original face, per triangle the original face.
    """
    world_vertices = transform.apply(mesh.vertices)
    normals = mesh.face_normals(world_vertices)
    table = atlas.chart_table

    local = []
    for i in range(level + 1):
        for j in range(level + 1 - i):
            local.append((i, j))
    index = {key: n for n, key in enumerate(local)}
    local = np.array(local, dtype=float)
    beta = np.stack([
        1.0 - (local[:, 0] + local[:, 1]) / level,
        local[:, 0] / level,
        local[:, 1] / level], axis=1)

    triangles = []
    for i in range(level):
        for j in range(level - i):
            triangles.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j < level - 1:
                triangles.append(
                    (index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    triangles = np.array(triangles, dtype=np.int64)

    per_face = len(beta)
    vertices = []
    faces = []
    uvs = []
    face_ids = []
    betas = []
    for face_id in range(mesh.number_of_faces):
        corners = world_vertices[mesh.faces[face_id]]
        displacement = atlas.sample(atlas.displacement, face_id, beta)
        vertices.append(beta @ corners + displacement[:, None] * normals[face_id])
        u, v = table.barycentric_to_uv(face_id, beta)
        uvs.append(np.stack([u, v], axis=1))
        faces.append(triangles + face_id * per_face)
        face_ids.append(np.full(len(triangles), face_id))
        betas.append(beta)

    return (np.concatenate(vertices), np.concatenate(faces),
            np.concatenate(uvs), np.concatenate(face_ids),
            np.concatenate(betas))


def export_uv_mesh(path, mesh, transform, chart_table):
    """
    world space mesh with per face texture coordinates at the chart
    corners
    """
    corner_beta = np.eye(3)
    uvs = []
    uv_faces = []
    for face_id in range(mesh.number_of_faces):
        u, v = chart_table.barycentric_to_uv(face_id, corner_beta)
        uvs.append(np.stack([u, v], axis=1))
        uv_faces.append(np.arange(3) + 3 * face_id)
    log_message("writing " + str(path))
    write_obj(path, transform.apply(mesh.vertices), mesh.faces,
              np.concatenate(uvs), np.array(uv_faces))

import numpy as np
from scipy.spatial import cKDTree

from AnchorSplat.constants import ImageShapeError
from AnchorSplat.mesh import sample_surface
from AnchorSplat.attribute_baker import tessellate_displaced
from AnchorSplat.synth import raycast
from AnchorSplat.logging import log_message


def chamfer_distance(points_a, points_b):
    """
    symmetric mean squared nearest neighbour distance
    """
    distance_ab, _ = cKDTree(points_b).query(points_a)
    distance_ba, _ = cKDTree(points_a).query(points_b)
    return float(np.mean(distance_ab ** 2) + np.mean(distance_ba ** 2))


def mesh_chamfer_distance(vertices_a, faces_a, vertices_b, faces_b, rng, count=10000):
    return chamfer_distance(
        sample_surface(vertices_a, faces_a, count, rng),
        sample_surface(vertices_b, faces_b, count, rng))


def psnr(image_a, image_b, peak=1.0):
    if image_a.shape != image_b.shape:
        raise ImageShapeError(
            "psnr of " + str(image_a.shape) + " against " + str(image_b.shape))
    mse = float(np.mean((image_a - image_b) ** 2))
    if mse == 0.0:
        return np.inf
    return 10.0 * np.log10(peak * peak / mse)


def render_baked_mesh(mesh, transform, atlas, camera, level=4):
    """
    ray cast of the displaced tessellation textured with the baked
    diffuse atlas, composited on black with the bake coverage as alpha.
    returns (color (H,W,3), alpha (H,W))
    """
    vertices, faces, _, face_ids, betas = tessellate_displaced(
        mesh, transform, atlas, level)
    hits = raycast(vertices, faces, camera)

    shape = (camera.height, camera.width)
    color = np.zeros((camera.number_of_pixels, 3))
    alpha = np.zeros(camera.number_of_pixels)
    rows = np.flatnonzero(hits.hit)
    if len(rows) > 0:
        triangle = hits.face_id[rows]
        beta = np.einsum(
            'nk,nkm->nm', hits.barycentric[rows], betas[faces[triangle]])
        face = face_ids[triangle]
        diffuse = atlas.sample(atlas.diffuse, face, beta)
        alpha[rows] = diffuse[:, 3]
        color[rows] = diffuse[:, 0:3] * diffuse[:, 3:4]

    return color.reshape(shape + (3,)), alpha.reshape(shape)


def holdout_psnr(scene, atlas, cameras, images, level=4):
    """
    per view PSNR of the baked mesh rendering against reference images
    """
    values = []
    for camera, reference in zip(cameras, images):
        color, _ = render_baked_mesh(scene.mesh, scene.transform, atlas, camera, level)
        values.append(psnr(color, reference))
    log_message("baked mesh psnr per view:", " ".join('%.2f' % v for v in values))
    return values

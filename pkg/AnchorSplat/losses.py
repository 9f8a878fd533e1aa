import numpy as np
from scipy import signal
from monty.json import MSONable

from AnchorSplat.constants import (
    ALPHA_MASK,
    SSIM_WINDOW,
    SSIM_SIGMA,
    SSIM_C1,
    SSIM_C2,
    ImageShapeError
)
from AnchorSplat.rotations import normalize_backward, cross_backward
from AnchorSplat.rasterizer import ImageGradients
from AnchorSplat.logging import log_message

"""
Loss terms and their gradients with respect to the rendered images.
Every loss returns its value together with the gradient of that value
(unweighted) so that combine_losses can apply the weights in one place.

    photo   mean absolute colour error
    ssim    1 - SSIM with an 11x11 gaussian window, sigma 1.5
    reg     sum_i |(L v)_i|^2 over template vertices
    normal  mean (1 - n_render . n_ref) over pixels with alpha > 0.5
    dist    per pixel sum_ij w_i w_j |z_i - z_j|, averaged over pixels
"""

LOSS_TERMS = ['photo', 'ssim', 'reg', 'normal', 'dist']


class LossWeights(MSONable):

    def __init__(
            self,
            photo=0.8,
            ssim=0.2,
            reg=1e-4,
            normal=0.05,
            dist=100.0):
        self.photo = photo
        self.ssim = ssim
        self.reg = reg
        self.normal = normal
        self.dist = dist

    @classmethod
    def from_config(cls, config, scene_scale=1.0):
        return cls(
            photo=config.lambda_photo,
            ssim=config.lambda_ssim,
            reg=config.lambda_reg,
            normal=config.lambda_normal,
            dist=config.lambda_dist / scene_scale)

    def weight(self, term):
        return getattr(self, term)


class LossReport:

    def __init__(self, weights):
        self.weights = weights
        self.terms = {term: 0.0 for term in LOSS_TERMS}
        self.total = 0.0
        self.image_gradients = None
        self.vertex_gradient = None

    def set_term(self, term, value):
        self.terms[term] = float(value)
        self.total = sum(
            self.weights.weight(t) * self.terms[t] for t in LOSS_TERMS)

    def to_row(self):
        return [self.terms[term] for term in LOSS_TERMS] + [self.total]


def check_same_shape(rendered, target):
    if rendered.shape != target.shape:
        raise ImageShapeError(
            "image shapes differ: " + str(rendered.shape) +
            " vs " + str(target.shape))


def photo_loss(rendered, target):
    check_same_shape(rendered, target)
    difference = rendered - target
    value = np.mean(np.abs(difference))
    gradient = np.sign(difference) / difference.size
    return value, gradient


def ssim_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    gaussian = signal.windows.gaussian(size, sigma)
    gaussian = gaussian / gaussian.sum()
    return np.outer(gaussian, gaussian)


def _filter(image, window):
    return signal.convolve2d(image, window, mode='valid')


def _filter_adjoint(image, window):
    return signal.convolve2d(image, window[::-1, ::-1], mode='full')


def ssim_map(x, y, window):
    """
    SSIM map of one channel plus the statistics the gradient needs
    """
    mu_x = _filter(x, window)
    mu_y = _filter(y, window)
    sigma_xx = _filter(x * x, window) - mu_x * mu_x
    sigma_yy = _filter(y * y, window) - mu_y * mu_y
    sigma_xy = _filter(x * y, window) - mu_x * mu_y

    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * sigma_xy + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = sigma_xx + sigma_yy + SSIM_C2
    value = (a1 * a2) / (b1 * b2)
    return value, (mu_x, mu_y, a1, a2, b1, b2)


def ssim_loss(rendered, target):
    check_same_shape(rendered, target)
    height, width = rendered.shape[:2]
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise ImageShapeError(
            "image " + str((height, width)) +
            " is smaller than the ssim window " + str(SSIM_WINDOW))

    if rendered.ndim == 2:
        rendered = rendered[:, :, None]
        target = target[:, :, None]
        squeeze = True
    else:
        squeeze = False

    window = ssim_window()
    channels = rendered.shape[2]
    maps = []
    statistics = []
    for channel in range(channels):
        value, stats = ssim_map(
            rendered[:, :, channel], target[:, :, channel], window)
        maps.append(value)
        statistics.append(stats)

    count = sum(m.size for m in maps)
    loss = 1.0 - sum(m.sum() for m in maps) / count

    gradient = np.zeros(rendered.shape)
    for channel in range(channels):
        s = maps[channel]
        mu_x, mu_y, a1, a2, b1, b2 = statistics[channel]
        d_mu_x = s * (2.0 * mu_y / a1 - 2.0 * mu_y / a2 -
                      2.0 * mu_x / b1 + 2.0 * mu_x / b2)
        d_xx = -s / b2
        d_xy = 2.0 * s / a2
        x = rendered[:, :, channel]
        y = target[:, :, channel]
        gradient[:, :, channel] = -(
            _filter_adjoint(d_mu_x, window) +
            2.0 * x * _filter_adjoint(d_xx, window) +
            y * _filter_adjoint(d_xy, window)) / count

    if squeeze:
        gradient = gradient[:, :, 0]
    return loss, gradient


def bilaplacian_reg(vertices, laplacian, weight=1.0):
    matrix = getattr(laplacian, 'matrix', laplacian)
    lv = matrix @ vertices
    value = weight * np.sum(lv * lv)
    gradient = 2.0 * weight * (matrix.T @ lv)
    return value, gradient


def back_projected_points(depth, camera):
    x, y = camera.pixel_grid()
    rays = np.stack([x, y, np.ones(x.shape)], axis=-1)
    return depth[:, :, None] * rays, rays


def depth_to_normals(depth, camera):
    """
    camera space normals from central differences of the back projected
    depth map. returns (normals (H,W,3), valid (H,W)); border pixels and
    pixels next to empty depth are invalid and hold zero.
    """
    points, _ = back_projected_points(depth, camera)
    height, width = depth.shape
    normals = np.zeros((height, width, 3))
    valid = np.zeros((height, width), dtype=bool)
    if height < 3 or width < 3:
        return normals, valid

    d_dx = 0.5 * (points[1:-1, 2:] - points[1:-1, :-2])
    d_dy = 0.5 * (points[2:, 1:-1] - points[:-2, 1:-1])
    cross = np.cross(d_dy, d_dx)
    norm = np.linalg.norm(cross, axis=-1)

    filled = depth > 0
    interior = (filled[1:-1, 1:-1] & filled[1:-1, 2:] & filled[1:-1, :-2] &
                filled[2:, 1:-1] & filled[:-2, 1:-1] & (norm > 0))
    safe = np.where(interior, norm, 1.0)
    normals[1:-1, 1:-1] = np.where(
        interior[:, :, None], cross / safe[:, :, None], 0.0)
    valid[1:-1, 1:-1] = interior
    return normals, valid


def depth_to_normals_backward(depth, camera, grad_normals, valid):
    """
    gradient of a loss with respect to the depth map given its gradient
    with respect to the output of depth_to_normals
    """
    points, rays = back_projected_points(depth, camera)
    height, width = depth.shape
    grad_depth = np.zeros((height, width))
    if height < 3 or width < 3:
        return grad_depth

    d_dx = 0.5 * (points[1:-1, 2:] - points[1:-1, :-2])
    d_dy = 0.5 * (points[2:, 1:-1] - points[:-2, 1:-1])
    cross = np.cross(d_dy, d_dx)
    inner = valid[1:-1, 1:-1]
    grad_out = np.where(inner[:, :, None], grad_normals[1:-1, 1:-1], 0.0)
    safe_cross = np.where(inner[:, :, None], cross, 1.0)

    grad_cross = np.where(
        inner[:, :, None], normalize_backward(safe_cross, grad_out), 0.0)
    grad_dy, grad_dx = cross_backward(d_dy, d_dx, grad_cross)

    grad_points = np.zeros((height, width, 3))
    grad_points[1:-1, 2:] += 0.5 * grad_dx
    grad_points[1:-1, :-2] -= 0.5 * grad_dx
    grad_points[2:, 1:-1] += 0.5 * grad_dy
    grad_points[:-2, 1:-1] -= 0.5 * grad_dy

    grad_depth = np.sum(grad_points * rays, axis=-1)
    return grad_depth


def normal_consistency_loss(rendered_normals, reference_normals, alpha):
    """
    returns (value, grad_rendered, grad_reference). rendered normals are
    the alpha weighted image of the renderer and are normalized here.
    """
    check_same_shape(rendered_normals, reference_normals)
    rendered_norm = np.linalg.norm(rendered_normals, axis=-1)
    reference_norm = np.linalg.norm(reference_normals, axis=-1)
    valid = (alpha > ALPHA_MASK) & (rendered_norm > 0) & (reference_norm > 0)
    count = int(np.count_nonzero(valid))

    grad_rendered = np.zeros(rendered_normals.shape)
    grad_reference = np.zeros(reference_normals.shape)
    if count == 0:
        log_message("normal loss has no valid pixels")
        return 0.0, grad_rendered, grad_reference

    rendered = rendered_normals[valid]
    reference = reference_normals[valid]
    rendered_unit = rendered / rendered_norm[valid][:, None]
    reference_unit = reference / reference_norm[valid][:, None]
    dots = np.sum(rendered_unit * reference_unit, axis=-1)
    value = np.mean(1.0 - dots)

    grad_rendered[valid] = normalize_backward(
        rendered, -reference_unit / count)
    grad_reference[valid] = normalize_backward(
        reference, -rendered_unit / count)
    return value, grad_rendered, grad_reference


def depth_distortion_loss(tape):
    """
    returns (value, grad_weight, grad_depth), the gradients per
    contributor in tape order. contributors are sorted by depth within
    each pixel so the double sum reduces to prefix sums.
    """
    camera = tape.camera
    number_of_pixels = camera.number_of_pixels
    count = len(tape.splat)
    if count == 0:
        return 0.0, np.zeros(0), np.zeros(0)

    shape = (tape.number_of_rows, tape.depth_complexity)
    dense_w = np.zeros(shape)
    dense_wz = np.zeros(shape)
    dense_w[tape.row, tape.rank] = tape.weight
    dense_wz[tape.row, tape.rank] = tape.weight * tape.depth

    inclusive_w = np.cumsum(dense_w, axis=1)
    inclusive_wz = np.cumsum(dense_wz, axis=1)
    before_w = (inclusive_w - dense_w)[tape.row, tape.rank]
    before_wz = (inclusive_wz - dense_wz)[tape.row, tape.rank]
    after_w = inclusive_w[tape.row, -1] - inclusive_w[tape.row, tape.rank]
    after_wz = inclusive_wz[tape.row, -1] - inclusive_wz[tape.row, tape.rank]

    z = tape.depth
    w = tape.weight
    pair = z * before_w - before_wz + after_wz - z * after_w
    value = np.sum(w * pair) / number_of_pixels
    grad_weight = 2.0 * pair / number_of_pixels
    grad_depth = 2.0 * w * (before_w - after_w) / number_of_pixels
    return value, grad_weight, grad_depth


def combine_losses(
        output,
        target,
        weights,
        active_terms,
        camera=None,
        vertices=None,
        laplacian=None,
        reference_normals=None):
    """
    evaluates the active terms for one rendered view and returns a
    LossReport holding weighted ImageGradients for the renderer reverse
    pass and the regularizer gradient for the template vertices
    """
    report = LossReport(weights)
    height, width = output.color.shape[:2]
    gradients = ImageGradients.zeros(height, width)

    if 'photo' in active_terms:
        value, gradient = photo_loss(output.color, target)
        report.set_term('photo', value)
        gradients.color += weights.photo * gradient

    if 'ssim' in active_terms:
        value, gradient = ssim_loss(output.color, target)
        report.set_term('ssim', value)
        gradients.color += weights.ssim * gradient

    if 'reg' in active_terms and vertices is not None:
        value, gradient = bilaplacian_reg(vertices, laplacian)
        report.set_term('reg', value)
        report.vertex_gradient = weights.reg * gradient

    if 'normal' in active_terms and output.normal is not None:
        if reference_normals is None:
            reference, valid = depth_to_normals(output.depth, camera)
            value, grad_rendered, grad_reference = normal_consistency_loss(
                output.normal, reference, output.alpha)
            gradients.depth += weights.normal * depth_to_normals_backward(
                output.depth, camera, grad_reference, valid)
        else:
            value, grad_rendered, _ = normal_consistency_loss(
                output.normal, reference_normals, output.alpha)
        report.set_term('normal', value)
        gradients.normal += weights.normal * grad_rendered

    if 'dist' in active_terms:
        value, grad_weight, grad_depth = depth_distortion_loss(output.tape)
        report.set_term('dist', value)
        gradients.contributor_weight = weights.dist * grad_weight
        gradients.contributor_depth = weights.dist * grad_depth

    report.image_gradients = gradients
    return report

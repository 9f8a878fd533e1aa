import time
import numpy as np

from AnchorSplat.constants import ProbeError
from AnchorSplat.rasterizer import (
    energy_uvd_gradient,
    energy_position_gradient,
    projection_jacobian,
    invert_2x2
)
from AnchorSplat.report_generator import ReportGenerator
from AnchorSplat.logging import log_message

"""
Executable checks of the camera space positional gradient of the
gaussian energy E(p) = 1/2 r^T Lambda^-1 r, r = mu(p) - x.

All probes live in camera coordinates without screen space blur, where
dE/dd = (2/d) E holds exactly. Every analytic derivative comes from
rasterizer.energy_position_gradient, the same code the renderer reverse
pass runs.

Properties:

    finite differences   analytic grad vs central differences, rel 1e-5
    depth identity       dE/dd - (2/d) E, abs 1e-12
    rank                 SPD covariance: gradients for many means at one
                         pixel span 3d, sigma_min/sigma_max > 1e-6
    fixed plane          flat covariance: n . grad / |grad| < 1e-9 with
                         n = (x, y, 1)
    richardson slope     E(p + h dp) - E(p) - h grad.dp is O(h^2)
    eta consistency      h3/Z = c^T G r
    G bound              |G(mu) - G(x)| / |r| stays finite
"""

RANK_THRESHOLD = 1e-6
PLANE_THRESHOLD = 1e-9
FINITE_DIFFERENCE_THRESHOLD = 1e-5
DEPTH_IDENTITY_THRESHOLD = 1e-12
ETA_THRESHOLD = 1e-12
SLOPE_TOLERANCE = 0.1
NO_BLUR = np.zeros((2, 2))


def energy(covariance, position, pixel, blur_matrix=NO_BLUR):
    return energy_uvd_gradient(covariance, position, pixel, blur_matrix)[0]


def random_spd(rng):
    a = rng.uniform(-1.0, 1.0, (3, 3))
    return a @ a.T + 0.01 * np.eye(3)


def random_flat(rng):
    a = rng.uniform(-1.0, 1.0, (2, 2))
    covariance = np.zeros((3, 3))
    covariance[:2, :2] = a @ a.T + 0.01 * np.eye(2)
    return covariance


def sample_residual(image_covariance, rng):
    """
    uniform sample of the 3 sigma screen disc of the given 2x2 covariance
    """
    factor = np.linalg.cholesky(image_covariance)
    radius = 3.0 * np.sqrt(rng.uniform())
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return factor @ (radius * np.array([np.cos(angle), np.sin(angle)]))


def image_covariance(covariance, position, blur_matrix=NO_BLUR):
    jacobian = projection_jacobian(position)
    return jacobian @ covariance @ jacobian.T + blur_matrix


class GradientProbe:
    """
    one (covariance, camera space mean, pixel) configuration together
    with the quantities of the differential identity:

        g = Lambda^-1 r, h = Sigma J^T g, eta = h3 / Z,
        M(mu) = [[1, 0, -u], [0, 1, -v]], G(mu) = (M Sigma M^T)^-1,
        c(mu) = M Sigma e3, so that eta = c^T G r
    """

    def __init__(self, covariance, position, pixel, blur_matrix=NO_BLUR):
        self.covariance = np.array(covariance, dtype=float)
        self.position = np.array(position, dtype=float)
        self.pixel = np.array(pixel, dtype=float)
        self.blur_matrix = np.array(blur_matrix, dtype=float)

        (self.energy, self.d_uvd, self.g, self.h,
         self.jtg) = energy_uvd_gradient(
             self.covariance, self.position, self.pixel, self.blur_matrix)

        z = self.position[2]
        self.depth = z
        self.mu = self.position[:2] / z
        self.residual = self.mu - self.pixel
        self.eta = self.h[2] / z
        self.M = self.plane_matrix(self.mu)
        self.G = self.plane_inverse(self.mu)
        self.c = self.M @ self.covariance[:, 2]

    @staticmethod
    def plane_matrix(point):
        return np.array([
            [1.0, 0.0, -point[0]],
            [0.0, 1.0, -point[1]]])

    def plane_inverse(self, point):
        m = self.plane_matrix(point)
        return invert_2x2(m @ self.covariance @ m.T)

    @classmethod
    def random(cls, rng, flat=False):
        covariance = random_flat(rng) if flat else random_spd(rng)
        z = rng.uniform(0.5, 5.0)
        u, v = rng.uniform(-0.5, 0.5, 2)
        position = np.array([u * z, v * z, z])
        residual = sample_residual(
            image_covariance(covariance, position), rng)
        return cls(covariance, position, np.array([u, v]) - residual)

    def h_consistency_error(self):
        jacobian = projection_jacobian(self.position)
        h = self.covariance @ (jacobian.T @ self.g)
        return abs(h[2] - self.h[2])

    def eta_error(self):
        return abs(self.eta - self.c @ self.G @ self.residual)


def duvd_derivatives(probe):
    return probe.d_uvd


def dxyz_derivatives(probe):
    return energy_position_gradient(
        probe.covariance, probe.position, probe.pixel, probe.blur_matrix)[1]


def finite_difference_gradient(probe, step=None):
    if step is None:
        step = 1e-5 * probe.depth
    gradient = np.zeros(3)
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = step
        forward = energy(probe.covariance, probe.position + offset,
                         probe.pixel, probe.blur_matrix)
        backward = energy(probe.covariance, probe.position - offset,
                          probe.pixel, probe.blur_matrix)
        gradient[axis] = (forward - backward) / (2.0 * step)
    return gradient


def finite_difference_error(probe):
    analytic = dxyz_derivatives(probe)
    numeric = finite_difference_gradient(probe)
    return np.linalg.norm(analytic - numeric) / max(
        np.linalg.norm(analytic), 1e-8)


def depth_identity_error(probe):
    return abs(probe.d_uvd[2] - 2.0 * probe.energy / probe.depth)


def sample_means_at_pixel(covariance, position, pixel, count, rng):
    """
    count camera space means whose projections fall in the 3 sigma disc
    around the fixed pixel, at depths within 50% of the given one
    """
    means = np.zeros((count, 3))
    for k in range(count):
        z = position[2] * rng.uniform(0.5, 1.5)
        center = np.array([pixel[0] * z, pixel[1] * z, z])
        residual = sample_residual(
            image_covariance(covariance, center), rng)
        mu = pixel + residual
        means[k] = [mu[0] * z, mu[1] * z, z]
    return means


def nondegeneracy_test(covariance, position, sample_count, rng, pixel=None):
    """
    smallest over largest singular value of the 3 x K matrix of
    positional gradients at one pixel for K means around position.
    The pixel and covariance stay fixed. What is sampled is the mean:
    its depth uniformly within 50% of position's, its projection
    uniformly in the 3 sigma disc around the pixel.
    K < 4 cannot tell a plane from full rank and is rejected.
    """
    if sample_count < 4:
        raise ProbeError(
            "rank test needs at least 4 samples, got " + str(sample_count))
    position = np.asarray(position, dtype=float)
    if pixel is None:
        pixel = position[:2] / position[2]

    for attempt in range(10):
        means = sample_means_at_pixel(
            covariance, position, pixel, sample_count, rng)
        pixels = np.broadcast_to(pixel, (sample_count, 2))
        gradients = energy_position_gradient(
            np.broadcast_to(covariance, (sample_count, 3, 3)),
            means, pixels, NO_BLUR)[1]
        singular_values = np.linalg.svd(gradients.T, compute_uv=False)
        if singular_values[0] > 0:
            return singular_values[-1] / singular_values[0]

    raise ProbeError("every sampled gradient vanished")


def degeneracy_plane_test(covariance, pixel, sample_count, rng, depth=2.0):
    """
    worst |n . grad| / |grad| over means sampled around a flat splat,
    n = (x, y, 1) for the fixed pixel x
    """
    pixel = np.asarray(pixel, dtype=float)
    normal = np.array([pixel[0], pixel[1], 1.0])
    position = np.array([pixel[0] * depth, pixel[1] * depth, depth])
    means = sample_means_at_pixel(
        covariance, position, pixel, sample_count, rng)
    pixels = np.broadcast_to(pixel, (sample_count, 2))
    gradients = energy_position_gradient(
        np.broadcast_to(covariance, (sample_count, 3, 3)),
        means, pixels, NO_BLUR)[1]

    norms = np.linalg.norm(gradients, axis=1)
    violation = np.abs(gradients @ normal)
    ratio = np.where(norms > 0, violation / np.where(norms > 0, norms, 1.0), 0.0)
    return ratio.max()


def richardson_slope(probe, rng, relative_step=1e-4, directions=3):
    """
    observed order of the first order Taylor remainder from steps h and
    h/2. A direction along which the curvature happens to vanish shows
    order 3, so the best of a few random directions is returned.
    """
    slopes = [_directional_slope(probe, rng, relative_step)
              for _ in range(directions)]
    return min(slopes, key=lambda s: abs(s - 2.0))


def _directional_slope(probe, rng, relative_step):
    direction = rng.standard_normal(3)
    direction = direction / np.linalg.norm(direction)
    length = probe.depth * np.sqrt(np.trace(
        image_covariance(probe.covariance, probe.position)))
    step = relative_step * length
    gradient = dxyz_derivatives(probe)

    def remainder(h):
        shifted = energy(probe.covariance, probe.position + h * direction,
                         probe.pixel, probe.blur_matrix)
        return abs(shifted - probe.energy - h * (gradient @ direction))

    coarse = remainder(step)
    fine = remainder(0.5 * step)
    if coarse == 0.0 or fine == 0.0:
        return 2.0
    return np.log2(coarse / fine)


def plane_inverse_ratio(probe):
    """
    |G(mu) - G(x)| / |r| for the probe
    """
    norm = np.linalg.norm(probe.residual)
    if norm == 0.0:
        return 0.0
    difference = probe.G - probe.plane_inverse(probe.pixel)
    return np.linalg.norm(difference) / norm


class PropertyResult:

    def __init__(self, name, trials, worst, threshold, passed):
        self.name = name
        self.trials = trials
        self.worst = worst
        self.threshold = threshold
        self.passed = passed


class GradientReport:

    def __init__(self):
        self.results = []
        self.runtime = 0.0

    def add(self, name, trials, worst, threshold, passed):
        self.results.append(
            PropertyResult(name, trials, worst, threshold, passed))

    def all_passed(self):
        return all(result.passed for result in self.results)

    def write(self, path):
        report = ReportGenerator(path, title="gradient checks")
        for result in self.results:
            report.emit_property(
                result.name,
                result.trials,
                result.worst,
                result.threshold,
                result.passed)
        report.emit_newline()
        report.emit_text("runtime: " + ("%.2f" % self.runtime) + " s")
        report.emit_text("overall: " + ("PASS" if self.all_passed() else "FAIL"))
        report.finished()


def run_gradient_checks(trials=1000, seed=0, rank_samples=20):
    start = time.time()
    rng = np.random.default_rng(seed)
    report = GradientReport()

    log_message("running gradient checks with", trials, "trials")

    probes = [GradientProbe.random(rng) for _ in range(trials)]
    flat_probes = [GradientProbe.random(rng, flat=True) for _ in range(trials)]

    fd_errors = [finite_difference_error(p) for p in probes]
    worst = max(fd_errors)
    report.add("finite differences", trials, worst,
               FINITE_DIFFERENCE_THRESHOLD, worst < FINITE_DIFFERENCE_THRESHOLD)

    identity_errors = [depth_identity_error(p) for p in probes + flat_probes]
    worst = max(identity_errors)
    report.add("depth identity", len(identity_errors), worst,
               DEPTH_IDENTITY_THRESHOLD, worst <= DEPTH_IDENTITY_THRESHOLD)

    h_errors = [p.h_consistency_error() for p in probes]
    worst = max(h_errors)
    report.add("h consistency", trials, worst, 1e-12, worst <= 1e-12)

    ratios = [nondegeneracy_test(p.covariance, p.position, rank_samples, rng)
              for p in probes]
    worst = min(ratios)
    report.add("rank (spd, smallest ratio)", trials, worst,
               RANK_THRESHOLD, worst > RANK_THRESHOLD)

    violations = [
        degeneracy_plane_test(p.covariance, p.pixel, rank_samples, rng,
                              depth=p.depth)
        for p in flat_probes]
    worst = max(violations)
    report.add("fixed plane (flat)", trials, worst,
               PLANE_THRESHOLD, worst < PLANE_THRESHOLD)

    slopes = np.array([richardson_slope(p, rng) for p in probes])
    worst = np.abs(slopes - 2.0).max()
    report.add("richardson slope", trials, worst,
               SLOPE_TOLERANCE, worst <= SLOPE_TOLERANCE)

    eta_errors = [p.eta_error() / max(1.0, abs(p.eta)) for p in probes]
    worst = max(eta_errors)
    report.add("eta consistency", trials, worst,
               ETA_THRESHOLD, worst <= ETA_THRESHOLD)

    bound = np.array([plane_inverse_ratio(p) for p in probes])
    worst = bound.max()
    report.add("G perturbation bound", trials, worst,
               np.inf, bool(np.all(np.isfinite(bound))))

    report.runtime = time.time() - start
    log_message(
        "gradient checks finished in", "%.2f" % report.runtime, "s:",
        "PASS" if report.all_passed() else "FAIL")
    return report

import numpy as np
from AnchorSplat.constants import EPS_ANTIPODAL

"""
quaternion helpers. quaternions are scalar first (w, x, y, z) and every
function broadcasts over leading axes. The *_backward functions take the
gradient of a scalar loss with respect to the output and return the
gradient with respect to the input.
"""


def normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def normalize_backward(v, grad_out):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    y = v / norm
    radial = np.sum(y * grad_out, axis=-1, keepdims=True)
    return (grad_out - y * radial) / norm


def cross_backward(a, b, grad_out):
    """
    c = a x b. returns (grad_a, grad_b)
    """
    return np.cross(b, grad_out), np.cross(grad_out, a)


def quaternion_multiply(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw
    ], axis=-1)


def quaternion_multiply_backward(a, b, grad_out):
    gw, gx, gy, gz = (grad_out[..., 0], grad_out[..., 1],
                      grad_out[..., 2], grad_out[..., 3])
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]

    grad_a = np.stack([
        bw * gw + bx * gx + by * gy + bz * gz,
        -bx * gw + bw * gx - bz * gy + by * gz,
        -by * gw + bz * gx + bw * gy - bx * gz,
        -bz * gw - by * gx + bx * gy + bw * gz
    ], axis=-1)

    grad_b = np.stack([
        aw * gw + ax * gx + ay * gy + az * gz,
        -ax * gw + aw * gx + az * gy - ay * gz,
        -ay * gw - az * gx + aw * gy + ax * gz,
        -az * gw + ay * gx - ax * gy + aw * gz
    ], axis=-1)

    return grad_a, grad_b


def quaternion_conjugate(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quaternion_to_rotation(q):
    """
    rotation matrix of a unit quaternion. The formula assumes |q| = 1,
    callers normalize first.
    """
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rotation = np.empty(q.shape[:-1] + (3, 3))
    rotation[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rotation[..., 0, 1] = 2 * (x * y - w * z)
    rotation[..., 0, 2] = 2 * (x * z + w * y)
    rotation[..., 1, 0] = 2 * (x * y + w * z)
    rotation[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rotation[..., 1, 2] = 2 * (y * z - w * x)
    rotation[..., 2, 0] = 2 * (x * z - w * y)
    rotation[..., 2, 1] = 2 * (y * z + w * x)
    rotation[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rotation


def quaternion_to_rotation_backward(q, grad_rotation):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    g = grad_rotation

    grad_w = 2 * (- z * g[..., 0, 1] + y * g[..., 0, 2]
                  + z * g[..., 1, 0] - x * g[..., 1, 2]
                  - y * g[..., 2, 0] + x * g[..., 2, 1])

    grad_x = (2 * (y * g[..., 0, 1] + z * g[..., 0, 2]
                   + y * g[..., 1, 0] - w * g[..., 1, 2]
                   + z * g[..., 2, 0] + w * g[..., 2, 1])
              - 4 * x * (g[..., 1, 1] + g[..., 2, 2]))

    grad_y = (2 * (x * g[..., 0, 1] + w * g[..., 0, 2]
                   + x * g[..., 1, 0] + z * g[..., 1, 2]
                   - w * g[..., 2, 0] + z * g[..., 2, 1])
              - 4 * y * (g[..., 0, 0] + g[..., 2, 2]))

    grad_z = (2 * (- w * g[..., 0, 1] + x * g[..., 0, 2]
                   + w * g[..., 1, 0] + y * g[..., 1, 2]
                   + x * g[..., 2, 0] + y * g[..., 2, 1])
              - 4 * z * (g[..., 0, 0] + g[..., 1, 1]))

    return np.stack([grad_w, grad_x, grad_y, grad_z], axis=-1)


def rotation_to_quaternion(rotation):
    """
    inverse of quaternion_to_rotation for proper rotations (Shepperd's
    method), broadcasting over leading axes. Returns the representative
    with w >= 0.
    """
    m = np.asarray(rotation, dtype=float)
    m00, m11, m22 = m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]
    trace = m00 + m11 + m22

    # one candidate per pivot, each well conditioned when its pivot is largest
    candidates = np.stack([
        np.stack([
            1.0 + trace,
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1]], axis=-1),
        np.stack([
            m[..., 2, 1] - m[..., 1, 2],
            1.0 + m00 - m11 - m22,
            m[..., 0, 1] + m[..., 1, 0],
            m[..., 0, 2] + m[..., 2, 0]], axis=-1),
        np.stack([
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 0, 1] + m[..., 1, 0],
            1.0 + m11 - m00 - m22,
            m[..., 1, 2] + m[..., 2, 1]], axis=-1),
        np.stack([
            m[..., 1, 0] - m[..., 0, 1],
            m[..., 0, 2] + m[..., 2, 0],
            m[..., 1, 2] + m[..., 2, 1],
            1.0 + m22 - m00 - m11], axis=-1)
    ], axis=-2)

    pivot = np.argmax(np.stack([trace, m00, m11, m22], axis=-1), axis=-1)
    q = np.take_along_axis(
        candidates, pivot[..., None, None], axis=-2)[..., 0, :]
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., 0:1] < 0, -q, q)


def axis_angle_quaternion(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def face_frame_quaternion(normal):
    """
    quaternion rotating (0,0,1) onto the unit vector normal:
    q = normalize(1 + n_z, -n_y, n_x, 0). When n is (numerically)
    (0,0,-1) we return the pi rotation about x, (0,1,0,0).
    """
    normal = np.asarray(normal, dtype=float)
    raw = np.stack([
        1.0 + normal[..., 2],
        -normal[..., 1],
        normal[..., 0],
        np.zeros(normal.shape[:-1])
    ], axis=-1)

    antipodal = np.abs(raw[..., 0]) < EPS_ANTIPODAL
    raw[antipodal] = np.array([0.0, 1.0, 0.0, 0.0])
    return normalize(raw)


def face_frame_quaternion_backward(normal, grad_quaternion):
    normal = np.asarray(normal, dtype=float)
    raw = np.stack([
        1.0 + normal[..., 2],
        -normal[..., 1],
        normal[..., 0],
        np.zeros(normal.shape[:-1])
    ], axis=-1)

    antipodal = np.abs(raw[..., 0]) < EPS_ANTIPODAL
    raw[antipodal] = np.array([0.0, 1.0, 0.0, 0.0])
    grad_raw = normalize_backward(raw, grad_quaternion)
    grad_raw[antipodal] = 0.0

    return np.stack([
        grad_raw[..., 2],
        -grad_raw[..., 1],
        grad_raw[..., 0]
    ], axis=-1)

import numpy as np
from monty.json import MSONable
from monty.serialization import dumpfn, loadfn

from AnchorSplat.constants import CameraError


class Camera(MSONable):
    """
    pinhole camera. world to camera is p_c = R p_w + t, the camera looks
    down +Z, image x points right and image y points down. The centre
    of pixel (row i, column j) is at (j + 0.5, i + 0.5).
    """

    def __init__(
            self,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height):

        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.rotation = np.array(rotation, dtype=float).reshape(3, 3)
        self.translation = np.array(translation, dtype=float).reshape(3)
        self.width = int(width)
        self.height = int(height)
        self.validate()

    def validate(self):
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError(
                "focal lengths must be positive, got " +
                str((self.fx, self.fy)))
        if self.width <= 0 or self.height <= 0:
            raise CameraError(
                "bad image size " + str((self.width, self.height)))
        error = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if error > 1e-6:
            raise CameraError(
                "rotation is not orthonormal (error " + str(error) + ")")

    @property
    def center(self):
        return - self.rotation.T @ self.translation

    @property
    def number_of_pixels(self):
        return self.width * self.height

    def world_to_camera(self, points):
        return points @ self.rotation.T + self.translation

    def camera_to_world_direction(self, vectors):
        return vectors @ self.rotation

    def project(self, points):
        """
        world points to continuous pixel coordinates (x, y) and camera Z
        """
        camera_points = self.world_to_camera(points)
        z = camera_points[..., 2]
        x = self.fx * camera_points[..., 0] / z + self.cx
        y = self.fy * camera_points[..., 1] / z + self.cy
        return x, y, z

    def pixel_coordinates(self, pixel_ids):
        """
        normalized image plane coordinates of pixel centres
        """
        rows = pixel_ids // self.width
        cols = pixel_ids % self.width
        x = (cols + 0.5 - self.cx) / self.fx
        y = (rows + 0.5 - self.cy) / self.fy
        return x, y

    def pixel_grid(self):
        """
        (H, W) arrays of normalized coordinates of every pixel centre
        """
        x = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        y = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        return np.meshgrid(x, y)

    def blur_matrix(self, blur):
        """
        dilation of `blur` pixels squared on the normalized plane
        """
        return np.diag([blur / self.fx ** 2, blur / self.fy ** 2])

    def to_record(self):
        return {
            'fx': self.fx,
            'fy': self.fy,
            'cx': self.cx,
            'cy': self.cy,
            'R': self.rotation.ravel().tolist(),
            't': self.translation.tolist(),
            'width': self.width,
            'height': self.height}

    @classmethod
    def from_record(cls, record):
        try:
            return cls(
                record['fx'],
                record['fy'],
                record['cx'],
                record['cy'],
                record['R'],
                record['t'],
                record['width'],
                record['height'])
        except KeyError as e:
            raise CameraError("camera record is missing " + str(e))

    def as_dict(self):
        d = self.to_record()
        d['rotation'] = d.pop('R')
        d['translation'] = d.pop('t')
        d['@module'] = type(self).__module__
        d['@class'] = type(self).__name__
        return d

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, cx, cy, width, height):
        eye = np.asarray(eye, dtype=float)
        forward = np.asarray(target, dtype=float) - eye
        forward = forward / np.linalg.norm(forward)
        up = np.asarray(up, dtype=float)

        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-8:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
            if np.linalg.norm(right) < 1e-8:
                right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)

        rotation = np.stack([right, down, forward])
        translation = - rotation @ eye
        return cls(fx, fy, cx, cy, rotation, translation, width, height)


def focal_from_fov(width, fov_degrees):
    return 0.5 * width / np.tan(np.radians(fov_degrees) / 2.0)


def fibonacci_cameras(
        count,
        radius,
        center=(0.0, 0.0, 0.0),
        width=128,
        height=128,
        fov_degrees=40.0,
        offset=0.0):
    """
    cameras on a Fibonacci lattice of the sphere of the given radius,
    all looking at center. offset shifts the lattice so held out views
    do not coincide with training views.
    """
    center = np.asarray(center, dtype=float)
    golden_angle = np.pi * (3.0 - np.sqrt(5.0))
    focal = focal_from_fov(width, fov_degrees)
    cameras = []
    for i in range(count):
        y = 1.0 - 2.0 * (i + 0.5) / count
        r = np.sqrt(max(0.0, 1.0 - y * y))
        phi = (i + offset) * golden_angle
        direction = np.array([r * np.cos(phi), y, r * np.sin(phi)])
        cameras.append(Camera.look_at(
            center + radius * direction,
            center,
            (0.0, 1.0, 0.0),
            focal, focal,
            width / 2.0, height / 2.0,
            width, height))
    return cameras


def load_cameras(path):
    records = loadfn(path)
    if not isinstance(records, list):
        raise CameraError(str(path) + " is not a JSON array of cameras")
    return [Camera.from_record(record) for record in records]


def dump_cameras(cameras, path):
    dumpfn([camera.to_record() for camera in cameras], path, indent=2)

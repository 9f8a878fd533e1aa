import numpy as np
from PIL import Image

from AnchorSplat.constants import MalformedInputError
from AnchorSplat.logging import log_message


def linear_to_srgb(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(
        x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(x):
    x = np.clip(x, 0.0, 1.0)
    return np.where(
        x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png(path, image, srgb=True):
    """
    8 bit PNG of a linear float image in [0, 1]. With srgb the colour
    channels are gamma encoded, an alpha channel never is.
    """
    image = np.asarray(image, dtype=float)
    encoded = np.clip(image, 0.0, 1.0)
    if srgb:
        encoded = encoded.copy()
        if encoded.ndim == 2:
            encoded = linear_to_srgb(encoded)
        else:
            encoded[..., 0:3] = linear_to_srgb(encoded[..., 0:3])
    Image.fromarray(np.round(encoded * 255.0).astype(np.uint8)).save(str(path))


def read_png(path, srgb=True):
    with Image.open(str(path)) as handle:
        image = np.asarray(handle, dtype=float) / 255.0
    if srgb:
        if image.ndim == 2:
            image = srgb_to_linear(image)
        else:
            image = image.copy()
            image[..., 0:3] = srgb_to_linear(image[..., 0:3])
    return image


def write_pfm(path, image):
    """
    little endian portable float map, rows stored bottom to top
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = 'Pf'
    elif image.ndim == 3 and image.shape[2] == 3:
        header = 'PF'
    else:
        raise MalformedInputError(
            "PFM images are (H, W) or (H, W, 3), got " + str(image.shape))

    height, width = image.shape[0], image.shape[1]
    with open(path, 'wb') as f:
        f.write((header + '\n' + str(width) + ' ' + str(height) + '\n-1.0\n')
                .encode('ascii'))
        f.write(np.ascontiguousarray(image[::-1]).astype('<f4').tobytes())


def _read_token(f):
    token = b''
    while True:
        c = f.read(1)
        if c == b'':
            break
        if c.isspace():
            if token:
                break
            continue
        token += c
    return token.decode('ascii')


def read_pfm(path):
    with open(path, 'rb') as f:
        header = _read_token(f)
        if header not in ('PF', 'Pf'):
            raise MalformedInputError(str(path) + " is not a PFM file")
        try:
            width = int(_read_token(f))
            height = int(_read_token(f))
            scale = float(_read_token(f))
        except ValueError:
            raise MalformedInputError(str(path) + " has a malformed PFM header")
        data = f.read()

    channels = 3 if header == 'PF' else 1
    dtype = '<f4' if scale < 0 else '>f4'
    values = np.frombuffer(data, dtype=dtype)
    if len(values) != width * height * channels:
        raise MalformedInputError(
            str(path) + " holds " + str(len(values)) + " floats, expected " +
            str(width * height * channels))

    shape = (height, width, 3) if channels == 3 else (height, width)
    return values.reshape(shape)[::-1].astype(float)


def bilinear_sample(image, x, y):
    """
    sample image at continuous (column, row) index coordinates, clamped
    to the border
    """
    image = np.asarray(image)
    height, width = image.shape[0], image.shape[1]
    x = np.clip(np.asarray(x, dtype=float), 0.0, width - 1.0)
    y = np.clip(np.asarray(y, dtype=float), 0.0, height - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), width - 2) if width > 1 else np.zeros_like(x, dtype=np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), height - 2) if height > 1 else np.zeros_like(y, dtype=np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = (1.0 - fx) * image[y0, x0] + fx * image[y0, x1]
    bottom = (1.0 - fx) * image[y1, x0] + fx * image[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def save_render(path, color, alpha=None):
    """
    PNG of a rendered linear image, RGBA when alpha is given
    """
    if alpha is not None:
        color = np.concatenate([color, alpha[..., None]], axis=-1)
    log_message("writing " + str(path))
    write_png(path, color, srgb=True)

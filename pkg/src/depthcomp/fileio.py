"""On-disk formats: calibration text, 16-bit depth PGM, 8-bit RGB PPM, xyz point text."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DepthRangeError, HeaderError, MissingFileError, PayloadLengthError
from .geometry import CameraIntrinsics, DepthImage, PointCloud, round_half_up

CALIB_KEYS = ("fx", "fy", "cx", "cy", "width", "height")
MAX_DEPTH_MM = 65535


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, "file not found")
    return path.read_bytes()


def write_calibration(path, K: CameraIntrinsics) -> None:
    lines = [f"{key}={getattr(K, key)!r}" for key in CALIB_KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_calibration(path) -> CameraIntrinsics:
    text = _read_bytes(path).decode("utf-8")
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in CALIB_KEYS:
            raise HeaderError(path, f"line {lineno}: expected key=value with key in {CALIB_KEYS}")
        try:
            values[key] = float(value)
        except ValueError:
            raise HeaderError(path, f"line {lineno}: {value!r} is not a number") from None
    missing = [k for k in CALIB_KEYS if k not in values]
    if missing:
        raise HeaderError(path, f"missing calibration keys {missing}")
    for k in ("width", "height"):
        if values[k] != int(values[k]):
            raise HeaderError(path, f"{k} must be an integer")
        values[k] = int(values[k])
    return CameraIntrinsics(**values)


def _parse_pnm_header(path, raw: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload offset) of a binary PNM file."""
    tokens: list[bytes] = []
    pos = 0
    n = len(raw)
    while len(tokens) < 4:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise HeaderError(path, "truncated header")
        tokens.append(raw[start:pos])
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise HeaderError(path, "header must end with a single whitespace byte")
    pos += 1
    if tokens[0] != magic:
        raise HeaderError(path, f"expected magic {magic.decode()}, found {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise HeaderError(path, "non-integer width, height or maxval") from None
    if width <= 0 or height <= 0:
        raise HeaderError(path, f"invalid extents {width}x{height}")
    return width, height, maxval, pos


def depth_to_mm(depth: DepthImage, path="<depth>") -> np.ndarray:
    mm = round_half_up(depth.values * 1000.0)
    if mm.max(initial=0) > MAX_DEPTH_MM:
        raise DepthRangeError(
            path, f"depth {depth.values.max():.3f} m exceeds the 16-bit millimeter range"
        )
    return mm.astype(np.uint16)


def encode_depth_pgm(depth: DepthImage, path="<depth>") -> bytes:
    mm = depth_to_mm(depth, path)
    header = f"P5\n{depth.width} {depth.height}\n{MAX_DEPTH_MM}\n".encode("ascii")
    return header + mm.astype(">u2").tobytes()


def write_depth_pgm(path, depth: DepthImage) -> None:
    data = encode_depth_pgm(depth, path)
    Path(path).write_bytes(data)


def read_depth_pgm(path) -> DepthImage:
    raw = _read_bytes(path)
    width, height, maxval, off = _parse_pnm_header(path, raw, b"P5")
    if maxval != MAX_DEPTH_MM:
        raise HeaderError(path, f"depth maps need maxval {MAX_DEPTH_MM}, found {maxval}")
    expected = width * height * 2
    payload = raw[off:]
    if len(payload) != expected:
        raise PayloadLengthError(path, f"expected {expected} payload bytes, found {len(payload)}")
    mm = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return DepthImage(mm.astype(np.float64) / 1000.0)


def write_rgb_ppm(path, rgb: np.ndarray) -> None:
    """``rgb`` is ``3 x H x W`` in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"rgb must be 3 x H x W, got {rgb.shape}")
    q = np.clip(round_half_up(rgb * 255.0), 0, 255).astype(np.uint8)
    _, h, w = rgb.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.transpose(1, 2, 0).tobytes())


def read_rgb_ppm(path) -> np.ndarray:
    raw = _read_bytes(path)
    width, height, maxval, off = _parse_pnm_header(path, raw, b"P6")
    if maxval != 255:
        raise HeaderError(path, f"color images need maxval 255, found {maxval}")
    payload = raw[off:]
    expected = width * height * 3
    if len(payload) != expected:
        raise PayloadLengthError(path, f"expected {expected} payload bytes, found {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return img.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_point_cloud(path, cloud: PointCloud) -> None:
    lines = [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_point_cloud(path) -> PointCloud:
    text = _read_bytes(path).decode("utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise HeaderError(path, f"line {lineno}: expected 'x y z'")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise HeaderError(path, f"line {lineno}: non-numeric coordinate") from None
    return PointCloud(np.array(rows).reshape(-1, 3))

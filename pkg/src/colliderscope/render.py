"""Deterministic rasterization of events into 224x224 RGB circumference images.

Each object becomes a 1-pixel-thick circle outline: centered at its
(eta, phi) position, radius = scale * ln(size variable), colored by object
kind.  MET is drawn at eta = 0.  Rendering is a pure function of
(event, spec); the PNG encoder is hand-rolled so output bytes are stable
across platforms.
"""

from __future__ import annotations

import enum
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .kinematics import Event, ObjectKind, PhysicsObject, object_four_vector

log = logging.getLogger(__name__)

# ImageTensor: height x width x 3 uint8 array
ImageTensor = np.ndarray

DEFAULT_COLORS = {
    ObjectKind.ELECTRON: (0, 0, 255),
    ObjectKind.MUON: (0, 200, 0),
    ObjectKind.JET: (255, 120, 120),
    ObjectKind.BJET: (150, 0, 0),
    ObjectKind.MET: (0, 0, 0),
}

# later kinds overwrite earlier ones where outlines overlap
DRAW_ORDER = (ObjectKind.MET, ObjectKind.JET, ObjectKind.BJET,
              ObjectKind.ELECTRON, ObjectKind.MUON)


class SizeVariable(enum.Enum):
    ENERGY = "energy"
    TRANSVERSE_MOMENTUM = "pt"


@dataclass(frozen=True)
class CanvasSpec:
    """Rendering configuration for the event canvas."""

    width: int = 224
    height: int = 224
    scale_c: float = 10.5
    eta_range: tuple[float, float] = (-3.0, 3.0)
    phi_range: tuple[float, float] = (-math.pi, math.pi)
    min_radius: int = 1
    color_map: dict[ObjectKind, tuple[int, int, int]] = field(
        default_factory=lambda: dict(DEFAULT_COLORS))
    background: tuple[int, int, int] = (255, 255, 255)
    size_variable: SizeVariable = SizeVariable.ENERGY

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("canvas dimensions must be positive")
        if self.scale_c <= 0:
            raise ValueError("scale_c must be positive")
        if self.min_radius < 1:
            raise ValueError("min_radius must be >= 1")
        for kind, color in self.color_map.items():
            if tuple(color) == tuple(self.background):
                raise ValueError(
                    f"color for {kind.value} collides with the background")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "scale_c": self.scale_c,
            "eta_range": list(self.eta_range),
            "phi_range": list(self.phi_range),
            "min_radius": self.min_radius,
            "color_map": {k.value: list(v) for k, v in self.color_map.items()},
            "background": list(self.background),
            "size_variable": self.size_variable.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CanvasSpec":
        kwargs = {}
        for key in ("width", "height", "scale_c", "min_radius"):
            if key in d:
                kwargs[key] = d[key]
        if "eta_range" in d:
            kwargs["eta_range"] = tuple(d["eta_range"])
        if "phi_range" in d:
            kwargs["phi_range"] = tuple(d["phi_range"])
        if "color_map" in d:
            kwargs["color_map"] = {
                ObjectKind(k): tuple(v) for k, v in d["color_map"].items()}
        if "background" in d:
            kwargs["background"] = tuple(d["background"])
        if "size_variable" in d:
            kwargs["size_variable"] = SizeVariable(d["size_variable"])
        return cls(**kwargs)


def radius_for(value: float, spec: CanvasSpec) -> int:
    """Pixel radius for a size value: scale_c * ln(value), rounded
    half-away-from-zero and clamped below by min_radius.

    Raises
    ------
    ValueError
        If value is not positive (log undefined).
    """
    if value <= 0.0:
        raise ValueError(f"size value must be positive, got {value}")
    raw = spec.scale_c * math.log(value)
    rounded = math.floor(raw + 0.5) if raw >= 0 else math.ceil(raw - 0.5)
    return max(spec.min_radius, rounded)


def to_pixel(eta: float, phi: float, spec: CanvasSpec) -> tuple[int, int]:
    """Map (eta, phi) to integer pixel coordinates (x, y).

    x grows with eta, y with phi; out-of-range values clamp to the canvas
    edge.  floor-then-clamp puts the top of each range onto the last
    pixel row/column.
    """
    eta_lo, eta_hi = spec.eta_range
    phi_lo, phi_hi = spec.phi_range
    x = math.floor((eta - eta_lo) * spec.width / (eta_hi - eta_lo))
    y = math.floor((phi - phi_lo) * spec.height / (phi_hi - phi_lo))
    x = min(max(x, 0), spec.width - 1)
    y = min(max(y, 0), spec.height - 1)
    return x, y


def blank_canvas(spec: CanvasSpec) -> ImageTensor:
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
    canvas[:, :] = spec.background
    return canvas


def rasterize_circle(canvas: ImageTensor, center: tuple[int, int],
                     radius: int, color: tuple[int, int, int]) -> ImageTensor:
    """Draw a 1-pixel-thick circle outline in place and return the canvas.

    A pixel P is on the outline iff round(dist(P, center)) == radius.
    Since squared pixel distances are integers this is the exact integer
    test radius^2 - radius + 1 <= d^2 <= radius^2 + radius, evaluated
    only over the circle's bounding box.  Pixels outside the canvas are
    clipped; there is no wraparound at any edge.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    height, width = canvas.shape[:2]
    cx, cy = center
    x_lo = max(cx - radius, 0)
    x_hi = min(cx + radius, width - 1)
    y_lo = max(cy - radius, 0)
    y_hi = min(cy + radius, height - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return canvas
    xs = np.arange(x_lo, x_hi + 1, dtype=np.int64) - cx
    ys = np.arange(y_lo, y_hi + 1, dtype=np.int64) - cy
    d2 = ys[:, None] ** 2 + xs[None, :] ** 2
    ring = (d2 >= radius * radius - radius + 1) & (d2 <= radius * radius + radius)
    canvas[y_lo:y_hi + 1, x_lo:x_hi + 1][ring] = color
    return canvas


def _size_value(obj: PhysicsObject, spec: CanvasSpec) -> float:
    if obj.kind is ObjectKind.MET or \
            spec.size_variable is SizeVariable.TRANSVERSE_MOMENTUM:
        return obj.pt
    return object_four_vector(obj).E


def render_event(event: Event, spec: CanvasSpec) -> ImageTensor:
    """Render one event to an RGB tensor.

    One circumference per object, plus MET at eta = 0, drawn in a fixed
    kind order (MET, jets, b-jets, electrons, muons; list order within a
    kind) so overlaps resolve deterministically.  Objects whose size
    variable is not positive are skipped with a counted warning.
    """
    canvas = blank_canvas(spec)
    drawable = list(event.objects)
    if event.met is not None:
        drawable.append(event.met)
    skipped = 0
    for kind in DRAW_ORDER:
        for obj in drawable:
            if obj.kind is not kind:
                continue
            value = _size_value(obj, spec)
            if value <= 0.0:
                skipped += 1
                continue
            eta = 0.0 if obj.kind is ObjectKind.MET else obj.eta
            center = to_pixel(eta, obj.phi, spec)
            radius = radius_for(value, spec)
            color = spec.color_map[obj.kind]
            rasterize_circle(canvas, center, radius, color)
    if skipped:
        log.warning("event %s: skipped %d object(s) with non-positive size",
                    event.id, skipped)
    return canvas


# --- PNG codec -------------------------------------------------------------
#
# Minimal 8-bit RGB PNG writer/reader.  The writer always emits scanline
# filter 0 and a fixed zlib level so byte output is reproducible; the
# reader handles the five standard filters for non-interlaced RGB files.

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_png(image: ImageTensor) -> bytes:
    """Encode an HxWx3 uint8 tensor as a lossless PNG (deterministic bytes)."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected an HxWx3 uint8 tensor")
    height, width = image.shape[:2]
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + image[row].tobytes() for row in range(height))
    idat = zlib.compress(raw, 9)
    return (_PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat)
            + _chunk(b"IEND", b""))


def _unfilter_row(filter_type: int, row: np.ndarray, prev: np.ndarray,
                  bpp: int) -> np.ndarray:
    if filter_type == 0:
        return row
    out = row.astype(np.int32)
    if filter_type == 2:  # Up
        return ((out + prev) % 256).astype(np.uint8)
    for i in range(len(row)):
        left = out[i - bpp] if i >= bpp else 0
        up = int(prev[i])
        upleft = int(prev[i - bpp]) if i >= bpp else 0
        if filter_type == 1:  # Sub
            out[i] = (out[i] + left) % 256
        elif filter_type == 3:  # Average
            out[i] = (out[i] + (left + up) // 2) % 256
        elif filter_type == 4:  # Paeth
            p = left + up - upleft
            pa, pb, pc = abs(p - left), abs(p - up), abs(p - upleft)
            if pa <= pb and pa <= pc:
                pred = left
            elif pb <= pc:
                pred = up
            else:
                pred = upleft
            out[i] = (out[i] + pred) % 256
        else:
            raise ValueError(f"unsupported PNG filter type {filter_type}")
    return out.astype(np.uint8)


def decode_png(data: bytes) -> ImageTensor:
    """Decode an 8-bit RGB non-interlaced PNG back into an HxWx3 tensor."""
    if not data.startswith(_PNG_SIGNATURE):
        raise ValueError("not a PNG file")
    pos = len(_PNG_SIGNATURE)
    width = height = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        payload = data[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color_type, _, _, interlace = \
                struct.unpack(">IIBBBBB", payload)
            if depth != 8 or color_type != 2 or interlace != 0:
                raise ValueError("only 8-bit RGB non-interlaced PNG supported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if width is None:
        raise ValueError("missing IHDR chunk")
    raw = zlib.decompress(idat)
    stride = width * 3
    rows = []
    prev = np.zeros(stride, dtype=np.uint8)
    for r in range(height):
        offset = r * (stride + 1)
        filter_type = raw[offset]
        row = np.frombuffer(raw[offset + 1:offset + 1 + stride], dtype=np.uint8)
        prev = _unfilter_row(filter_type, row, prev, bpp=3)
        rows.append(prev)
    return np.stack(rows).reshape(height, width, 3)

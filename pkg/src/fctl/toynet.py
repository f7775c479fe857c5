"""A tiny convolutional detector with a three-level feature pyramid.

Inputs are standardized as (x - 0.5) / 0.25.  Architecture (all
activations leaky ReLU, slope 0.1)::

    stem   3x3 conv  3 -> 8,  stride 1      s   (W,   H)
    down1  3x3 conv  8 -> 8,  stride 2      c1  (W/2, H/2)
    down2  3x3 conv  8 -> 16, stride 2      c2  (W/4, H/4)
    lat2   1x1 conv 16 -> 8                 p2 = lat2(c2)
    lat1   1x1 conv  8 -> 8                 p1 = lat1(c1) + up2(p2)
    lat0   1x1 conv  8 -> 8                 p0 = lat0(s)  + up2(p1)
    head_k 1x1 conv  8 -> 1  per level      objectness logits

``up2`` is nearest-neighbour 2x upsampling.  Forward and backward are
written out by hand on numpy arrays of shape (batch, channels, x, y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .degrade import make_rng
from .tensor import DomainError, FeatureMap, FeaturePyramid, ImageRGB, ShapeError, decode_tensor, encode_tensor

LEAK = 0.1
# fixed input standardization applied before the stem
INPUT_MEAN = 0.5
INPUT_SCALE = 0.25
POS_WEIGHT = 10.0
N_LEVELS = 3
PYRAMID_CHANNELS = 8

# name -> (shape, fan_in, fan_out)
ARCHITECTURE = {
    "stem.w": ((8, 3, 3, 3), 27, 72),
    "stem.b": ((8,), None, None),
    "down1.w": ((8, 8, 3, 3), 72, 72),
    "down1.b": ((8,), None, None),
    "down2.w": ((16, 8, 3, 3), 72, 144),
    "down2.b": ((16,), None, None),
    "lat0.w": ((8, 8), 8, 8),
    "lat0.b": ((8,), None, None),
    "lat1.w": ((8, 8), 8, 8),
    "lat1.b": ((8,), None, None),
    "lat2.w": ((8, 16), 16, 8),
    "lat2.b": ((8,), None, None),
    "head0.w": ((1, 8), 8, 1),
    "head0.b": ((1,), None, None),
    "head1.w": ((1, 8), 8, 1),
    "head1.b": ((1,), None, None),
    "head2.w": ((1, 8), 8, 1),
    "head2.b": ((1,), None, None),
}


class ToyNetParams:
    """Named float64 weight arrays; also used to hold gradients."""

    def __init__(self, arrays: dict):
        missing = set(ARCHITECTURE) - set(arrays)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        self.arrays = {}
        for name, (shape, _, _) in ARCHITECTURE.items():
            arr = np.array(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
            self.arrays[name] = arr

    @classmethod
    def zeros(cls) -> "ToyNetParams":
        return cls({name: np.zeros(shape) for name, (shape, _, _) in ARCHITECTURE.items()})

    @classmethod
    def init(cls, seed: int) -> "ToyNetParams":
        """Uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at zero."""
        rng = make_rng(seed, 0x1A17)
        arrays = {}
        for name, (shape, fan_in, fan_out) in ARCHITECTURE.items():
            if fan_in is None:
                arrays[name] = np.zeros(shape)
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
        return cls(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def copy(self) -> "ToyNetParams":
        return ToyNetParams({k: v.copy() for k, v in self.arrays.items()})

    def __eq__(self, other):
        if not isinstance(other, ToyNetParams):
            return NotImplemented
        return all(np.array_equal(self.arrays[k], other.arrays[k]) for k in ARCHITECTURE)

    def bitwise_equal(self, other: "ToyNetParams") -> bool:
        return all(self.arrays[k].tobytes() == other.arrays[k].tobytes() for k in ARCHITECTURE)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[k].ravel() for k in ARCHITECTURE])

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.flat().tobytes()).hexdigest()


def sgd_step(params: ToyNetParams, grads: ToyNetParams, lr: float) -> ToyNetParams:
    if lr < 0:
        raise DomainError(f"learning rate must be >= 0, got {lr}")
    return ToyNetParams({k: params[k] - lr * grads[k] for k in ARCHITECTURE})


# ---------------------------------------------------------------------------
# layers


def _leaky(z):
    return np.where(z > 0, z, LEAK * z)


def _leaky_back(z, g):
    return np.where(z > 0, g, LEAK * g)


def _conv3(x, w, b, stride):
    """3x3 zero-padded convolution (correlation) of x (B, Cin, W, H)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, Wo, Ho, Cout)
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None]


def _conv3_back(x, w, stride, g):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Cout, Cin, 3, 3)
    db = g.sum(axis=(0, 2, 3))
    _, _, wo, ho = g.shape
    dxp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            contrib = np.tensordot(w[:, :, i, j], g, axes=([0], [1]))  # (Cin, B, Wo, Ho)
            dxp[:, :, i : i + stride * wo : stride, j : j + stride * ho : stride] += contrib.transpose(1, 0, 2, 3)
    return dw, db, dxp[:, :, 1:-1, 1:-1]


def _conv1(x, w, b):
    return np.einsum("oc,bcxy->boxy", w, x) + b[None, :, None, None]


def _conv1_back(x, w, g):
    dw = np.einsum("boxy,bcxy->oc", g, x)
    db = g.sum(axis=(0, 2, 3))
    dx = np.einsum("oc,boxy->bcxy", w, g)
    return dw, db, dx


def _up2(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _up2_back(g):
    b, c, w, h = g.shape
    return g.reshape(b, c, w // 2, 2, h // 2, 2).sum(axis=(3, 5))


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardResult:
    pyramid: list          # three (B, 8, Wk, Hk) arrays, largest first
    logits: list           # three (B, Wk, Hk) arrays
    cache: dict

    def feature_pyramid(self) -> FeaturePyramid:
        return FeaturePyramid(FeatureMap._wrap(p) for p in self.pyramid)


def _as_batch(images) -> np.ndarray:
    if isinstance(images, ImageRGB):
        return images.pixels[None]
    if isinstance(images, (list, tuple)):
        return np.stack([im.pixels if isinstance(im, ImageRGB) else np.asarray(im) for im in images])
    x = np.asarray(images, dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def forward(params: ToyNetParams, images, size: int | None = None) -> ForwardResult:
    """Run the network on one image, a list of images, or a (B, 3, W, H) array."""
    x = _as_batch(images)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected (batch, 3, width, height), got {x.shape}")
    if size is not None and x.shape[2:] != (size, size):
        raise ShapeError(f"expected {size}x{size} images, got {x.shape[2]}x{x.shape[3]}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ShapeError(f"spatial dims must be multiples of 4, got {x.shape[2:]}")
    p = params
    x = (x - INPUT_MEAN) / INPUT_SCALE
    z0 = _conv3(x, p["stem.w"], p["stem.b"], 1)
    s = _leaky(z0)
    z1 = _conv3(s, p["down1.w"], p["down1.b"], 2)
    c1 = _leaky(z1)
    z2 = _conv3(c1, p["down2.w"], p["down2.b"], 2)
    c2 = _leaky(z2)
    p2 = _conv1(c2, p["lat2.w"], p["lat2.b"])
    p1 = _conv1(c1, p["lat1.w"], p["lat1.b"]) + _up2(p2)
    p0 = _conv1(s, p["lat0.w"], p["lat0.b"]) + _up2(p1)
    pyramid = [p0, p1, p2]
    logits = [_conv1(pk, p[f"head{k}.w"], p[f"head{k}.b"])[:, 0] for k, pk in enumerate(pyramid)]
    cache = {"x": x, "z0": z0, "s": s, "z1": z1, "c1": c1, "z2": z2, "c2": c2, "pyramid": pyramid}
    return ForwardResult(pyramid, logits, cache)


def backward(params: ToyNetParams, cache: dict, d_logits, d_pyramid=None) -> ToyNetParams:
    """Reverse-mode gradients for all parameters.

    ``d_pyramid``, when given, is added to the gradient arriving at each
    pyramid level; this is where the feature-correction loss enters.
    """
    p = params
    grads = {}
    pyramid = cache["pyramid"]
    if len(d_logits) != N_LEVELS:
        raise ShapeError(f"expected {N_LEVELS} logit gradients, got {len(d_logits)}")
    dp = []
    for k, pk in enumerate(pyramid):
        g = np.asarray(d_logits[k], dtype=np.float64)
        if g.shape != (pk.shape[0],) + pk.shape[2:]:
            raise ShapeError(f"logit gradient {k} has shape {g.shape}")
        dw, db, dx = _conv1_back(pk, p[f"head{k}.w"], g[:, None])
        grads[f"head{k}.w"], grads[f"head{k}.b"] = dw, db
        if d_pyramid is not None:
            extra = np.asarray(d_pyramid[k], dtype=np.float64)
            if extra.shape != pk.shape:
                raise ShapeError(f"pyramid gradient {k} has shape {extra.shape}, expected {pk.shape}")
            dx = dx + extra
        dp.append(dx)
    dp0, dp1, dp2 = dp

    grads["lat0.w"], grads["lat0.b"], ds = _conv1_back(cache["s"], p["lat0.w"], dp0)
    dp1 = dp1 + _up2_back(dp0)
    grads["lat1.w"], grads["lat1.b"], dc1 = _conv1_back(cache["c1"], p["lat1.w"], dp1)
    dp2 = dp2 + _up2_back(dp1)
    grads["lat2.w"], grads["lat2.b"], dc2 = _conv1_back(cache["c2"], p["lat2.w"], dp2)

    dz2 = _leaky_back(cache["z2"], dc2)
    grads["down2.w"], grads["down2.b"], dc1_b = _conv3_back(cache["c1"], p["down2.w"], 2, dz2)
    dz1 = _leaky_back(cache["z1"], dc1 + dc1_b)
    grads["down1.w"], grads["down1.b"], ds_b = _conv3_back(cache["s"], p["down1.w"], 2, dz1)
    dz0 = _leaky_back(cache["z0"], ds + ds_b)
    grads["stem.w"], grads["stem.b"], _ = _conv3_back(cache["x"], p["stem.w"], 1, dz0)
    return ToyNetParams(grads)


# ---------------------------------------------------------------------------
# detection objective


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def detection_loss(logits, masks) -> float:
    """Mean weighted binary cross-entropy over every cell of every level."""
    total, count = 0.0, 0
    if len(logits) != len(masks):
        raise ShapeError(f"{len(logits)} logit levels vs {len(masks)} mask levels")
    for z, y in zip(logits, masks):
        z = np.asarray(z, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if z.shape != y.shape:
            raise ShapeError(f"logits {z.shape} vs mask {y.shape}")
        total += float(np.sum(POS_WEIGHT * y * _softplus(-z) + (1.0 - y) * _softplus(z)))
        count += z.size
    return total / count


def detection_loss_grad(logits, masks) -> list:
    count = sum(np.size(z) for z in logits)
    out = []
    for z, y in zip(logits, masks):
        sig = _sigmoid(z)
        out.append((POS_WEIGHT * y * (sig - 1.0) + (1.0 - y) * sig) / count)
    return out


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class Scene:
    image: ImageRGB
    gt_mask: tuple            # per level (W/2^k, H/2^k) arrays of 0/1
    boxes: tuple              # (cx, cy, w, h) in pixels

    @property
    def n_objects(self) -> int:
        return len(self.boxes)


def level_cell(cx: float, cy: float, level: int) -> tuple[int, int]:
    stride = 1 << level
    return int(math.floor(cx)) // stride, int(math.floor(cy)) // stride


def _value_noise(rng, size, grid=5):
    coarse = rng.uniform(0.0, 1.0, size=(3, grid, grid))
    pos = np.linspace(0, grid - 1, size)
    # bilinear upsampling as two interpolation matrices
    interp = np.stack([np.interp(pos, np.arange(grid), np.eye(grid)[k]) for k in range(grid)], axis=1)
    return np.einsum("xi,cij,yj->cxy", interp, coarse, interp)


def synthesize_scene(seed: int, size: int = 64) -> Scene:
    """Textured background with 1-4 separated bright rectangles or disks."""
    if size not in (64, 128):
        raise DomainError(f"scene size must be 64 or 128, got {size}")
    rng = make_rng(seed, 0x5CE)
    scale = size // 64
    px = 0.15 + 0.3 * _value_noise(rng, size)
    px += rng.normal(0.0, 0.03, size=px.shape)
    n_obj = int(rng.integers(1, 5))
    placed = []
    xs = np.arange(size)[:, None] + 0.5
    ys = np.arange(size)[None, :] + 0.5
    tries = 0
    while len(placed) < n_obj and tries < 1000:
        tries += 1
        w = int(rng.integers(8, 17)) * scale
        h = int(rng.integers(8, 17)) * scale
        x0 = int(rng.integers(0, size - w + 1))
        y0 = int(rng.integers(0, size - h + 1))
        # one pixel of clearance keeps the boxes disjoint
        if any(x0 < bx + bw + 1 and bx < x0 + w + 1 and y0 < by + bh + 1 and by < y0 + h + 1 for bx, by, bw, bh, _ in placed):
            continue
        placed.append((x0, y0, w, h, bool(rng.integers(0, 2))))
    boxes = []
    for x0, y0, w, h, disk in placed:
        color = rng.uniform(0.7, 1.0, size=3)
        color[rng.integers(0, 3)] *= 0.5
        inside = (xs >= x0) & (xs < x0 + w) & (ys >= y0) & (ys < y0 + h)
        if disk:
            cxp, cyp = x0 + w / 2, y0 + h / 2
            inside &= ((xs - cxp) / (w / 2)) ** 2 + ((ys - cyp) / (h / 2)) ** 2 <= 1.0
        px = np.where(inside[None], color[:, None, None], px)
        boxes.append((x0 + w / 2, y0 + h / 2, float(w), float(h)))
    masks = []
    for k in range(N_LEVELS):
        m = np.zeros((size >> k, size >> k))
        for cx, cy, _, _ in boxes:
            m[level_cell(cx, cy, k)] = 1.0
        masks.append(m)
    return Scene(ImageRGB(np.clip(px, 0.0, 1.0)), tuple(masks), tuple(boxes))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ToyNetParams, directory) -> Path:
    """One FMAP file per tensor plus ``manifest.txt`` (name, file, shape).

    Tensors are padded to rank 4 on disk and stored as f32.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, arr in params.arrays.items():
        fname = name.replace(".", "_") + ".fmap"
        padded = arr.reshape((1,) * (4 - arr.ndim) + arr.shape)
        (directory / fname).write_bytes(encode_tensor(padded))
        lines.append(f"{name} {fname} {'x'.join(str(d) for d in arr.shape)}")
    manifest = directory / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_checkpoint(directory) -> ToyNetParams:
    directory = Path(directory)
    arrays = {}
    for line in (directory / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        name, fname, shape = line.split()
        dims = tuple(int(d) for d in shape.split("x"))
        arrays[name] = decode_tensor((directory / fname).read_bytes()).astype(np.float64).reshape(dims)
    return ToyNetParams(arrays)

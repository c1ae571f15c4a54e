"""Dataset ingestion: IDX files, pooling front end, synthetic sets.

Images are normalized to [0,1] by dividing by 255 and then pooled down
to the state size (28x28 -> 6x6 by default); the flattened pooled
vector is the initial value u(0) the classifier evolves.  Pooling is
adaptive averaging: output cell (i, j) is the mean of the input window
[floor(iH/h), ceil((i+1)H/h)) x [floor(jW/w), ceil((j+1)W/w)), so
non-integer ratios produce overlapping windows instead of dropped rows.

When no IDX corpus is present, `ensure_digit_corpus` renders a labeled
digit set in the same byte format, so the full pipeline (parser
included) exercises identically either way.
"""

import gzip
import hashlib
import os
import struct

import numpy as np

from .errors import IdxError, ShapeError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


def parse_idx(blob):
    """Decode one IDX stream into a uint8 tensor."""
    if len(blob) < 4:
        raise IdxError(f"stream ends inside the magic number at byte {len(blob)}")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise IdxError(f"bad magic {magic} at byte 0 (want {LABEL_MAGIC} or {IMAGE_MAGIC})")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(blob) < header_end:
        raise IdxError(f"stream ends inside the dimension list at byte {len(blob)}")
    dims = struct.unpack(f">{ndim}I", blob[4:header_end])
    expect = int(np.prod(dims, dtype=np.int64))
    payload = blob[header_end:]
    if len(payload) != expect:
        raise IdxError(
            f"payload from byte {header_end} holds {len(payload)} bytes, "
            f"dims {dims} need {expect}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def serialize_idx(tensor):
    """Inverse of `parse_idx`; emits big-endian header plus raw bytes."""
    tensor = np.ascontiguousarray(tensor, dtype=np.uint8)
    if tensor.ndim == 1:
        magic = LABEL_MAGIC
    elif tensor.ndim == 3:
        magic = IMAGE_MAGIC
    else:
        raise ShapeError(f"IDX writer handles 1-D labels or 3-D images, got {tensor.ndim}-D")
    head = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in tensor.shape)
    return head + tensor.tobytes()


def _read_maybe_gz(path):
    gz = path + ".gz"
    if os.path.exists(path):
        with open(path, "rb") as fh:
            return fh.read()
    if os.path.exists(gz):
        with gzip.open(gz, "rb") as fh:
            return fh.read()
    raise FileNotFoundError(path)


def load_idx_pair(images_path, labels_path):
    images = parse_idx(_read_maybe_gz(images_path))
    labels = parse_idx(_read_maybe_gz(labels_path))
    if images.ndim != 3:
        raise ShapeError(f"expected an image tensor, got {images.ndim}-D data")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise ShapeError(
            f"{labels.shape[0] if labels.ndim == 1 else 'non-vector'} labels "
            f"for {images.shape[0]} images"
        )
    return images, labels


def load_corpus(root, split="train"):
    """Images and labels for one split of an IDX directory."""
    names = (TRAIN_IMAGES, TRAIN_LABELS) if split == "train" else (TEST_IMAGES, TEST_LABELS)
    return load_idx_pair(os.path.join(root, names[0]), os.path.join(root, names[1]))


def _windows(size_in, size_out):
    starts = [(i * size_in) // size_out for i in range(size_out)]
    stops = [-(-((i + 1) * size_in) // size_out) for i in range(size_out)]
    return starts, stops


def downsample(image, out_shape):
    """Adaptive average pooling to `out_shape`, flattened row-major."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"pooling expects a 2-D image, got {image.ndim}-D")
    h, w = out_shape
    H, W = image.shape
    if not (1 <= h <= H and 1 <= w <= W):
        raise ShapeError(f"cannot pool {H}x{W} down to {h}x{w}")
    r0, r1 = _windows(H, h)
    c0, c1 = _windows(W, w)
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = image[r0[i] : r1[i], c0[j] : c1[j]].mean()
    return out.ravel()


def pooling_matrix(in_shape, out_shape):
    """Matrix P with downsample(img) == img.ravel() @ P; used for input gradients."""
    H, W = in_shape
    h, w = out_shape
    if not (1 <= h <= H and 1 <= w <= W):
        raise ShapeError(f"cannot pool {H}x{W} down to {h}x{w}")
    r0, r1 = _windows(H, h)
    c0, c1 = _windows(W, w)
    P = np.zeros((H * W, h * w))
    for i in range(h):
        for j in range(w):
            rows = np.arange(r0[i], r1[i])
            colq = np.arange(c0[j], c1[j])
            cells = (rows[:, None] * W + colq[None, :]).ravel()
            P[cells, i * w + j] = 1.0 / cells.size
    return P


def pooled_states(images, out_shape=(6, 6)):
    """Normalize to [0,1] and pool a uint8 image stack into state vectors."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ShapeError(f"expected an image stack, got {images.ndim}-D data")
    P = pooling_matrix(images.shape[1:], out_shape)
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return flat @ P


def cached_pooled_states(cache_dir, images, out_shape=(6, 6)):
    """Pooled states with an on-disk cache keyed by content hash."""
    images = np.asarray(images)
    key = hashlib.sha256()
    key.update(np.ascontiguousarray(images).tobytes())
    key.update(repr((images.shape, out_shape)).encode())
    path = os.path.join(cache_dir, f"states-{key.hexdigest()[:16]}.npz")
    if os.path.exists(path):
        return np.load(path)["states"]
    states = pooled_states(images, out_shape)
    os.makedirs(cache_dir, exist_ok=True)
    # unique tmp name so concurrent writers do not race on the rename
    tmp = f"{path}.{os.getpid()}.tmp.npz"
    np.savez(tmp, states=states)
    os.replace(tmp, path)
    return states


def two_moons(n_samples, noise=0.1, seed=0):
    """Interleaved half-circles scaled into the unit square.

    The affine map uses the analytic extremes (x in [-1,2], y in
    [-0.5,1]), so with noise=0 the curves stay exactly recoverable.
    """
    if n_samples < 2:
        raise ShapeError("need at least one point per class")
    half = n_samples // 2
    rng = np.random.default_rng(seed)
    theta = np.linspace(0.0, np.pi, half)
    upper = np.column_stack([np.cos(theta), np.sin(theta)])
    lower = np.column_stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)])
    pts = np.vstack([upper, lower])
    labels = np.repeat([0, 1], half)
    if noise > 0.0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    pts[:, 0] = (pts[:, 0] + 1.0) / 3.0
    pts[:, 1] = (pts[:, 1] + 0.5) / 1.5
    return np.clip(pts, 0.0, 1.0), labels


_GLYPHS = {
    0: ("111", "101", "101", "101", "111"),
    1: ("010", "110", "010", "010", "111"),
    2: ("111", "001", "111", "100", "111"),
    3: ("111", "001", "111", "001", "111"),
    4: ("101", "101", "111", "001", "001"),
    5: ("111", "100", "111", "001", "111"),
    6: ("111", "100", "111", "101", "111"),
    7: ("111", "001", "010", "010", "010"),
    8: ("111", "101", "111", "101", "111"),
    9: ("111", "101", "111", "001", "111"),
}


def _glyph_image(digit):
    rows = _GLYPHS[digit]
    bitmap = np.array([[c == "1" for c in row] for row in rows], dtype=np.float64)
    # 3x5 cell grid blown up to 18x20 strokes inside a 28x28 canvas
    canvas = np.zeros((28, 28))
    canvas[4:24, 5:23] = np.kron(bitmap, np.ones((4, 6)))
    return canvas


def render_digits(n, seed=0):
    """Labeled 28x28 uint8 digit images with warp, wobble, blur, and noise.

    Each sample pushes the base glyph through a random affine map
    (rotation, anisotropic scale, shear, translation) plus a
    low-frequency sinusoidal wobble that bends the strokes, then
    degrades it with optional box blur, contrast jitter, and pixel
    noise.  The distortions are strong enough that pooled states are
    not linearly separable, which keeps downstream classifiers off
    the accuracy ceiling.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    images = np.empty((n, 28, 28), dtype=np.uint8)
    rr, cc = np.meshgrid(np.arange(28.0), np.arange(28.0), indexing="ij")
    for idx, digit in enumerate(labels):
        glyph = _glyph_image(int(digit))
        ang = rng.uniform(-0.35, 0.35)
        sy, sx = rng.uniform(0.75, 1.15, size=2)
        shear = rng.uniform(-0.25, 0.25)
        dy, dx = rng.uniform(-3.0, 3.0, size=2)
        amp = rng.uniform(0.0, 1.6, size=2)
        freq = rng.uniform(1.0, 2.5, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
        blur = rng.uniform() < 0.5
        contrast = rng.uniform(0.55, 1.0)
        sigma = rng.uniform(8.0, 26.0)
        # inverse-map output pixels through the affine about the center
        yc, xc = rr - 13.5 - dy, cc - 13.5 - dx
        ys = (np.cos(ang) * yc + np.sin(ang) * xc) / sy
        xs = (-np.sin(ang) * yc + np.cos(ang) * xc) / sx + shear * ys
        ys = ys + amp[0] * np.sin(freq[0] * xs / 4.5 + phase[0])
        xs = xs + amp[1] * np.sin(freq[1] * ys / 4.5 + phase[1])
        yi = np.rint(ys + 13.5).astype(int)
        xi = np.rint(xs + 13.5).astype(int)
        inside = (yi >= 0) & (yi < 28) & (xi >= 0) & (xi < 28)
        img = np.where(inside, glyph[np.clip(yi, 0, 27), np.clip(xi, 0, 27)], 0.0)
        if blur:
            padded = np.pad(img, 1)
            img = sum(
                padded[1 + r : 29 + r, 1 + c : 29 + c]
                for r in (-1, 0, 1)
                for c in (-1, 0, 1)
            ) / 9.0
        img = img * contrast * 255.0
        img += rng.normal(0.0, sigma, size=img.shape)
        images[idx] = np.clip(img, 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


def ensure_digit_corpus(root, n_train=10000, n_test=2000, seed=0):
    """Write a synthetic IDX corpus into `root` unless one is already there."""
    os.makedirs(root, exist_ok=True)
    wanted = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
    if all(
        os.path.exists(os.path.join(root, n)) or os.path.exists(os.path.join(root, n + ".gz"))
        for n in wanted
    ):
        return root
    train_x, train_y = render_digits(n_train, seed=seed)
    test_x, test_y = render_digits(n_test, seed=seed + 1)
    for name, tensor in [
        (TRAIN_IMAGES, train_x),
        (TRAIN_LABELS, train_y.astype(np.uint8)),
        (TEST_IMAGES, test_x),
        (TEST_LABELS, test_y.astype(np.uint8)),
    ]:
        with open(os.path.join(root, name), "wb") as fh:
            fh.write(serialize_idx(tensor))
    return root

"""Binary quantization of feature maps.

The hash model is trained by iterative quantization: PCA to c dimensions,
then an alternating minimization of the binarization loss ||B - V R||_F over
binary codes B and an orthogonal rotation R. Encoding a vector applies the
learned linear map, a sigmoid, and a 0.5 threshold; the resulting c bits are
packed into one integer prototype per grid cell.

A k-means codebook with 2^c centroids is provided as an alternative encoder
for ablation runs.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import (
    BadMagic,
    CodeOutOfRange,
    DegenerateData,
    DimensionMismatch,
    IoError,
    NonConvergentSVD,
    TooFewSamples,
    TruncatedPayload,
    ValidationError,
)
from .grids import FeatureMapSequence, GridSpec

ITQ_MAGIC = b"ITQ1"
KMEANS_MAGIC = b"KMC1"

DEFAULT_ITQ_ITERS = 50
DEFAULT_KMEANS_ITERS = 50
DEFAULT_TRAIN_SAMPLE_CAP = 100_000

# relative eigenvalue cutoff below which a principal direction counts as dead
_RANK_RTOL = 1e-10


def _ortho_error(m: np.ndarray) -> float:
    return float(np.abs(m.T @ m - np.eye(m.shape[1])).max())


@dataclass
class HashModel:
    """Centering mean, PCA projection and ITQ rotation for c-bit encoding."""

    mean: np.ndarray
    projection: np.ndarray
    rotation: np.ndarray
    bits: int
    losses: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean)
        self.projection = np.asarray(self.projection)
        self.rotation = np.asarray(self.rotation)
        d = self.mean.shape[0]
        c = self.bits
        if c < 1 or c > d:
            raise ValidationError(f"bits {c} must be in [1, D={d}]")
        if self.projection.shape != (d, c):
            raise DimensionMismatch(f"projection must be {d}x{c}, got {self.projection.shape}")
        if self.rotation.shape != (c, c):
            raise DimensionMismatch(f"rotation must be {c}x{c}, got {self.rotation.shape}")
        # float32 round-trips through the model file cannot hold 1e-8
        tol = 1e-5 if self.projection.dtype == np.float32 else 1e-8
        if _ortho_error(self.rotation) > tol:
            raise ValidationError("rotation is not orthogonal")
        if _ortho_error(self.projection) > tol:
            raise ValidationError("projection columns are not orthonormal")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def hashing_matrix(self) -> np.ndarray:
        """Combined D x c linear map (projection followed by rotation)."""
        return self.projection @ self.rotation


@dataclass
class BinaryMapSequence:
    """Per-frame grid of c-bit prototype codes, shape (T, rows, cols)."""

    codes: np.ndarray
    grid: GridSpec
    bits: int

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 3:
            raise DimensionMismatch(f"codes must be (T, rows, cols), got {codes.shape}")
        if codes.shape[1] != self.grid.rows or codes.shape[2] != self.grid.cols:
            raise DimensionMismatch(
                f"code grid {codes.shape[1]}x{codes.shape[2]} does not match spec "
                f"{self.grid.rows}x{self.grid.cols}"
            )
        if not np.issubdtype(codes.dtype, np.integer):
            raise CodeOutOfRange(f"codes must be integers, got {codes.dtype}")
        if codes.size and (codes.min() < 0 or codes.max() >= (1 << self.bits)):
            raise CodeOutOfRange(f"codes must lie in [0, {1 << self.bits})")
        self.codes = codes

    @property
    def n_frames(self) -> int:
        return self.codes.shape[0]


@dataclass
class Codebook:
    """K = 2^bits centroids for the k-means ablation encoder."""

    centroids: np.ndarray
    bits: int
    sse: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.centroids)
        if c.ndim != 2 or c.shape[0] != (1 << self.bits):
            raise ValidationError(
                f"centroids must be ({1 << self.bits}, D) for bits={self.bits}, got {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ValidationError("centroids must be finite")
        self.centroids = c

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


# ---------------------------------------------------------------------------
# ITQ training


def random_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Seeded random orthogonal matrix: QR of a Gaussian, sign-normalized."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def pca_projection(samples: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Top principal components of the sample covariance.

    Returns (mean, projection) with deterministic component signs (the
    largest-magnitude entry of each component is positive). Raises
    DegenerateData when fewer than n_components directions carry variance.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"samples must be (n, D), got {x.shape}")
    n, d = x.shape
    if n_components > d:
        raise DegenerateData(f"cannot extract {n_components} components from D={d}")
    if n <= n_components:
        raise DegenerateData(f"need more than {n_components} samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 0 or np.sum(evals > evals[0] * _RANK_RTOL) < n_components:
        raise DegenerateData(
            f"samples span fewer than {n_components} nonzero-variance directions"
        )
    proj = evecs[:, :n_components]
    flips = np.sign(proj[np.argmax(np.abs(proj), axis=0), np.arange(n_components)])
    return mean, proj * flips


def itq_train(
    samples: np.ndarray,
    bits: int,
    iters: int = DEFAULT_ITQ_ITERS,
    seed: int = 0,
) -> HashModel:
    """Fit the c-bit hash model on a sample matrix.

    Alternates B = sign(V R) with the orthogonal-Procrustes rotation update
    R = S_hat S^T from the SVD B^T V = S Omega S_hat^T, starting from a seeded
    random orthogonal matrix. The per-iteration quantization losses
    ||B - V R||_F (measured after each rotation update) are attached to the
    returned model as `losses` and are non-increasing.
    """
    mean, proj = pca_projection(samples, bits)
    v = (np.asarray(samples, dtype=np.float64) - mean) @ proj
    rot = random_orthogonal(bits, seed)
    losses = np.empty(iters)
    for k in range(iters):
        b = np.where(v @ rot > 0, 1.0, -1.0)
        try:
            u, _, vh = np.linalg.svd(b.T @ v)
        except np.linalg.LinAlgError as e:
            raise NonConvergentSVD(f"rotation update failed at iteration {k}: {e}") from e
        rot = vh.T @ u.T
        losses[k] = np.linalg.norm(b - v @ rot)
    return HashModel(mean=mean, projection=proj, rotation=rot, bits=bits, losses=losses)


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Optional preprocessing: unit-L2 rows. Apply to the training samples and
    to every encoded vector alike; the default pipeline does not normalize."""
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), eps)


def reservoir_sample(rows: np.ndarray, cap: int, seed: int = 0) -> np.ndarray:
    """Keep at most cap rows via seeded reservoir sampling (Algorithm R)."""
    rows = np.asarray(rows)
    n = rows.shape[0]
    if n <= cap:
        return rows
    rng = np.random.default_rng(seed)
    keep = np.arange(cap)
    for i in range(cap, n):
        j = int(rng.integers(0, i + 1))
        if j < cap:
            keep[j] = i
    return rows[keep]


# ---------------------------------------------------------------------------
# Encoding (sigmoid + 0.5 threshold, bit 0 = first hash dimension)


def _threshold_bits(z: np.ndarray) -> np.ndarray:
    """Sigmoid activation thresholded at 0.5; the tie maps to bit 0."""
    return expit(z) > 0.5


def _pack_bits(bit_rows: np.ndarray) -> np.ndarray:
    weights = 1 << np.arange(bit_rows.shape[-1], dtype=np.int64)
    return bit_rows.astype(np.int64) @ weights


def encode_bits(x: np.ndarray, model: HashModel) -> int:
    """Encode one feature vector to its integer prototype code."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DimensionMismatch(f"expected a length-{model.dim} vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("feature vector must be finite")
    z = (x - model.mean) @ model.hashing_matrix
    return int(_pack_bits(_threshold_bits(z)))


def encode_sequence(fm: FeatureMapSequence, model: HashModel) -> BinaryMapSequence:
    """Encode every cell of every frame; pure per-frame map."""
    if fm.dim != model.dim:
        raise DimensionMismatch(f"features are {fm.dim}-D but the model expects {model.dim}-D")
    z = (fm.flat_vectors().astype(np.float64) - model.mean) @ model.hashing_matrix
    codes = _pack_bits(_threshold_bits(z)).reshape(fm.features.shape[:3])
    return BinaryMapSequence(codes=codes, grid=fm.grid, bits=model.bits)


# ---------------------------------------------------------------------------
# k-means ablation


def kmeans_codebook(
    samples: np.ndarray,
    bits: int,
    iters: int = DEFAULT_KMEANS_ITERS,
    seed: int = 0,
) -> Codebook:
    """Lloyd k-means with K = 2^bits centroids from a k-means++ seeded init.

    The per-iteration within-cluster SSE (after each centroid update) is
    attached as `sse` and is non-increasing. Empty clusters keep their
    previous centroid.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"samples must be (n, D), got {x.shape}")
    k = 1 << bits
    n = x.shape[0]
    if n < k:
        raise TooFewSamples(f"k-means with K={k} needs at least {k} samples, got {n}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = _sq_distances(x, centroids[:1]).ravel()
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[i] = x[idx]
        d2 = np.minimum(d2, _sq_distances(x, centroids[i : i + 1]).ravel())

    sse = np.empty(iters)
    for it in range(iters):
        assign = np.argmin(_sq_distances(x, centroids), axis=1)
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
        sse[it] = np.sum((x - centroids[assign]) ** 2)
    return Codebook(centroids=centroids, bits=bits, sse=sse)


def _sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ c.T)
        + np.sum(c * c, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def assign_code(x: np.ndarray, codebook: Codebook) -> int:
    """Nearest-centroid index (L2; lowest index on ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (codebook.dim,):
        raise DimensionMismatch(f"expected a length-{codebook.dim} vector, got shape {x.shape}")
    return int(np.argmin(_sq_distances(x[None, :], codebook.centroids)[0]))


def assign_sequence(fm: FeatureMapSequence, codebook: Codebook) -> BinaryMapSequence:
    """Codebook counterpart of encode_sequence for ablation runs."""
    if fm.dim != codebook.dim:
        raise DimensionMismatch(f"features are {fm.dim}-D but the codebook expects {codebook.dim}-D")
    assign = np.argmin(_sq_distances(fm.flat_vectors().astype(np.float64), codebook.centroids), axis=1)
    return BinaryMapSequence(
        codes=assign.reshape(fm.features.shape[:3]), grid=fm.grid, bits=codebook.bits
    )


# ---------------------------------------------------------------------------
# Model files (FMAP-style containers)


def save_hash_model(path, model: HashModel):
    """ITQ1 container: magic, D and c as u32, then mean/projection/rotation f32."""
    blob = ITQ_MAGIC + struct.pack("<II", model.dim, model.bits)
    for part in (model.mean, model.projection, model.rotation):
        blob += np.ascontiguousarray(part, dtype="<f4").tobytes()
    _write_bytes(path, blob)


def load_hash_model(path) -> HashModel:
    raw = _read_bytes(path)
    if raw[:4] != ITQ_MAGIC:
        raise BadMagic(f"{path}: magic {raw[:4]!r} is not {ITQ_MAGIC!r}")
    if len(raw) < 12:
        raise TruncatedPayload(f"{path}: header truncated")
    d, c = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * (d + d * c + c * c)
    if len(raw) != expected:
        raise TruncatedPayload(f"{path}: {len(raw)} bytes, expected {expected}")
    vals = np.frombuffer(raw[12:], dtype="<f4").astype(np.float32, copy=False)
    mean, rest = vals[:d], vals[d:]
    proj = rest[: d * c].reshape(d, c)
    rot = rest[d * c :].reshape(c, c)
    return HashModel(mean=mean, projection=proj, rotation=rot, bits=c)


def save_codebook(path, codebook: Codebook):
    """KMC1 container: magic, D and c as u32, then the 2^c x D centroids f32."""
    blob = KMEANS_MAGIC + struct.pack("<II", codebook.dim, codebook.bits)
    blob += np.ascontiguousarray(codebook.centroids, dtype="<f4").tobytes()
    _write_bytes(path, blob)


def load_codebook(path) -> Codebook:
    raw = _read_bytes(path)
    if raw[:4] != KMEANS_MAGIC:
        raise BadMagic(f"{path}: magic {raw[:4]!r} is not {KMEANS_MAGIC!r}")
    if len(raw) < 12:
        raise TruncatedPayload(f"{path}: header truncated")
    d, c = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * (1 << c) * d
    if len(raw) != expected:
        raise TruncatedPayload(f"{path}: {len(raw)} bytes, expected {expected}")
    cents = np.frombuffer(raw[12:], dtype="<f4").astype(np.float64).reshape(1 << c, d)
    return Codebook(centroids=cents, bits=c)


def load_quantizer_model(path) -> HashModel | Codebook:
    """Dispatch on the magic: ITQ1 hash model or KMC1 codebook."""
    magic = _read_bytes(path)[:4]
    if magic == ITQ_MAGIC:
        return load_hash_model(path)
    if magic == KMEANS_MAGIC:
        return load_codebook(path)
    raise BadMagic(f"{path}: magic {magic!r} is neither {ITQ_MAGIC!r} nor {KMEANS_MAGIC!r}")


def encode_with_model(fm: FeatureMapSequence, model: HashModel | Codebook) -> BinaryMapSequence:
    if isinstance(model, HashModel):
        return encode_sequence(fm, model)
    return assign_sequence(fm, model)


def _write_bytes(path, blob: bytes):
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e

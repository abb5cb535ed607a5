"""PCA fit/projection with a cyclic Jacobi eigensolver.

Fitting is always done on training-split frames: the mean and the top-k
eigenvectors of the sample covariance (divisor N-1). Projection subtracts
the training mean and applies the orthonormal basis; no whitening.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InvalidK,
    ShapeMismatch,
    TruncatedPayload,
    VersionMismatch,
)

PCA_MAGIC = b"TPPC"
PCA_VERSION = 1

SWEEP_DIMS = (512, 448, 384, 320, 256, 192, 128, 64, 32)

MAX_FIT_FRAMES = 200_000


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (k, D), orthonormal rows, descending eigenvalue order
    eigenvalues: np.ndarray  # (k,), nonnegative, descending
    fitted_on: tuple = ()  # (model_id, layer, dataset, n_frames) provenance

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def truncated(self, k: int) -> "PcaModel":
        if not 1 <= k <= self.k:
            raise InvalidK(f"k={k} outside [1, {self.k}]")
        return PcaModel(
            mean=self.mean,
            basis=self.basis[:k],
            eigenvalues=self.eigenvalues[:k],
            fitted_on=self.fitted_on,
        )


def _round_robin_rounds(n: int):
    """Tournament pairings covering every (p, q) pair once per sweep.

    Yields (p_array, q_array) of disjoint index pairs; with an odd count one
    index sits out each round (paired with the dummy slot).
    """
    m = n + (n & 1)
    players = list(range(m))
    for _ in range(m - 1):
        p = np.array(players[: m // 2])
        q = np.array(players[: m // 2 - 1 : -1])
        keep = (p < n) & (q < n)
        lo = np.minimum(p[keep], q[keep])
        hi = np.maximum(p[keep], q[keep])
        yield lo, hi
        players = [players[0]] + [players[-1]] + players[1:-1]


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Uses a round-robin ordering so each round applies D/2 disjoint rotations
    as one vectorized update; the rotation set per sweep is the full cycle of
    off-diagonal pairs. Returns (eigenvalues, eigenvectors) with eigenvectors
    in columns, both in descending eigenvalue order.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch("jacobi_eigh needs a square matrix")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    rounds = list(_round_robin_rounds(n))
    for _ in range(max_sweeps):
        hollow = a.copy()
        np.fill_diagonal(hollow, 0.0)
        if np.linalg.norm(hollow) <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            # |theta| huge means an already negligible rotation; the asymptotic
            # form avoids overflow in theta**2
            big = np.abs(theta) > 1e10
            safe = np.where(big, 1.0, theta)
            t = np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
            t = np.where(big, 0.5 / theta, t)
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cc, ss = c[:, None], s[:, None]
            # rows, then columns: disjoint pairs make the batch exact
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = cc * ap - ss * aq
            a[q, :] = ss * ap + cc * aq
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cc.T * ap - ss.T * aq
            a[:, q] = ss.T * ap + cc.T * aq
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = cc.T * vp - ss.T * vq
            v[:, q] = ss.T * vp + cc.T * vq
    eigenvalues = a.diagonal().copy()
    order = np.argsort(eigenvalues)[::-1]
    return eigenvalues[order], v[:, order]


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Make each row's largest-magnitude entry positive (deterministic sign)."""
    out = basis.copy()
    for row in out:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return out


def fit_pca(
    frames: np.ndarray,
    k: int,
    fitted_on: tuple = (),
    max_frames: int = MAX_FIT_FRAMES,
    seed: int = 0,
) -> PcaModel:
    """Fit mean + top-k orthonormal basis on training frames (N x D).

    Covariance uses divisor N-1 and float64 accumulation; frames beyond
    max_frames are subsampled uniformly at random (seeded). Rank deficiency
    is not an error: trailing eigenvalues may be zero.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch("frames must be N x D")
    n, d = x.shape
    if n < 2:
        raise InvalidK("need at least 2 frames to fit")
    if not 1 <= k <= min(n - 1, d):
        raise InvalidK(f"k={k} outside [1, min(N-1, D)={min(n - 1, d)}]")
    if n > max_frames:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=max_frames, replace=False))
        x = x[idx]
        n = max_frames
    mean = x.mean(axis=0)
    centered = x - mean
    cov = (centered.T @ centered) / (n - 1)
    eigenvalues, vectors = jacobi_eigh(cov)
    eigenvalues = np.maximum(eigenvalues, 0.0)
    basis = _fix_signs(vectors[:, :k].T)
    return PcaModel(
        mean=mean,
        basis=basis,
        eigenvalues=eigenvalues[:k],
        fitted_on=tuple(fitted_on) or ("", -1, "", n),
    )


def project(model: PcaModel, frames: np.ndarray) -> np.ndarray:
    """Project T x D frames to T x k: (frames - mean) @ basis.T."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ShapeMismatch(
            f"frames have dim {x.shape[-1] if x.ndim == 2 else '?'}, "
            f"model expects {model.dim}"
        )
    return (x - model.mean) @ model.basis.T


def pca_sweep_dims(d: int) -> list[int]:
    """Reduction targets 512 down to 64 in steps of 64, plus the 32 endpoint."""
    if d < SWEEP_DIMS[0]:
        kept = [k for k in SWEEP_DIMS if k <= d]
        warnings.warn(
            f"feature dim {d} < {SWEEP_DIMS[0]}; truncating PCA sweep to {kept}",
            stacklevel=2,
        )
        return kept
    return list(SWEEP_DIMS)


def save_pca(model: PcaModel, path) -> Path:
    """Versioned binary: magic, D, k, mean, eigenvalues, basis, CRC32."""
    path = Path(path)
    body = struct.pack("<4sHII", PCA_MAGIC, PCA_VERSION, model.dim, model.k)
    body += np.ascontiguousarray(model.mean, dtype="<f8").tobytes()
    body += np.ascontiguousarray(model.eigenvalues, dtype="<f8").tobytes()
    body += np.ascontiguousarray(model.basis, dtype="<f8").tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    path.write_bytes(body + struct.pack("<I", crc))
    return path


def load_pca(path) -> PcaModel:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 18:
        raise TruncatedPayload(f"{path}: too small for a PCA model")
    magic, version, d, k = struct.unpack_from("<4sHII", blob, 0)
    if magic != PCA_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != PCA_VERSION:
        raise VersionMismatch(f"{path}: unsupported version {version}")
    expected = 14 + 8 * (d + k + k * d) + 4
    if len(blob) != expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, got {len(blob)}")
    crc = struct.unpack_from("<I", blob, expected - 4)[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise TruncatedPayload(f"{path}: CRC mismatch")
    off = 14
    mean = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    eigenvalues = np.frombuffer(blob, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    basis = np.frombuffer(blob, dtype="<f8", count=k * d, offset=off).reshape(k, d).copy()
    return PcaModel(mean=mean, basis=basis, eigenvalues=eigenvalues)

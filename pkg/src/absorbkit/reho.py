"""Regional homogeneity (Kendall's W) maps and their reduction to ROI features.

Chain: ``reho_map`` -> ``standardize_map`` -> ``smooth_gaussian`` -> ``parcellate``.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d
from scipy.stats import rankdata

from .data import RoiRegistry
from .errors import ConstantAllSeries, DataError, EmptyRoi, ZeroVariance

log = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class Volume4D:
    data: np.ndarray
    voxel_size_mm: tuple[float, float, float]
    mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if data.ndim != 4:
            raise DataError("volume data must be 4-D (X, Y, Z, T)")
        if mask.shape != data.shape[:3]:
            raise DataError("mask shape must match the spatial dims of the volume")
        if data.shape[3] < 2:
            raise DataError("ReHo needs at least 2 time points")
        if not mask.any():
            raise DataError("mask is empty")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "voxel_size_mm", tuple(float(v) for v in self.voxel_size_mm))


def _tie_term(ranks_row: np.ndarray) -> float:
    _, counts = np.unique(ranks_row, return_counts=True)
    return float(np.sum(counts ** 3 - counts))


def _w_from_ranks(ranks: np.ndarray, ties: float) -> float:
    m, t = ranks.shape
    rank_sums = ranks.sum(axis=0)
    s = float(np.sum((rank_sums - rank_sums.mean()) ** 2))
    denom = m * m * (t ** 3 - t) - m * ties
    if denom <= 0:
        raise ConstantAllSeries("all series in the block are constant")
    return min(1.0, max(0.0, 12.0 * s / denom))


def kendalls_w(block) -> float:
    """Kendall's coefficient of concordance of ``m`` series of length ``T``.

    ``block`` has shape ``(m, T)``. Ties get average ranks and the usual
    correction term ``sum(t^3 - t)`` in the denominator.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] < 2 or block.shape[1] < 2:
        raise DataError(f"kendalls_w needs m >= 2 series of length T >= 2, got shape {block.shape}")
    ranks = rankdata(block, axis=1)
    ties = sum(_tie_term(r) for r in ranks)
    return _w_from_ranks(ranks, ties)


def neighbor_offsets(cluster: int) -> list[tuple[int, int, int]]:
    """Offsets (including the origin) for 7-, 19- or 27-voxel neighborhoods."""
    if cluster not in (7, 19, 27):
        raise DataError(f"cluster must be 7, 19 or 27, got {cluster}")
    limit = {7: 1, 19: 2, 27: 3}[cluster]
    return [o for o in itertools.product((-1, 0, 1), repeat=3)
            if sum(abs(c) for c in o) <= limit]


def reho_map(v: Volume4D, cluster: int = 27) -> np.ndarray:
    """Voxel-wise Kendall's W over each in-mask voxel and its in-mask neighbors.

    Neighborhoods shrink at the mask boundary. Voxels whose neighborhood is all
    constant (or is the voxel alone) get 0; their count is logged.
    """
    offsets = neighbor_offsets(cluster)
    mask = v.mask
    if mask.sum() < 2:
        raise DataError("ReHo needs at least two in-mask voxels")
    shape = mask.shape
    coords = np.argwhere(mask)
    ranks = np.zeros(v.data.shape, dtype=np.float64)
    ties = np.zeros(shape, dtype=np.float64)
    for x, y, z in coords:
        r = rankdata(v.data[x, y, z])
        ranks[x, y, z] = r
        ties[x, y, z] = _tie_term(r)
    out = np.zeros(shape, dtype=np.float64)
    degenerate = 0
    for x, y, z in coords:
        members = []
        for dx, dy, dz in offsets:
            a, b, c = x + dx, y + dy, z + dz
            if 0 <= a < shape[0] and 0 <= b < shape[1] and 0 <= c < shape[2] and mask[a, b, c]:
                members.append((a, b, c))
        if len(members) < 2:
            degenerate += 1
            continue
        idx = tuple(np.array(members).T)
        try:
            out[x, y, z] = _w_from_ranks(ranks[idx], float(ties[idx].sum()))
        except ConstantAllSeries:
            degenerate += 1
    if degenerate:
        log.warning("reho_map: %d voxel(s) with undefined W set to 0", degenerate)
    return out


def standardize_map(m: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """z-score in-mask values (population SD); out-of-mask voxels become 0."""
    mask = np.asarray(mask, dtype=bool)
    vals = np.asarray(m, dtype=np.float64)[mask]
    sd = vals.std()
    if not sd > 0:
        raise ZeroVariance("in-mask values have zero variance")
    out = np.zeros(mask.shape, dtype=np.float64)
    out[mask] = (vals - vals.mean()) / sd
    return out


def gaussian_kernel_1d(sigma_vox: float) -> np.ndarray:
    radius = int(math.floor(3.0 * sigma_vox))
    if radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_vox) ** 2)
    return k / k.sum()


def smooth_gaussian(m: np.ndarray, fwhm_mm: float = 2.0, voxel_size_mm=(2.0, 2.0, 2.0),
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Separable Gaussian smoothing, normalized by the smoothed mask.

    The kernel is truncated at 3 sigma and renormalized per axis. With no mask
    the whole grid counts as in-mask.
    """
    if not fwhm_mm > 0:
        raise DataError("fwhm must be positive")
    m = np.asarray(m, dtype=np.float64)
    mask = np.ones(m.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    sigma_mm = fwhm_mm * FWHM_TO_SIGMA
    num = np.where(mask, m, 0.0)
    den = mask.astype(np.float64)
    for axis, size in enumerate(voxel_size_mm):
        k = gaussian_kernel_1d(sigma_mm / size)
        num = convolve1d(num, k, axis=axis, mode="constant", cval=0.0)
        den = convolve1d(den, k, axis=axis, mode="constant", cval=0.0)
    out = np.zeros(m.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=mask & (den > 0))
    return out


def parcellate(m: np.ndarray, labels: np.ndarray, registry: RoiRegistry,
               allow_missing: bool = False) -> np.ndarray:
    """Mean of ``m`` within each registry ROI.

    Empty ROIs raise :class:`EmptyRoi` unless ``allow_missing``, in which case
    they are NaN.
    """
    labels = np.asarray(labels).astype(np.int64)
    m = np.asarray(m, dtype=np.float64)
    if labels.shape != m.shape:
        raise DataError("label volume shape does not match the map")
    n = len(registry)
    if labels.min() < 0 or labels.max() > n:
        raise DataError("label volume contains ids outside the registry")
    flat = labels.ravel()
    sums = np.bincount(flat, weights=m.ravel(), minlength=n + 1)[1:]
    counts = np.bincount(flat, minlength=n + 1)[1:]
    out = np.full(n, np.nan)
    np.divide(sums, counts, out=out, where=counts > 0)
    if not allow_missing and (counts == 0).any():
        raise EmptyRoi(int(np.flatnonzero(counts == 0)[0]) + 1)
    return out


def reho_features(v: Volume4D, labels: np.ndarray, registry: RoiRegistry, cluster: int = 27,
                  fwhm_mm: float = 2.0, allow_missing: bool = False) -> np.ndarray:
    """Full chain for one segment: ReHo, in-mask z-score, smoothing, ROI means."""
    r = reho_map(v, cluster)
    z = standardize_map(r, v.mask)
    s = smooth_gaussian(z, fwhm_mm, v.voxel_size_mm, v.mask)
    return parcellate(s, labels, registry, allow_missing=allow_missing)


def load_volume(volume_path, sidecar_path) -> tuple[Volume4D, dict]:
    """Load a little-endian float64 C-order volume plus its JSON sidecar.

    Sidecar keys: ``dims`` ([X, Y, Z, T]), ``voxel_size_mm``, optional
    ``mask_path`` (uint8, [X, Y, Z]) and ``labels_path`` (int32, [X, Y, Z]).
    Relative paths resolve against the sidecar's directory.
    """
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    dims = tuple(int(d) for d in meta["dims"])
    data = np.fromfile(volume_path, dtype="<f8")
    if data.size != int(np.prod(dims)):
        raise DataError(f"volume has {data.size} values, sidecar dims {dims} need {int(np.prod(dims))}")
    data = data.reshape(dims)
    if meta.get("mask_path"):
        mask = np.fromfile(sidecar_path.parent / meta["mask_path"], dtype=np.uint8).reshape(dims[:3]) > 0
    else:
        mask = np.ones(dims[:3], dtype=bool)
    return Volume4D(data, tuple(meta["voxel_size_mm"]), mask), meta


def load_labels(path, dims) -> np.ndarray:
    return np.fromfile(path, dtype="<i4").reshape(tuple(dims)[:3])

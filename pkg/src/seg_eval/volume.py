"""Label volumes, binary masks and the voxel-grid operations on them.

Conventions used throughout the package:

* Arrays are indexed ``(x, y, z)`` and the linear scan order is
  x-fastest (Fortran order), matching the on-disk NIfTI layout.
* ``spacing`` is the voxel edge length in millimetres along each axis.
* Challenge label volumes use 0 = background, 1 = WMH, 2 = other
  pathology. Label 2 marks voxels that are excised from both masks
  before scoring (see :func:`seg_eval.metrics.evaluate_pair`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidLabelError, ShapeMismatchError

__all__ = [
    "LabelVolume",
    "BinaryMask",
    "StructuringElement",
    "ComponentLabeling",
    "binarize_challenge",
    "merge_labels",
    "dilate",
    "erode",
    "surface_voxels",
    "directed_surface_distances",
    "connected_components",
]

_CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


def _check_grid(data: np.ndarray, spacing) -> tuple[float, float, float]:
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D array, got shape {data.shape}")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError("spacing must have three components")
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be positive and finite, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """An integer-labelled 3-D grid with voxel spacing in mm.

    ``data`` is normalised to a read-only int32 array of shape
    ``(nx, ny, nz)``. Labels must be non-negative.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        arr = np.asarray(self.data)
        spacing = _check_grid(arr, self.spacing)
        if not np.issubdtype(arr.dtype, np.integer):
            raise TypeError(f"label data must be integer, got {arr.dtype}")
        if arr.size and int(arr.min()) < 0:
            bad = _first_where(arr < 0)
            raise InvalidLabelError(
                f"negative label {int(arr[bad])} at voxel {bad}",
                value=float(arr[bad]), coordinate=bad)
        arr = np.ascontiguousarray(arr, dtype=np.int32)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def mask(self, label: int) -> "BinaryMask":
        """Binary mask of voxels equal to ``label``."""
        return BinaryMask(self.data == label, self.spacing)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A boolean 3-D grid with voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        arr = np.asarray(self.data)
        spacing = _check_grid(arr, self.spacing)
        if arr.dtype != np.bool_:
            if np.issubdtype(arr.dtype, np.integer):
                arr = arr != 0
            else:
                raise TypeError(f"mask data must be bool, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def count(self) -> int:
        return int(self.data.sum())

    def volume_ml(self) -> float:
        """Foreground volume in millilitres."""
        return self.count() * self.voxel_volume_mm3 / 1000.0


def same_grid(a, b, what: str = "volumes") -> None:
    """Raise unless two volumes/masks share dims and spacing (1e-6 mm)."""
    if a.dims != b.dims:
        raise ShapeMismatchError(
            f"{what} differ in dims: {a.dims} vs {b.dims}")
    if any(abs(x - y) > 1e-6 for x, y in zip(a.spacing, b.spacing)):
        raise ShapeMismatchError(
            f"{what} differ in spacing: {a.spacing} vs {b.spacing}")


def _first_where(cond: np.ndarray) -> tuple[int, int, int]:
    """Coordinate of the first True voxel in x-fastest scan order."""
    flat = np.flatnonzero(cond.ravel(order="F"))
    idx = np.unravel_index(int(flat[0]), cond.shape, order="F")
    return tuple(int(i) for i in idx)


@dataclass(frozen=True)
class StructuringElement:
    """A set of neighbour offsets for morphological dilation/erosion.

    ``offsets`` always includes the origin, so dilation is extensive
    and erosion anti-extensive by construction.
    """

    offsets: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        offs = {tuple(int(v) for v in o) for o in self.offsets}
        offs.add((0, 0, 0))
        object.__setattr__(self, "offsets", tuple(sorted(offs)))

    @classmethod
    def box(cls, shape: tuple[int, int, int]) -> "StructuringElement":
        """Full box of odd edge lengths, e.g. ``(3, 3, 1)`` for the
        in-plane kernel used when building challenge reference masks."""
        for n in shape:
            if n < 1 or n % 2 == 0:
                raise ValueError(f"box edges must be odd and >= 1, got {shape}")
        rx, ry, rz = (n // 2 for n in shape)
        offs = [(dx, dy, dz)
                for dx in range(-rx, rx + 1)
                for dy in range(-ry, ry + 1)
                for dz in range(-rz, rz + 1)]
        return cls(tuple(offs))

    @classmethod
    def cross(cls) -> "StructuringElement":
        """The six face neighbours plus the origin."""
        offs = [(0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                (0, 0, 1), (0, 0, -1)]
        return cls(tuple(offs))


IN_PLANE_3X3 = StructuringElement.box((3, 3, 1))


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Connected components of a mask.

    ``labels`` assigns 1..count to foreground voxels, 0 to background.
    Component ids are deterministic: they follow the first-encounter
    order of an x-fastest scan of the grid.
    """

    labels: np.ndarray
    count: int
    sizes: np.ndarray  # sizes[k] is the voxel count of component k+1
    connectivity: int
    spacing: tuple[float, float, float]


def binarize_challenge(volume: LabelVolume) -> tuple[BinaryMask, BinaryMask]:
    """Split a challenge label volume into (wmh, ignore) masks.

    Labels outside {0, 1, 2} are rejected with the offending value and
    coordinate rather than being clamped.
    """
    data = volume.data
    bad = data > 2
    if bad.any():
        at = _first_where(bad)
        raise InvalidLabelError(
            f"label {int(data[at])} at voxel {at} is outside {{0, 1, 2}}",
            value=float(data[at]), coordinate=at)
    return (BinaryMask(data == 1, volume.spacing),
            BinaryMask(data == 2, volume.spacing))


def merge_labels(wmh: BinaryMask, other: BinaryMask) -> LabelVolume:
    """Compose a challenge label volume from WMH and other-pathology
    masks. Where both are set, WMH (label 1) wins."""
    same_grid(wmh, other, "masks")
    data = np.zeros(wmh.dims, dtype=np.int32)
    data[other.data] = 2
    data[wmh.data] = 1
    return LabelVolume(data, wmh.spacing)


def _shift_into(op, out: np.ndarray, src: np.ndarray,
                offset: tuple[int, int, int]) -> None:
    """Apply ``out[v] = op(out[v], src[v + offset])`` over the valid range."""
    src_sl, dst_sl = [], []
    for axis, d in enumerate(offset):
        n = src.shape[axis]
        if abs(d) >= n:
            return
        if d >= 0:
            src_sl.append(slice(d, n))
            dst_sl.append(slice(0, n - d))
        else:
            src_sl.append(slice(0, n + d))
            dst_sl.append(slice(-d, n))
    view = out[tuple(dst_sl)]
    op(view, src[tuple(src_sl)], out=view)


def dilate(mask: BinaryMask, element: StructuringElement) -> BinaryMask:
    """Morphological dilation; neighbourhoods are clipped at the
    volume boundary."""
    out = np.zeros(mask.dims, dtype=bool)
    for off in element.offsets:
        _shift_into(np.logical_or, out, mask.data, off)
    return BinaryMask(out, mask.spacing)


def erode(mask: BinaryMask, element: StructuringElement) -> BinaryMask:
    """Morphological erosion; out-of-bounds neighbours count as
    background, so foreground touching the boundary erodes away."""
    out = np.ones(mask.dims, dtype=bool)
    for off in element.offsets:
        hit = np.zeros(mask.dims, dtype=bool)
        _shift_into(np.logical_or, hit, mask.data, off)
        out &= hit
    return BinaryMask(out & mask.data, mask.spacing)


def surface_voxels(mask: BinaryMask) -> np.ndarray:
    """Coordinates (K, 3) of foreground voxels with at least one face
    neighbour that is background or outside the volume."""
    m = mask.data
    interior = np.ones(m.shape, dtype=bool)
    for off in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                (0, -1, 0), (0, 0, 1), (0, 0, -1)):
        neighbour = np.zeros(m.shape, dtype=bool)
        _shift_into(np.logical_or, neighbour, m, off)
        interior &= neighbour
    surf = m & ~interior
    return np.argwhere(surf)


def directed_surface_distances(from_coords: np.ndarray,
                               to_coords: np.ndarray,
                               spacing: tuple[float, float, float]
                               ) -> np.ndarray:
    """Euclidean mm distance from each ``from`` voxel to its nearest
    ``to`` voxel. Exact nearest neighbours, no approximation."""
    from scipy.spatial import cKDTree

    from_coords = np.asarray(from_coords, dtype=np.float64)
    to_coords = np.asarray(to_coords, dtype=np.float64)
    if from_coords.size == 0 or to_coords.size == 0:
        raise ValueError("surface distance needs non-empty coordinate sets")
    s = np.asarray(spacing, dtype=np.float64)
    tree = cKDTree(to_coords * s)
    dists, _ = tree.query(from_coords * s, k=1)
    return np.atleast_1d(dists)


def connected_components(mask: BinaryMask, connectivity: int = 26
                         ) -> ComponentLabeling:
    """Label connected components with deterministic ids.

    scipy does the partitioning; ids are then renumbered so that
    component k is the k-th one met by an x-fastest scan. Supported
    connectivities: 6, 18, 26 (default 26).
    """
    if connectivity not in _CONNECTIVITY_RANK:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    structure = ndimage.generate_binary_structure(
        3, _CONNECTIVITY_RANK[connectivity])
    raw, n = ndimage.label(mask.data, structure=structure)
    if n == 0:
        return ComponentLabeling(
            labels=np.zeros(mask.dims, dtype=np.int32), count=0,
            sizes=np.zeros(0, dtype=np.int64), connectivity=connectivity,
            spacing=mask.spacing)

    flat = raw.ravel(order="F")
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(flat.size, dtype=np.int64))
    order = np.argsort(first[1:], kind="stable")  # raw id - 1, by first voxel
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    labels = remap[raw]

    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:].astype(np.int64)
    labels.setflags(write=False)
    return ComponentLabeling(labels=labels, count=int(n), sizes=sizes,
                             connectivity=connectivity, spacing=mask.spacing)

"""Scene and ground-truth data model.

A scene is a reflectance cube with a wavelength axis and a ground sampling
distance. Ground truth is a list of disconnected polygons in pixel
coordinates, each carrying a land-cover class, a land-use class and
(after :func:`group_polygons`) a spatial group id. The module also ships a
seeded synthetic scene generator for desk-scale experiments and the on-disk
formats (raw BIP float32 cube + JSON sidecar, ground truth as JSON).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

WAVELENGTH_MIN_UM = 0.3
WAVELENGTH_MAX_UM = 3.0


class AnnotationConflictError(ValueError):
    """Two overlapping polygons claim the same pixel with different classes."""


class SceneGenerationError(RuntimeError):
    """Synthetic polygon packing failed within the retry budget."""


@dataclass(frozen=True)
class SpectralAxis:
    """Strictly ascending band-center wavelengths, in micrometers."""

    wavelengths_um: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths_um, dtype=np.float64)
        object.__setattr__(self, "wavelengths_um", wl)
        if wl.ndim != 1 or wl.size == 0:
            raise ValueError("wavelengths must be a non-empty 1-D sequence")
        if not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly ascending")
        if wl[0] <= WAVELENGTH_MIN_UM or wl[-1] >= WAVELENGTH_MAX_UM:
            raise ValueError(
                f"wavelengths must lie in ({WAVELENGTH_MIN_UM}, {WAVELENGTH_MAX_UM}) um"
            )

    @property
    def band_count(self) -> int:
        return int(self.wavelengths_um.size)

    @staticmethod
    def linear(start_um: float, stop_um: float, bands: int) -> "SpectralAxis":
        return SpectralAxis(np.linspace(start_um, stop_um, bands))


@dataclass
class HyperspectralScene:
    """H x W x B reflectance cube with spectral axis and GSD (m/pixel)."""

    cube: np.ndarray
    gsd_m: float
    axis: SpectralAxis

    def __post_init__(self):
        cube = np.asarray(self.cube)
        if cube.ndim != 3:
            raise ValueError("cube must have shape (H, W, B)")
        if cube.shape[2] != self.axis.band_count:
            raise ValueError("cube band count does not match the spectral axis")
        if not np.all(np.isfinite(cube)):
            raise ValueError("cube contains non-finite values")
        if cube.min() < 0:
            raise ValueError("reflectance values must be >= 0")
        if self.gsd_m <= 0:
            raise ValueError("gsd_m must be positive")
        self.cube = cube

    @property
    def height(self) -> int:
        return self.cube.shape[0]

    @property
    def width(self) -> int:
        return self.cube.shape[1]

    @property
    def band_count(self) -> int:
        return self.cube.shape[2]


@dataclass(frozen=True)
class NomenclatureNode:
    name: str
    children: tuple = ()
    leaf_id: int | None = None

    def leaves(self) -> list["NomenclatureNode"]:
        if not self.children:
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out


@dataclass(frozen=True)
class Nomenclature:
    """Hierarchical land-cover tree plus a flat land-use class list.

    Leaf ids must be exactly 1..n_classes with no gaps; every leaf sits on a
    single path below the root.
    """

    root: NomenclatureNode
    land_use: tuple

    def __post_init__(self):
        leaves = self.root.leaves()
        ids = sorted(leaf.leaf_id for leaf in leaves)
        if any(i is None for i in ids):
            raise ValueError("every leaf must carry a leaf_id")
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("leaf ids must be exactly 1..n_classes with no gaps")

    @property
    def n_classes(self) -> int:
        return len(self.root.leaves())

    def leaf_names(self) -> dict[int, str]:
        return {leaf.leaf_id: leaf.name for leaf in self.root.leaves()}


_IMPERMEABLE = (
    "asphalt", "dark concrete", "clear concrete", "porous concrete", "gravel",
    "paving stone", "clay tile", "slate roof", "metal roof", "bitumen roof",
    "fiber cement", "solar panel", "synthetic track", "painted surface",
    "glass", "rubble",
)
_PERMEABLE = (
    "healthy lawn", "dry grass", "deciduous tree", "coniferous tree", "shrub",
    "wheat", "corn", "sunflower", "rapeseed", "vineyard", "bare soil",
    "ploughed field", "sand", "water", "aquatic plants", "wetland",
)
_LAND_USE = (
    "roads", "railways", "rooftops", "parking", "construction sites",
    "sports grounds", "water bodies", "swimming pools", "woodland",
    "cropland", "boats", "open ground",
)


def default_nomenclature() -> Nomenclature:
    """32 land-cover leaves (16 impermeable + 16 permeable), 12 land-use classes."""
    imp = tuple(
        NomenclatureNode(name, leaf_id=i + 1) for i, name in enumerate(_IMPERMEABLE)
    )
    per = tuple(
        NomenclatureNode(name, leaf_id=i + 17) for i, name in enumerate(_PERMEABLE)
    )
    root = NomenclatureNode(
        "land cover",
        children=(
            NomenclatureNode("impermeable", children=imp),
            NomenclatureNode("permeable", children=per),
        ),
    )
    return Nomenclature(root=root, land_use=_LAND_USE)


@dataclass
class Polygon:
    """Simple polygon in pixel coordinates with class annotations."""

    vertices: np.ndarray
    land_cover: int
    land_use: int
    group: int | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("vertices must have shape (n >= 3, 2)")
        self.vertices = v


@dataclass
class GroundTruth:
    polygons: list[Polygon] = field(default_factory=list)

    @property
    def n_groups(self) -> int | None:
        groups = [p.group for p in self.polygons]
        if any(g is None for g in groups):
            return None
        return len(set(groups))


@dataclass(frozen=True)
class GroupClassMatrix:
    """P[i, k-1] = number of pixels of class k in group i."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.int64)
        if P.ndim != 2:
            raise ValueError("P must be 2-D (n_groups, n_classes)")
        if P.min(initial=0) < 0:
            raise ValueError("pixel counts must be non-negative")
        object.__setattr__(self, "P", P)

    @property
    def n_groups(self) -> int:
        return self.P.shape[0]

    @property
    def n_classes(self) -> int:
        return self.P.shape[1]


# -- geometry helpers ---------------------------------------------------------


def _segments(vertices: np.ndarray):
    return np.stack([vertices, np.roll(vertices, -1, axis=0)], axis=1)


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def polygon_is_simple(vertices: np.ndarray) -> bool:
    """True when no two non-adjacent edges intersect."""
    v = np.asarray(vertices, dtype=np.float64)
    n = v.shape[0]
    for i in range(n):
        a1, a2 = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(a1, a2, v[j], v[(j + 1) % n]):
                return False
    return True


def _point_segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / denom, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _segment_segment_distance(p1, p2, q1, q2) -> float:
    if _segments_intersect(p1, p2, q1, q2):
        return 0.0
    return min(
        _point_segment_distance(q1[0], q1[1], p1[0], p1[1], p2[0], p2[1]),
        _point_segment_distance(q2[0], q2[1], p1[0], p1[1], p2[0], p2[1]),
        _point_segment_distance(p1[0], p1[1], q1[0], q1[1], q2[0], q2[1]),
        _point_segment_distance(p2[0], p2[1], q1[0], q1[1], q2[0], q2[1]),
    )


def polygon_boundary_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between the boundaries of two polygons, pixel units."""
    best = np.inf
    sa, sb = _segments(np.asarray(a, float)), _segments(np.asarray(b, float))
    for p1, p2 in sa:
        for q1, q2 in sb:
            d = _segment_segment_distance(p1, p2, q1, q2)
            if d < best:
                best = d
                if best == 0.0:
                    return 0.0
    return float(best)


# -- validation / rasterization ----------------------------------------------


def validate_ground_truth(
    gt: GroundTruth,
    height: int,
    width: int,
    nomenclature: Nomenclature | None = None,
) -> None:
    """Raise ValueError on out-of-bounds, non-simple, or invalid-class polygons."""
    for idx, poly in enumerate(gt.polygons):
        v = poly.vertices
        if v[:, 0].min() < 0 or v[:, 0].max() > width or v[:, 1].min() < 0 or v[:, 1].max() > height:
            raise ValueError(f"polygon {idx} has vertices outside scene bounds")
        if not polygon_is_simple(v):
            raise ValueError(f"polygon {idx} is self-intersecting")
        if poly.land_cover < 1:
            raise ValueError(f"polygon {idx} has invalid land-cover id {poly.land_cover}")
        if nomenclature is not None:
            if poly.land_cover > nomenclature.n_classes:
                raise ValueError(
                    f"polygon {idx} land-cover id {poly.land_cover} is not a leaf"
                )
            if not (1 <= poly.land_use <= len(nomenclature.land_use)):
                raise ValueError(f"polygon {idx} has invalid land-use id {poly.land_use}")


def points_in_polygon(px: np.ndarray, py: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd rule membership test for arrays of points."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    v = np.asarray(vertices, dtype=np.float64)
    n = v.shape[0]
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def _rasterize_polygon(poly: Polygon, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (rows, cols) of pixels whose centers fall inside the polygon."""
    v = poly.vertices
    x0 = max(int(np.floor(v[:, 0].min())), 0)
    x1 = min(int(np.ceil(v[:, 0].max())), width)
    y0 = max(int(np.floor(v[:, 1].min())), 0)
    y1 = min(int(np.ceil(v[:, 1].max())), height)
    if x0 >= x1 or y0 >= y1:
        return np.array([], dtype=np.int64), np.array([], dtype=np.int64)
    cols, rows = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
    inside = points_in_polygon(cols + 0.5, rows + 0.5, v)
    return rows[inside], cols[inside]


def rasterize_ground_truth(scene: HyperspectralScene, gt: GroundTruth) -> np.ndarray:
    """Label map (H, W): 0 = unlabeled, else the land-cover leaf id.

    A pixel belongs to a polygon when its center (x+0.5, y+0.5) is inside per
    the even-odd rule. Two polygons of different classes covering the same
    pixel raise :class:`AnnotationConflictError`; same-class coverage is
    tolerated.
    """
    height, width = scene.height, scene.width
    validate_ground_truth(gt, height, width)
    labels = np.zeros((height, width), dtype=np.int32)
    for idx, poly in enumerate(gt.polygons):
        rows, cols = _rasterize_polygon(poly, height, width)
        prev = labels[rows, cols]
        clash = (prev != 0) & (prev != poly.land_cover)
        if np.any(clash):
            r, c = rows[clash][0], cols[clash][0]
            raise AnnotationConflictError(
                f"pixel ({r}, {c}) claimed by class {int(prev[clash][0])} "
                f"and class {poly.land_cover} (polygon {idx})"
            )
        labels[rows, cols] = poly.land_cover
    return labels


def rasterize_groups(scene: HyperspectralScene, gt: GroundTruth) -> np.ndarray:
    """Group-id map (H, W): -1 outside polygons, else the polygon's group id."""
    if any(p.group is None for p in gt.polygons):
        raise ValueError("ground truth has no group ids; run group_polygons first")
    out = np.full((scene.height, scene.width), -1, dtype=np.int32)
    for poly in gt.polygons:
        rows, cols = _rasterize_polygon(poly, scene.height, scene.width)
        out[rows, cols] = poly.group
    return out


def group_polygons(gt: GroundTruth, radius_m: float = 50.0, gsd_m: float = 1.0) -> tuple[GroundTruth, int]:
    """Group polygons whose boundary distance is within ``radius_m``.

    Two polygons share a group iff they are connected in the graph whose
    edges join polygon pairs with minimum boundary distance <= radius.
    Group ids are 0..n_groups-1, ordered by each component's smallest
    polygon index, so the partition does not depend on input order.
    """
    if radius_m <= 0:
        raise ValueError("radius_m must be positive")
    n = len(gt.polygons)
    radius_px = radius_m / gsd_m
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    boxes = [
        (p.vertices[:, 0].min(), p.vertices[:, 0].max(), p.vertices[:, 1].min(), p.vertices[:, 1].max())
        for p in gt.polygons
    ]
    for i in range(n):
        for j in range(i + 1, n):
            bi, bj = boxes[i], boxes[j]
            gap_x = max(bj[0] - bi[1], bi[0] - bj[1], 0.0)
            gap_y = max(bj[2] - bi[3], bi[2] - bj[3], 0.0)
            if np.hypot(gap_x, gap_y) > radius_px:
                continue
            if polygon_boundary_distance(gt.polygons[i].vertices, gt.polygons[j].vertices) <= radius_px:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    roots = [find(i) for i in range(n)]
    order = sorted(set(roots))
    relabel = {root: k for k, root in enumerate(order)}
    polygons = [replace(p, group=relabel[roots[i]]) for i, p in enumerate(gt.polygons)]
    return GroundTruth(polygons=polygons), len(order)


def class_pixel_counts(
    label_map: np.ndarray, group_map: np.ndarray, n_classes: int | None = None
) -> GroupClassMatrix:
    """Tally pixels per (group, class) into a GroupClassMatrix."""
    label_map = np.asarray(label_map)
    group_map = np.asarray(group_map)
    if label_map.shape != group_map.shape:
        raise ValueError("label map and group map must share dimensions")
    labeled = (label_map > 0) & (group_map >= 0)
    c = int(n_classes) if n_classes is not None else int(label_map.max(initial=0))
    n_groups = int(group_map.max(initial=-1)) + 1
    if n_groups == 0 or c == 0:
        return GroupClassMatrix(np.zeros((max(n_groups, 0), max(c, 0)), dtype=np.int64))
    flat = group_map[labeled].astype(np.int64) * c + (label_map[labeled].astype(np.int64) - 1)
    counts = np.bincount(flat, minlength=n_groups * c)
    return GroupClassMatrix(counts.reshape(n_groups, c))


# -- synthetic scenes ----------------------------------------------------------


def gaussian_bump_endmembers(
    rng: np.random.Generator, n: int, wavelengths_um: np.ndarray,
    n_bumps: tuple[int, int] = (3, 6), width_um: tuple[float, float] = (0.05, 0.4),
) -> np.ndarray:
    """Smooth endmember spectra in [0, 1]: a base level plus Gaussian bumps."""
    wl = np.asarray(wavelengths_um, dtype=np.float64)
    out = np.empty((n, wl.size), dtype=np.float64)
    for i in range(n):
        base = rng.uniform(0.02, 0.25)
        spectrum = np.full(wl.size, base)
        for _ in range(rng.integers(n_bumps[0], n_bumps[1] + 1)):
            center = rng.uniform(wl[0], wl[-1])
            width = rng.uniform(*width_um)
            amp = rng.uniform(0.1, 0.6)
            spectrum += amp * np.exp(-0.5 * ((wl - center) / width) ** 2)
        peak = spectrum.max()
        if peak > 0.95:
            spectrum *= 0.95 / peak
        out[i] = spectrum
    return out


def _random_convex_polygon(rng, x0, y0, w, h) -> np.ndarray:
    """Rectangle or clipped-corner rectangle inside [x0, x0+w] x [y0, y0+h]."""
    if rng.random() < 0.5 or w < 6 or h < 6:
        return np.array(
            [[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]], dtype=np.float64
        )
    cx = rng.integers(1, max(2, w // 3) + 1)
    cy = rng.integers(1, max(2, h // 3) + 1)
    return np.array(
        [
            [x0 + cx, y0],
            [x0 + w, y0],
            [x0 + w, y0 + h - cy],
            [x0 + w - cx, y0 + h],
            [x0, y0 + h],
            [x0, y0 + cy],
        ],
        dtype=np.float64,
    )


def generate_synthetic_scene(
    seed: int,
    height: int,
    width: int,
    bands: int,
    n_materials: int,
    n_polygons: int,
    gsd_m: float = 1.0,
    brightness_jitter: float = 0.15,
    noise_sigma: float = 0.01,
    wavelength_range_um: tuple[float, float] = (0.4, 2.5),
    class_budget: int = 32,
    max_attempts_per_polygon: int = 200,
) -> tuple[HyperspectralScene, GroundTruth]:
    """Seeded synthetic scene: smooth endmembers, jitter and noise, packed polygons.

    Each polygon is labeled with one of ``n_materials`` land-cover ids
    (cycled so every material appears when n_polygons >= n_materials);
    polygons never overlap. Pixels get their material spectrum scaled by a
    per-pixel brightness factor plus iid Gaussian noise, clipped at zero.
    """
    if min(height, width, bands, n_materials, n_polygons) <= 0:
        raise ValueError("all size arguments must be positive")
    if n_materials > class_budget:
        raise ValueError(f"n_materials exceeds the class budget of {class_budget}")
    rng = np.random.default_rng(seed)
    axis = SpectralAxis.linear(wavelength_range_um[0], wavelength_range_um[1], bands)
    endmembers = gaussian_bump_endmembers(rng, n_materials + 1, axis.wavelengths_um)
    background = endmembers[n_materials]

    max_side_y = max(4, height // 4)
    max_side_x = max(4, width // 4)
    placed: list[tuple[int, int, int, int]] = []
    polygons: list[Polygon] = []
    for idx in range(n_polygons):
        for attempt in range(max_attempts_per_polygon):
            h = int(rng.integers(3, max_side_y + 1))
            w = int(rng.integers(3, max_side_x + 1))
            if height - h - 1 < 1 or width - w - 1 < 1:
                continue
            y0 = int(rng.integers(0, height - h))
            x0 = int(rng.integers(0, width - w))
            box = (x0, x0 + w, y0, y0 + h)
            if all(
                box[1] <= b[0] or b[1] <= box[0] or box[3] <= b[2] or b[3] <= box[2]
                for b in placed
            ):
                placed.append(box)
                vertices = _random_convex_polygon(rng, x0, y0, w, h)
                polygons.append(
                    Polygon(
                        vertices=vertices,
                        land_cover=(idx % n_materials) + 1,
                        land_use=(idx % 12) + 1,
                    )
                )
                break
        else:
            raise SceneGenerationError(
                f"could not place polygon {idx} after {max_attempts_per_polygon} attempts"
            )

    gt = GroundTruth(polygons=polygons)
    cube = np.empty((height, width, bands), dtype=np.float64)
    cube[:] = background[None, None, :]
    material_map = np.zeros((height, width), dtype=np.int32)
    for poly in polygons:
        rows, cols = _rasterize_polygon(poly, height, width)
        material_map[rows, cols] = poly.land_cover
        cube[rows, cols] = endmembers[poly.land_cover - 1][None, :]

    factors = 1.0 + rng.uniform(-brightness_jitter, brightness_jitter, size=(height, width))
    cube *= factors[:, :, None]
    if noise_sigma > 0:
        cube += rng.normal(0.0, noise_sigma, size=cube.shape)
    np.maximum(cube, 0.0, out=cube)
    scene = HyperspectralScene(cube=cube.astype(np.float32), gsd_m=gsd_m, axis=axis)
    return scene, gt


# -- file formats --------------------------------------------------------------


def save_scene(scene: HyperspectralScene, path: str | Path) -> None:
    """Write band-interleaved-by-pixel float32 (little endian) + JSON sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(scene.cube, dtype="<f4").tobytes())
    header = {
        "height": scene.height,
        "width": scene.width,
        "bands": scene.band_count,
        "gsd_m": scene.gsd_m,
        "wavelengths_um": [float(w) for w in scene.axis.wavelengths_um],
    }
    Path(str(path) + ".json").write_text(json.dumps(header, sort_keys=True, indent=1))


def load_scene(path: str | Path) -> HyperspectralScene:
    path = Path(path)
    header = json.loads(Path(str(path) + ".json").read_text())
    shape = (header["height"], header["width"], header["bands"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != shape[0] * shape[1] * shape[2]:
        raise ValueError(f"scene file size does not match header dimensions {shape}")
    return HyperspectralScene(
        cube=raw.reshape(shape).copy(),
        gsd_m=float(header["gsd_m"]),
        axis=SpectralAxis(np.array(header["wavelengths_um"])),
    )


def save_ground_truth(gt: GroundTruth, path: str | Path) -> None:
    payload = {
        "polygons": [
            {
                "vertices": [[float(x), float(y)] for x, y in p.vertices],
                "land_cover": int(p.land_cover),
                "land_use": int(p.land_use),
                "group": None if p.group is None else int(p.group),
            }
            for p in gt.polygons
        ]
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


def load_ground_truth(path: str | Path) -> GroundTruth:
    payload = json.loads(Path(path).read_text())
    polygons = [
        Polygon(
            vertices=np.array(entry["vertices"], dtype=np.float64),
            land_cover=int(entry["land_cover"]),
            land_use=int(entry["land_use"]),
            group=None if entry.get("group") is None else int(entry["group"]),
        )
        for entry in payload["polygons"]
    ]
    return GroundTruth(polygons=polygons)

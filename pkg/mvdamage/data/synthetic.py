"""Procedural multi-view building scenes with exact damage labels.

Ground views show one façade each (ground-1/3 the long side, ground-2/4 the
short side); the overhead view shows the roof plan. Damage is painted over a
fixed fraction of the building pixels of every view that shows it, so the
label can be read back from pixel counts.
"""

import logging
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple, Union

import cv2
import numpy as np

from mvdamage.models import GROUND_ROLES, NUM_DAMAGE_STATES, VIEW_ROLES, DamageState, ViewRole

from .image import np_save_image, save_mask
from .manifest import (
    DatasetManifest,
    ManifestError,
    MultiViewSample,
    ViewFiles,
    _check_fractions,
    largest_remainder,
)

IMAGE_SIZE = 64
# Smallest canvas the scene layout fits in
MIN_IMAGE_SIZE = 32
# Share of building pixels painted as damage, by damage state
DAMAGE_FRACTIONS = (0.0, 0.12, 0.3, 0.5, 0.75)
# Roof damage (visible overhead) starts at this state
ROOF_DAMAGE_LEVEL = DamageState.DS_3

Color = Tuple[int, int, int]

WALL_COLORS: Tuple[Color, ...] = (
    (214, 204, 180),
    (188, 168, 146),
    (206, 210, 198),
    (172, 184, 196),
    (224, 206, 166),
)
ROOF_COLORS: Tuple[Color, ...] = ((128, 64, 52), (92, 94, 104), (146, 116, 84), (74, 76, 72))
SKY_TOP = (142, 184, 228)
SKY_HORIZON = (196, 216, 238)
GRASS = (104, 124, 82)
ROAD = (118, 118, 114)
WINDOW = (46, 56, 78)
DOOR = (96, 64, 42)
TRUNK = (80, 62, 44)
BREACH = (28, 22, 20)
DEBRIS = (92, 74, 58)
DECKING = (176, 146, 96)

logger = logging.getLogger(__name__)


class SyntheticSceneSpec(NamedTuple):
    building_id: str
    # x, y, width, depth of the roof plan in overhead pixels
    footprint: Tuple[int, int, int, int]
    wall_height: int
    wall_color: Color
    roof_color: Color
    texture_seed: int
    damage_level: DamageState
    damaged_views: Tuple[ViewRole, ...]
    clutter_density: float
    # (dx, dy) camera offset per view, in VIEW_ROLES order
    jitter: Tuple[Tuple[int, int], ...]
    image_size: int = IMAGE_SIZE

    @property
    def damage_fraction(self) -> float:
        return DAMAGE_FRACTIONS[self.damage_level]

    @property
    def directional(self) -> bool:
        return sum(1 for r in self.damaged_views if r.is_ground) == 1

    def shows_damage(self, role: ViewRole) -> bool:
        return role in self.damaged_views

    def view_jitter(self, role: ViewRole) -> Tuple[int, int]:
        return self.jitter[VIEW_ROLES.index(role)]

    def to_dict(self) -> dict:
        return {
            "building_id": self.building_id,
            "footprint": list(self.footprint),
            "wall_height": self.wall_height,
            "wall_color": list(self.wall_color),
            "roof_color": list(self.roof_color),
            "texture_seed": self.texture_seed,
            "damage_level": int(self.damage_level),
            "damaged_views": [r.value for r in self.damaged_views],
            "clutter_density": self.clutter_density,
            "jitter": [list(j) for j in self.jitter],
            "image_size": self.image_size,
        }


class RenderedView(NamedTuple):
    image: np.ndarray  # H×W×3 uint8
    mask: np.ndarray  # H×W uint8 building mask
    damage: np.ndarray  # H×W uint8, pixels painted as damage


def _tint(palette: Sequence[Color], rng: np.random.Generator, spread: int) -> Color:
    base = np.array(palette[int(rng.integers(len(palette)))])
    return tuple(int(c) for c in np.clip(base + rng.integers(-spread, spread + 1, 3), 0, 255))


def _shade(color: Color, delta: int) -> Color:
    return tuple(int(np.clip(c + delta, 0, 255)) for c in color)


def _fill(image: np.ndarray, region: np.ndarray, color: Color, rng: np.random.Generator, amplitude: int):
    count = int(region.sum())
    if count:
        noise = rng.integers(-amplitude, amplitude + 1, (count, 3))
        image[region] = np.clip(np.array(color) + noise, 0, 255).astype(np.uint8)


def draw_scene_spec(
    building_id: str,
    level: int,
    directional: bool,
    rng: np.random.Generator,
    image_size: int = IMAGE_SIZE,
) -> SyntheticSceneSpec:
    s = image_size
    width = int(rng.integers(s * 3 // 8, s * 9 // 16 + 1))
    depth = int(rng.integers(s * 5 // 16, s // 2 + 1))
    x = int(rng.integers(6, s - width - 6 + 1))
    y = int(rng.integers(6, s - depth - 6 + 1))

    level = DamageState(int(level))
    if level == DamageState.DS_0:
        damaged: Tuple[ViewRole, ...] = ()
    elif directional:
        damaged = (GROUND_ROLES[int(rng.integers(len(GROUND_ROLES)))],)
    else:
        damaged = GROUND_ROLES
    if level >= ROOF_DAMAGE_LEVEL:
        damaged += (ViewRole.OVERHEAD,)

    return SyntheticSceneSpec(
        building_id=building_id,
        footprint=(x, y, width, depth),
        wall_height=int(rng.integers(s // 5, s * 5 // 16 + 1)),
        wall_color=_tint(WALL_COLORS, rng, 12),
        roof_color=_tint(ROOF_COLORS, rng, 10),
        texture_seed=int(rng.integers(2 ** 31)),
        damage_level=level,
        damaged_views=damaged,
        clutter_density=float(rng.uniform(0.2, 1.0)),
        jitter=tuple((int(rng.integers(-3, 4)), int(rng.integers(-2, 3))) for _ in VIEW_ROLES),
        image_size=s,
    )


def _paint_damage(
    image: np.ndarray,
    region: np.ndarray,
    fraction: float,
    colors: Tuple[Color, Color],
    rng: np.random.Generator,
) -> np.ndarray:
    """Paint round(fraction · |region|) pixels of region, chosen as the top of
    a blurred random field so damage forms blobs rather than salt noise"""
    damage = np.zeros(region.shape, np.uint8)
    candidates = np.flatnonzero(region)
    count = int(round(fraction * candidates.size))
    if count == 0:
        return damage

    field = cv2.GaussianBlur(rng.random(region.shape).astype(np.float32), (0, 0), 2.5)
    order = np.argsort(-field.ravel()[candidates], kind="stable")
    chosen = candidates[order[:count]]
    damage.flat[chosen] = 1

    primary = rng.random(count) < 0.7
    flat = image.reshape(-1, 3)
    for pick, color in ((primary, colors[0]), (~primary, colors[1])):
        n = int(pick.sum())
        noise = rng.integers(-10, 11, (n, 3))
        flat[chosen[pick]] = np.clip(np.array(color) + noise, 0, 255).astype(np.uint8)
    return damage


def _render_ground(spec: SyntheticSceneSpec, role: ViewRole, rng: np.random.Generator) -> RenderedView:
    s = spec.image_size
    dx, dy = spec.view_jitter(role)
    image = np.zeros((s, s, 3), np.uint8)

    horizon = int(s * 0.66) + dy
    t = np.linspace(0.0, 1.0, horizon)[:, None]
    sky = (1.0 - t) * np.array(SKY_TOP) + t * np.array(SKY_HORIZON)
    image[:horizon] = sky[:, None, :].astype(np.uint8)
    ground = np.zeros((s, s), bool)
    ground[horizon:] = True
    _fill(image, ground, GRASS, rng, 10)

    # Trees behind the building, partly occluded by it
    for _ in range(int(round(spec.clutter_density * 4))):
        r = int(rng.integers(3, 8))
        cx = int(rng.integers(0, s))
        cy = horizon - int(rng.integers(r, 2 * r + 1))
        color = (int(rng.integers(40, 72)), int(rng.integers(96, 140)), int(rng.integers(40, 70)))
        cv2.line(image, (cx, cy), (cx, horizon), TRUNK, 1)
        cv2.circle(image, (cx, cy), r, color, -1)

    facade = spec.footprint[2] if role in (ViewRole.GROUND_1, ViewRole.GROUND_3) else spec.footprint[3]
    left = int(np.clip((s - facade) // 2 + dx, 1, s - facade - 1))
    right = left + facade
    top = horizon - spec.wall_height
    roof_height = max(4, spec.wall_height // 3)

    mask = np.zeros((s, s), np.uint8)
    mask[top:horizon, left:right] = 1
    roof_outline = np.array(
        [
            [left - 2, top - 1],
            [right + 1, top - 1],
            [right - 4, top - roof_height],
            [left + 3, top - roof_height],
        ],
        np.int32,
    )
    cv2.fillPoly(mask, [roof_outline], 1)
    building = mask.astype(bool)

    wall = np.zeros((s, s), bool)
    wall[top:horizon, left:right] = True
    _fill(image, wall, spec.wall_color, rng, 5)
    image[top:horizon:3, left:right] = _shade(spec.wall_color, -18)

    roof = building & ~wall
    _fill(image, roof, spec.roof_color, rng, 6)
    for row in range(top - roof_height, top, 2):
        image[row][roof[row]] = _shade(spec.roof_color, -22)

    window = max(3, spec.wall_height // 5)
    for wx in np.linspace(left + 3, right - 3 - window, num=max(2, facade // 12)).astype(int):
        image[top + 3 : top + 3 + window, wx : wx + window] = WINDOW
    door = (left + right) // 2 - 2
    image[horizon - window - 3 : horizon, door : door + 4] = DOOR

    # Bushes in front of the building stay below the horizon
    for _ in range(int(round(spec.clutter_density * 3))):
        r = int(rng.integers(2, 5))
        center = (int(rng.integers(0, s)), int(rng.integers(horizon + r + 1, s + r)))
        cv2.circle(image, center, r, _shade(GRASS, -40), -1)

    damage = np.zeros((s, s), np.uint8)
    if spec.shows_damage(role):
        damage = _paint_damage(image, building, spec.damage_fraction, (BREACH, DEBRIS), rng)
    return RenderedView(image, mask, damage)


def _render_overhead(spec: SyntheticSceneSpec, rng: np.random.Generator) -> RenderedView:
    s = spec.image_size
    dx, dy = spec.view_jitter(ViewRole.OVERHEAD)
    image = np.zeros((s, s, 3), np.uint8)
    _fill(image, np.ones((s, s), bool), GRASS, rng, 12)

    road = np.zeros((s, s), bool)
    road[s - 7 : s - 1] = True
    _fill(image, road, ROAD, rng, 4)
    image[s - 4, ::6] = (220, 220, 210)

    for _ in range(int(round(spec.clutter_density * 5))):
        r = int(rng.integers(3, 7))
        center = (int(rng.integers(0, s)), int(rng.integers(0, s)))
        color = (int(rng.integers(30, 60)), int(rng.integers(80, 120)), int(rng.integers(30, 60)))
        cv2.circle(image, center, r, color, -1)

    x, y, width, depth = spec.footprint
    x, y = x + dx, y + dy
    mask = np.zeros((s, s), np.uint8)
    mask[y : y + depth, x : x + width] = 1
    building = mask.astype(bool)
    _fill(image, building, spec.roof_color, rng, 6)

    rows, cols = np.mgrid[0:s, 0:s]
    image[building & ((rows + cols) % 4 == 0)] = _shade(spec.roof_color, -20)
    if width >= depth:
        image[y + depth // 2, x : x + width] = _shade(spec.roof_color, -40)
    else:
        image[y : y + depth, x + width // 2] = _shade(spec.roof_color, -40)

    damage = np.zeros((s, s), np.uint8)
    if spec.shows_damage(ViewRole.OVERHEAD):
        damage = _paint_damage(image, building, spec.damage_fraction, (DECKING, DEBRIS), rng)
    return RenderedView(image, mask, damage)


def render_view(spec: SyntheticSceneSpec, role: ViewRole) -> RenderedView:
    """Deterministic in (spec, role)"""
    rng = np.random.default_rng(np.random.SeedSequence([spec.texture_seed, VIEW_ROLES.index(role)]))
    if role is ViewRole.OVERHEAD:
        return _render_overhead(spec, rng)
    return _render_ground(spec, role, rng)


def draw_labels(n_buildings: int, class_mix: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """Class counts follow class_mix by largest remainder, order is shuffled"""
    counts = largest_remainder(n_buildings, class_mix)
    labels = np.repeat(np.arange(NUM_DAMAGE_STATES), counts)
    return rng.permutation(labels)


def generate_synthetic_dataset(
    n_buildings: int,
    class_mix: Sequence[float],
    directional_fraction: float,
    seed: int,
    out_dir: Union[str, Path],
    image_size: int = IMAGE_SIZE,
) -> DatasetManifest:
    if n_buildings < 5:
        raise ValueError(f"n_buildings must be >= 5, got {n_buildings}")
    _check_fractions(class_mix, NUM_DAMAGE_STATES, "class_mix")
    if not 0.0 <= directional_fraction <= 1.0:
        raise ValueError(f"directional_fraction must be in [0, 1], got {directional_fraction}")
    if image_size < MIN_IMAGE_SIZE:
        raise ValueError(f"image_size must be >= {MIN_IMAGE_SIZE}, got {image_size}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        marker = out_dir / ".write-check"
        marker.write_bytes(b"")
        marker.unlink()
    except OSError as e:
        raise ManifestError(f"output directory {out_dir} is not writable: {e}") from e

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    labels = draw_labels(n_buildings, class_mix, rng)
    damaged = np.flatnonzero(labels > 0)
    n_directional = int(round(directional_fraction * damaged.size))
    directional = set(rng.choice(damaged, size=n_directional, replace=False).tolist()) if n_directional else set()

    samples: List[MultiViewSample] = []
    for index in range(n_buildings):
        building_id = f"b{index:04d}"
        building_rng = np.random.default_rng(np.random.SeedSequence([seed, 1, index]))
        spec = draw_scene_spec(building_id, labels[index], index in directional, building_rng, image_size)

        views = []
        for role in VIEW_ROLES:
            rendered = render_view(spec, role)
            image_path = f"images/{building_id}/{role.value}.png"
            mask_path = f"masks/{building_id}/{role.value}.png"
            np_save_image(rendered.image, out_dir / image_path)
            save_mask(rendered.mask, out_dir / mask_path)
            views.append(ViewFiles(role, image_path, mask_path))

        provenance = {"generator": "synthetic", "seed": seed, **spec.to_dict()}
        samples.append(MultiViewSample(building_id, spec.damage_level, tuple(views), provenance))
        logger.debug("Rendered %s (%s, views %s)", building_id, spec.damage_level.label, spec.damaged_views)

    manifest = DatasetManifest(out_dir, samples)
    manifest.write()
    logger.info(
        "Generated %d buildings (%d directional) in %s",
        n_buildings,
        n_directional,
        out_dir,
    )
    return manifest

"""Bundled scene generators used by the experiments and tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .scene import Bounds, Box, SceneModel, TextureRegion


def noise_texture(size: int = 256, blur: float = 3.0, seed: int = 0,
                  lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    """Tileable blurred noise with features about ``2 * blur`` texels wide."""
    rng = np.random.default_rng(seed)
    t = ndimage.gaussian_filter(rng.random((size, size)), blur, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min())
    return lo + (hi - lo) * t


def stripe_texture(period: int = 20, along: str = "y", size: int = 200, blur: float = 1.5,
                   lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    """Black and white stripes parallel to the ``along`` axis (texture rows run along y)."""
    if size % period:
        raise ValueError("size must be a multiple of the period to tile seamlessly")
    k = np.arange(size)
    wave = ((k // (period // 2)) % 2).astype(float)
    wave = ndimage.gaussian_filter1d(wave, blur, mode="wrap")
    wave = lo + (hi - lo) * wave
    if along == "y":
        return np.tile(wave[None, :], (size, 1))  # varies with x
    if along == "x":
        return np.tile(wave[:, None], (1, size))  # varies with y
    raise ValueError("along must be 'x' or 'y'")


@dataclass(frozen=True)
class Scenario:
    name: str
    scene: SceneModel
    start: tuple
    goal: tuple
    height: float
    notes: dict = field(default_factory=dict)


def empty(size: float = 10.0, zmax: float = 3.0) -> Scenario:
    scene = SceneModel(Bounds(0.0, size, 0.0, size, zmax), 0.9)
    return Scenario("empty", scene, (0.0, 0.0, 2.0), (2.0, 9.0, 2.0), 2.0)


def two_texture(seed: int = 0) -> Scenario:
    """Blank half at x < 5 and richly textured half at x >= 5 of a 10 x 10 m area."""
    region = TextureRegion((5.0, 0.0, 10.0, 10.0), noise_texture(seed=seed), 0.02)
    scene = SceneModel(Bounds(0.0, 10.0, 0.0, 10.0, 3.0), 0.9, (region,))
    return Scenario("two_texture", scene, (0.0, 0.0, 2.0), (2.0, 9.0, 2.0), 2.0)


def xy_stripes() -> Scenario:
    """20 x 20 m floor with stripes constraining x (south) and y (north) off the direct route."""
    x_info = TextureRegion((8.0, 3.0, 13.0, 11.0), stripe_texture(along="y"), 0.02)
    y_info = TextureRegion((8.0, 11.0, 13.0, 20.0), stripe_texture(along="x"), 0.02)
    scene = SceneModel(Bounds(0.0, 20.0, 0.0, 20.0, 3.0), 0.9, (x_info, y_info))
    return Scenario("xy_stripes", scene, (0.0, 0.0, 2.0), (5.0, 19.0, 2.0), 2.0)


def walled_room(seed: int = 0) -> Scenario:
    """12 x 12 m room, blank centre, textured carpets along the south and east walls."""
    b = Bounds(0.0, 12.0, 0.0, 12.0, 3.0)
    t = 0.2
    walls = (Box([0, 0, 0], [12, t, 3], 0.6), Box([0, 12 - t, 0], [12, 12, 3], 0.6),
             Box([0, 0, 0], [t, 12, 3], 0.6), Box([12 - t, 0, 0], [12, 12, 3], 0.6))
    carpets = (TextureRegion((t, t, 12 - t, 2.5), noise_texture(seed=seed), 0.02),
               TextureRegion((9.5, t, 12 - t, 12 - t), noise_texture(seed=seed + 1), 0.02))
    scene = SceneModel(b, 0.9, carpets, walls)
    return Scenario("walled_room", scene, (1.5, 1.5, 1.5), (10.5, 10.5, 1.5), 1.5)


def labyrinth(seed: int = 0) -> Scenario:
    """Corridors between tall walls with textured floor patches in the side passages."""
    b = Bounds(0.0, 16.0, 0.0, 12.0, 3.0)
    walls = (Box([4, 0, 0], [4.4, 8, 3], 0.5), Box([8, 4, 0], [8.4, 12, 3], 0.5),
             Box([12, 0, 0], [12.4, 8, 3], 0.5))
    floor = (TextureRegion((0.0, 0.0, 4.0, 12.0), noise_texture(seed=seed), 0.02),
             TextureRegion((8.4, 0.0, 12.0, 4.0), noise_texture(seed=seed + 1), 0.02))
    scene = SceneModel(b, 0.9, floor, walls)
    return Scenario("labyrinth", scene, (1.0, 1.0, 1.5), (15.0, 1.0, 1.5), 1.5)


GENERATORS = {"empty": empty, "two_texture": two_texture, "xy_stripes": xy_stripes,
              "walled_room": walled_room, "labyrinth": labyrinth}

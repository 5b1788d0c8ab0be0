"""Analytic lighting of flat labels: environments, materials, geometry proxies.

Camera space: the orthographic camera looks down -z, the label faces +z and
the view vector is (0, 0, 1). Shading is Lambert diffuse plus Blinn-Phong
specular under an ambient term and up to eight directional lights, followed
by a Reinhard tonemap.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeding
from .errors import ValidationError

DIMNESS_CLASSES = ("bright", "medium", "dim")
GEOMETRY_KINDS = ("flat", "cylinder", "box")
MAX_LIGHTS = 8

# (ambient per-channel range, light-count range inclusive, radiance-norm range)
_CLASS_TABLE = {
    "bright": ((0.4, 0.8), (2, 5), (0.5, 2.0)),
    "medium": ((0.15, 0.4), (1, 4), (0.3, 1.2)),
    "dim": ((0.02, 0.15), (1, 2), (0.1, 0.6)),
}

METAL_DIFFUSE_ATTENUATION = 0.7
SPEC_EXPONENT_RANGE = (2.0, 512.0)
BOX_TILT_DEG = 15.0
VIEW = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class DirectionalLight:
    direction: tuple
    radiance: tuple


@dataclass(frozen=True)
class EnvironmentLight:
    env_id: str
    ambient: tuple
    lights: tuple = ()
    rotation_deg: float = 0.0

    def validate(self):
        amb = np.asarray(self.ambient, dtype=np.float64)
        if amb.shape != (3,) or not np.all(np.isfinite(amb)) or np.any(amb < 0):
            raise ValidationError("ambient must be 3 finite non-negative floats", "ambient")
        if len(self.lights) > MAX_LIGHTS:
            raise ValidationError(f"at most {MAX_LIGHTS} lights allowed", "lights")
        for lt in self.lights:
            d = np.asarray(lt.direction, dtype=np.float64)
            r = np.asarray(lt.radiance, dtype=np.float64)
            if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-6 or not d[2] > 0:
                raise ValidationError(f"light direction {lt.direction} must be unit with z > 0", "lights")
            if r.shape != (3,) or not np.all(np.isfinite(r)) or np.any(r < 0):
                raise ValidationError("light radiance must be 3 finite non-negative floats", "lights")
        if not 0.0 <= self.rotation_deg < 360.0:
            raise ValidationError("rotation_deg must be in [0, 360)", "rotation_deg")
        return self

    def to_dict(self):
        return {
            "env_id": self.env_id,
            "ambient": list(self.ambient),
            "lights": [
                {"direction": list(lt.direction), "radiance": list(lt.radiance)} for lt in self.lights
            ],
            "rotation_deg": self.rotation_deg,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            env_id=d["env_id"],
            ambient=tuple(float(v) for v in d["ambient"]),
            lights=tuple(
                DirectionalLight(tuple(map(float, lt["direction"])), tuple(map(float, lt["radiance"])))
                for lt in d["lights"]
            ),
            rotation_deg=float(d["rotation_deg"]),
        )


@dataclass(frozen=True)
class MaterialParams:
    roughness: float
    metalness: float
    specular_strength: float

    def validate(self):
        if not 0.0 < self.roughness <= 1.0:
            raise ValidationError("roughness must be in (0, 1]", "roughness")
        if not 0.0 <= self.metalness <= 1.0:
            raise ValidationError("metalness must be in [0, 1]", "metalness")
        if not 0.0 <= self.specular_strength <= 1.0:
            raise ValidationError("specular_strength must be in [0, 1]", "specular_strength")
        return self


@dataclass(frozen=True)
class GeometryProxy:
    kind: str = "flat"
    arc_deg: float | None = None

    def validate(self):
        if self.kind not in GEOMETRY_KINDS:
            raise ValidationError(f"unknown geometry kind {self.kind!r}", "kind")
        if self.kind == "cylinder":
            if self.arc_deg is None or not 0.0 < self.arc_deg <= 180.0:
                raise ValidationError("cylinder arc_deg must be in (0, 180]", "arc_deg")
        return self


@dataclass
class RenderedPair:
    lit: np.ndarray
    albedo: np.ndarray
    label_id: str
    env_id: str
    rotation_deg: float
    material: MaterialParams
    geometry: GeometryProxy
    render_seed: int
    extra: dict = field(default_factory=dict)

    def metadata(self):
        return {
            "label_id": self.label_id,
            "env_id": self.env_id,
            "rotation_deg": self.rotation_deg,
            "material": {
                "roughness": self.material.roughness,
                "metalness": self.material.metalness,
                "specular_strength": self.material.specular_strength,
            },
            "geometry": {"kind": self.geometry.kind, "arc_deg": self.geometry.arc_deg},
            "render_seed": self.render_seed,
            **self.extra,
        }


def _unit_hemisphere(rng):
    # z uniform on (0, 1] gives a uniform area density on the hemisphere
    z = 1.0 - rng.uniform(0.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    r = math.sqrt(max(0.0, 1.0 - z * z))
    d = np.array([r * math.cos(phi), r * math.sin(phi), z])
    return tuple(d / np.linalg.norm(d))


def make_environment(seed, dimness_class, env_id=None):
    if dimness_class not in _CLASS_TABLE:
        raise ValidationError(f"dimness_class must be one of {DIMNESS_CLASSES}", "dimness_class")
    (a_lo, a_hi), (n_lo, n_hi), (r_lo, r_hi) = _CLASS_TABLE[dimness_class]
    rng = seeding.rng("environment", dimness_class, seed)
    ambient = tuple(float(v) for v in rng.uniform(a_lo, a_hi, size=3))
    lights = []
    for _ in range(int(rng.integers(n_lo, n_hi + 1))):
        direction = _unit_hemisphere(rng)
        if dimness_class == "dim":
            # warm firelight: R >= G >= B
            tint = np.sort(rng.uniform(0.3, 1.0, size=3))[::-1]
        else:
            tint = rng.uniform(0.7, 1.0, size=3)
        norm = rng.uniform(r_lo, r_hi)
        radiance = tint / np.linalg.norm(tint) * norm
        lights.append(DirectionalLight(direction, tuple(float(v) for v in radiance)))
    env = EnvironmentLight(
        env_id=env_id or f"{dimness_class}-{seed}",
        ambient=ambient,
        lights=tuple(lights),
    )
    return env.validate()


def rotate_environment(env, angle_deg):
    """Rotate every light about the camera z-axis by ``angle_deg``."""
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    lights = []
    for lt in env.lights:
        x, y, z = lt.direction
        lights.append(replace(lt, direction=(c * x - s * y, s * x + c * y, z)))
    rot = (env.rotation_deg + angle_deg) % 360.0
    if rot >= 360.0:  # float modulo of a tiny negative angle
        rot = 0.0
    return replace(env, lights=tuple(lights), rotation_deg=rot)


def normal_map(geometry, width, height):
    """Per-pixel unit normals, shape (height, width, 3).

    Column ``u`` is sampled at its pixel centre ``x = (u + 0.5) / width``.
    A cylinder spans ``theta = arc * (x - 0.5)``, so its leftmost column sits
    at ``-arc/2 * (1 - 1/width)``. A box tilts the outer quarters by 15
    degrees about the y-axis, creases at 25% and 75% of the width.
    """
    geometry.validate()
    if not isinstance(width, int) or not isinstance(height, int) or width < 1 or height < 1:
        raise ValidationError(f"dimensions must be positive, got {width}x{height}", "width")
    x = (np.arange(width) + 0.5) / width
    if geometry.kind == "flat":
        theta = np.zeros(width)
    elif geometry.kind == "cylinder":
        theta = np.radians(geometry.arc_deg) * (x - 0.5)
    else:
        tilt = math.radians(BOX_TILT_DEG)
        theta = np.where(x < 0.25, -tilt, np.where(x >= 0.75, tilt, 0.0))
    row = np.stack([np.sin(theta), np.zeros(width), np.cos(theta)], axis=-1)
    return np.broadcast_to(row, (height, width, 3)).copy()


def sample_material(seed, roughness_threshold=1.0):
    if not 0.0 < roughness_threshold <= 1.0:
        raise ValidationError("roughness_threshold must be in (0, 1]", "roughness_threshold")
    rng = seeding.rng("material", seed)
    roughness = rng.uniform(0.25 * roughness_threshold, 1.0)
    metal_draw = rng.uniform()
    metal_value = rng.uniform(0.5, 1.0)
    metalness = 0.0 if metal_draw < 0.8 else metal_value
    specular = rng.uniform(0.1, 0.9)
    return MaterialParams(float(roughness), float(metalness), float(specular)).validate()


def specular_exponent(roughness):
    return float(np.clip(2.0 / roughness**2 - 2.0, *SPEC_EXPONENT_RANGE))


def tonemap(x):
    return np.clip(x / (1.0 + x), 0.0, 1.0)


def _check_shapes(albedo, normals):
    if albedo.ndim != 3 or albedo.shape[2] != 3:
        raise ValidationError(f"albedo must be HxWx3, got {albedo.shape}", "albedo")
    if normals.shape != albedo.shape:
        raise ValidationError(
            f"normals shape {normals.shape} does not match albedo {albedo.shape}", "normals"
        )


def shade_hdr(albedo, normals, env, material):
    """Pre-tonemap radiance buffer (linear, unbounded above)."""
    albedo = np.asarray(albedo, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    _check_shapes(albedo, normals)
    material.validate()
    irradiance = np.broadcast_to(np.asarray(env.ambient, dtype=np.float64), albedo.shape).copy()
    spec_sum = np.zeros_like(albedo)
    s = specular_exponent(material.roughness)
    for lt in env.lights:
        l = np.asarray(lt.direction, dtype=np.float64)
        rad = np.asarray(lt.radiance, dtype=np.float64)
        ndotl = np.maximum(0.0, normals @ l)
        irradiance += ndotl[..., None] * rad
        h = l + VIEW
        h /= np.linalg.norm(h)
        ndoth = np.maximum(0.0, normals @ h)
        spec_sum += (ndoth ** s)[..., None] * rad
    diffuse = albedo * irradiance * (1.0 - material.metalness * METAL_DIFFUSE_ATTENUATION)
    spec_color = (1.0 - material.metalness) + albedo * material.metalness
    specular = material.specular_strength * spec_sum * spec_color
    return diffuse + specular


def shade(albedo, normals, env, material):
    return tonemap(shade_hdr(albedo, normals, env, material))


def render_pair(label, env_pool, render_seed, roughness_threshold=1.0):
    """Light one label under a randomly chosen environment, geometry and material.

    Deterministic in ``(label_id, render_seed)``.
    """
    spec, albedo = label
    if not env_pool:
        raise ValidationError("env_pool must not be empty", "env_pool")
    rng = seeding.rng("render", spec.label_id, render_seed)
    env = env_pool[int(rng.integers(len(env_pool)))]
    rotation = float(rng.uniform(0.0, 360.0))
    kind = GEOMETRY_KINDS[int(rng.integers(len(GEOMETRY_KINDS)))]
    arc = float(rng.uniform(30.0, 150.0))
    geometry = GeometryProxy(kind, arc if kind == "cylinder" else None)
    material = sample_material(int(rng.integers(0, 2**63)), roughness_threshold)
    h, w = albedo.shape[:2]
    lit_env = rotate_environment(env, rotation)
    lit = shade(albedo, normal_map(geometry, w, h), lit_env, material)
    return RenderedPair(
        lit=lit,
        albedo=albedo,
        label_id=spec.label_id,
        env_id=env.env_id,
        rotation_deg=lit_env.rotation_deg,
        material=material,
        geometry=geometry,
        render_seed=render_seed,
    )


def load_environment(path, max_lights=MAX_LIGHTS, env_id=None, emitter_quantile=0.98):
    """Best-effort conversion of an equirectangular 8-bit panorama.

    Pixels strictly above the ``emitter_quantile`` of solid-angle-weighted luminance are
    split by median cut into at most ``max_lights`` regions; each region
    becomes one directional light at its energy centroid. The remaining
    pixels' mean radiance becomes the ambient term. Regions behind the label
    (z <= 0) are dropped. Panorama centre maps to +z (toward the camera).
    """
    from .colorspace import load_png

    radiance = load_png(path)
    h, w = radiance.shape[:2]
    lat = math.pi / 2 - (np.arange(h) + 0.5) / h * math.pi
    lon = (np.arange(w) + 0.5) / w * 2 * math.pi - math.pi
    lon_g, lat_g = np.meshgrid(lon, lat)
    dirs = np.stack(
        [np.cos(lat_g) * np.sin(lon_g), np.sin(lat_g), np.cos(lat_g) * np.cos(lon_g)], axis=-1
    )
    d_omega = (math.pi / h) * (2 * math.pi / w) * np.cos(lat_g)
    lum = radiance @ np.array([0.2126, 0.7152, 0.0722])
    energy = lum * d_omega
    threshold = np.quantile(energy, emitter_quantile)
    emitters = energy > threshold

    ys, xs = np.nonzero(emitters)
    regions = [(ys, xs)] if len(ys) else []
    depth = max(0, int(math.floor(math.log2(max(1, max_lights)))))
    for _ in range(depth):
        split = []
        for ry, rx in regions:
            if len(ry) < 2:
                split.append((ry, rx))
                continue
            axis_vals = rx if np.ptp(rx) >= np.ptp(ry) else ry
            order = np.argsort(axis_vals, kind="stable")
            cum = np.cumsum(energy[ry[order], rx[order]])
            cut = int(np.searchsorted(cum, cum[-1] / 2.0)) + 1
            cut = min(max(cut, 1), len(order) - 1)
            split.append((ry[order[:cut]], rx[order[:cut]]))
            split.append((ry[order[cut:]], rx[order[cut:]]))
        regions = split

    lights = []
    for ry, rx in regions[:max_lights]:
        e = energy[ry, rx]
        if e.sum() <= 0:
            continue
        centroid = (dirs[ry, rx] * e[:, None]).sum(axis=0)
        norm = np.linalg.norm(centroid)
        if norm == 0:
            continue
        centroid /= norm
        if centroid[2] <= 0:
            continue
        # radiance-weighted solid angle over pi matches the ambient convention
        rad = (radiance[ry, rx] * d_omega[ry, rx][:, None]).sum(axis=0) / math.pi
        lights.append(DirectionalLight(tuple(float(v) for v in centroid), tuple(float(v) for v in rad)))

    rest = ~emitters
    weights = d_omega[rest]
    if weights.sum() > 0:
        ambient = (radiance[rest] * weights[:, None]).sum(axis=0) / weights.sum()
    else:
        ambient = np.zeros(3)
    return EnvironmentLight(
        env_id=env_id or f"panorama-{Path(path).stem}",
        ambient=tuple(float(v) for v in ambient),
        lights=tuple(lights),
    ).validate()

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labelalbedo.errors import ValidationError
from labelalbedo.colorspace import save_png
from labelalbedo.label_synth import sample_label_batch
from labelalbedo.light_sim import (
    DirectionalLight,
    EnvironmentLight,
    GeometryProxy,
    load_environment,
    MaterialParams,
    make_environment,
    normal_map,
    render_pair,
    rotate_environment,
    sample_material,
    shade,
    shade_hdr,
    specular_exponent,
)

FLAT = GeometryProxy("flat")
MATTE = MaterialParams(roughness=0.5, metalness=0.0, specular_strength=0.0)


def uniform_env():
    return EnvironmentLight("uniform", (1.0, 1.0, 1.0), ())


def random_albedo(seed, h=16, w=16):
    return np.random.default_rng(seed).uniform(0, 1, size=(h, w, 3))


# -- environments -------------------------------------------------------------

@pytest.mark.parametrize("cls", ["bright", "medium", "dim"])
def test_environment_ranges(cls):
    table = {
        "bright": ((0.4, 0.8), (2, 5), (0.5, 2.0)),
        "medium": ((0.15, 0.4), (1, 4), (0.3, 1.2)),
        "dim": ((0.02, 0.15), (1, 2), (0.1, 0.6)),
    }
    (a_lo, a_hi), (n_lo, n_hi), (r_lo, r_hi) = table[cls]
    for seed in range(200):
        env = make_environment(seed, cls)
        assert all(a_lo <= a <= a_hi for a in env.ambient)
        assert n_lo <= len(env.lights) <= n_hi
        for lt in env.lights:
            d = np.array(lt.direction)
            assert abs(np.linalg.norm(d) - 1) <= 1e-6 and d[2] > 0
            assert r_lo <= np.linalg.norm(lt.radiance) <= r_hi + 1e-12


def test_dim_is_warm():
    env = make_environment(3, "dim")
    for lt in env.lights:
        r, g, b = lt.radiance
        assert r >= g >= b


def test_environment_deterministic():
    assert make_environment(3, "bright") == make_environment(3, "bright")


def test_environment_rejects_unknown_class():
    with pytest.raises(ValidationError):
        make_environment(0, "dazzling")


def test_hemisphere_directions_cover_both_halves():
    xs = [lt.direction[0] for s in range(100) for lt in make_environment(s, "bright").lights]
    assert min(xs) < -0.5 and max(xs) > 0.5


# -- rotation -----------------------------------------------------------------

def test_rotate_zero_is_identity():
    env = make_environment(1, "bright")
    assert rotate_environment(env, 0.0) == env


def test_rotate_full_turn():
    env = make_environment(1, "medium")
    out = rotate_environment(env, 360.0)
    for a, b in zip(env.lights, out.lights):
        assert np.allclose(a.direction, b.direction, atol=1e-9, rtol=0)
    assert out.rotation_deg == 0.0


def test_rotate_90_four_times():
    env = make_environment(2, "bright")
    out = env
    for _ in range(4):
        out = rotate_environment(out, 90.0)
    for a, b in zip(env.lights, out.lights):
        assert np.allclose(a.direction, b.direction, atol=1e-9, rtol=0)
    assert out.ambient == env.ambient


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), angle=st.floats(-720, 720, allow_nan=False))
def test_rotate_keeps_validity(seed, angle):
    out = rotate_environment(make_environment(seed, "bright"), angle)
    out.validate()
    assert 0 <= out.rotation_deg < 360


def test_rotate_matches_rotation_matrix():
    env = EnvironmentLight("e", (0, 0, 0), (DirectionalLight((1 / math.sqrt(2), 0, 1 / math.sqrt(2)), (1, 1, 1)),))
    out = rotate_environment(env, 90.0)
    assert np.allclose(out.lights[0].direction, (0, 1 / math.sqrt(2), 1 / math.sqrt(2)), atol=1e-12)
    assert out.rotation_deg == 90.0


# -- normals ------------------------------------------------------------------

def test_flat_normals():
    n = normal_map(FLAT, 8, 8)
    assert n.shape == (8, 8, 3)
    assert np.array_equal(n, np.broadcast_to([0.0, 0.0, 1.0], (8, 8, 3)))


def test_cylinder_center_and_edges():
    w = 9
    n = normal_map(GeometryProxy("cylinder", 180.0), w, 4)
    assert np.allclose(n[0, w // 2], (0, 0, 1), atol=1e-15)
    assert np.argmax(n[0, :, 2]) == w // 2
    # leftmost column sits at -90 deg * (1 - 1/W)
    theta = -math.pi / 2 * (1 - 1 / w)
    assert np.allclose(n[0, 0], (math.sin(theta), 0, math.cos(theta)), atol=1e-12)
    assert np.all(n[..., 2] > 0)


def test_cylinder_even_width_peak_at_center_pair():
    w = 64
    z = normal_map(GeometryProxy("cylinder", 120.0), w, 2)[0, :, 2]
    assert z[w // 2] == z.max() == z[w // 2 - 1]
    assert np.all(np.diff(z[: w // 2]) > 0)


def test_box_normals():
    n = normal_map(GeometryProxy("box"), 16, 2)
    t = math.radians(15)
    assert np.allclose(n[0, 0], (-math.sin(t), 0, math.cos(t)))
    assert np.allclose(n[0, 3], (-math.sin(t), 0, math.cos(t)))
    assert np.allclose(n[0, 4], (0, 0, 1))
    assert np.allclose(n[0, 11], (0, 0, 1))
    assert np.allclose(n[0, 12], (math.sin(t), 0, math.cos(t)))


@pytest.mark.parametrize(
    "geom", [GeometryProxy("flat"), GeometryProxy("cylinder", 37.0), GeometryProxy("cylinder", 180.0), GeometryProxy("box")]
)
def test_normals_unit(geom):
    n = normal_map(geom, 33, 5)
    assert np.all(np.abs(np.linalg.norm(n, axis=-1) - 1) <= 1e-6)
    assert np.all(n[..., 2] > 0)


@pytest.mark.parametrize("w,h", [(0, 4), (4, 0), (-1, 3)])
def test_normals_reject_bad_dims(w, h):
    with pytest.raises(ValidationError):
        normal_map(FLAT, w, h)


def test_geometry_validation():
    with pytest.raises(ValidationError):
        GeometryProxy("sphere").validate()
    with pytest.raises(ValidationError):
        GeometryProxy("cylinder", 190.0).validate()
    with pytest.raises(ValidationError):
        GeometryProxy("cylinder").validate()


# -- materials ----------------------------------------------------------------

def test_material_deterministic():
    assert sample_material(42, 0.6) == sample_material(42, 0.6)


def test_material_threshold_one_range():
    for seed in range(1000):
        m = sample_material(seed, 1.0)
        assert 0.25 <= m.roughness <= 1.0
        assert m.metalness == 0.0 or 0.5 <= m.metalness <= 1.0
        assert 0.1 <= m.specular_strength <= 0.9


def test_metalness_zero_fraction():
    zeros = sum(sample_material(seed, 1.0).metalness == 0.0 for seed in range(10_000))
    assert abs(zeros / 10_000 - 0.8) <= 0.02


def test_material_bad_threshold():
    with pytest.raises(ValidationError):
        sample_material(0, 0.0)


# -- shading ------------------------------------------------------------------

def test_specular_exponent_clamp():
    assert specular_exponent(1.0) == 2.0
    assert specular_exponent(1e-9) == 512.0
    assert specular_exponent(0.5) == pytest.approx(6.0)


def test_uniform_ambient_identity_pre_tonemap():
    alb = random_albedo(0)
    hdr = shade_hdr(alb, normal_map(FLAT, 16, 16), uniform_env(), MATTE)
    assert np.max(np.abs(hdr - alb)) <= 1e-6


def test_uniform_ambient_tonemap_closed_form():
    alb = random_albedo(1)
    lit = shade(alb, normal_map(FLAT, 16, 16), uniform_env(), MATTE)
    assert np.allclose(lit, alb / (1 + alb), atol=1e-15, rtol=0)


def test_single_head_on_light_gray():
    # hand evaluation: diffuse = 0.5 * (0 + 1 * 1) * 1 = 0.5 ; tonemap -> 1/3
    env = EnvironmentLight("l", (0.0, 0.0, 0.0), (DirectionalLight((0.0, 0.0, 1.0), (1.0, 1.0, 1.0)),))
    lit = shade(np.full((4, 4, 3), 0.5), normal_map(FLAT, 4, 4), env, MATTE)
    assert np.allclose(lit, 1 / 3, atol=1e-15, rtol=0)


def test_black_albedo_leaves_white_specular():
    env = make_environment(5, "bright")
    mat = MaterialParams(0.3, 0.0, 0.8)
    n = normal_map(GeometryProxy("cylinder", 120.0), 16, 4)
    hdr = shade_hdr(np.zeros((4, 16, 3)), n, env, mat)
    # specColor is white so every channel carries only radiance-weighted highlight
    expected = np.zeros((4, 16, 3))
    s = specular_exponent(0.3)
    for lt in env.lights:
        l = np.array(lt.direction)
        h = (l + [0, 0, 1]) / np.linalg.norm(l + [0, 0, 1])
        expected += 0.8 * np.maximum(0, n @ h)[..., None] ** s * np.array(lt.radiance)
    assert np.allclose(hdr, expected, atol=1e-12)


def test_full_formula_against_pixel_loop():
    rng = np.random.default_rng(9)
    alb = rng.uniform(0, 1, (3, 5, 3))
    n = normal_map(GeometryProxy("box"), 5, 3)
    env = make_environment(11, "bright")
    mat = MaterialParams(0.4, 0.7, 0.6)
    out = shade(alb, n, env, mat)
    s = min(max(2 / 0.4**2 - 2, 2), 512)
    for y in range(3):
        for x in range(5):
            a = alb[y, x]
            nn = n[y, x]
            irr = np.array(env.ambient, dtype=float)
            spec = np.zeros(3)
            for lt in env.lights:
                l = np.array(lt.direction)
                rad = np.array(lt.radiance)
                irr = irr + rad * max(0.0, nn @ l)
                h = l + np.array([0, 0, 1.0])
                h = h / np.linalg.norm(h)
                spec = spec + rad * (np.ones(3) * 0.3 + a * 0.7) * max(0.0, nn @ h) ** s
            v = a * irr * (1 - 0.7 * 0.7) + 0.6 * spec
            assert np.allclose(out[y, x], np.clip(v / (1 + v), 0, 1), atol=1e-12)


def test_shade_dimension_mismatch():
    with pytest.raises(ValidationError):
        shade(np.zeros((4, 4, 3)), normal_map(FLAT, 5, 4), uniform_env(), MATTE)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), k=st.floats(1.0, 10.0), rough=st.floats(1e-6, 1.0))
def test_monotone_in_ambient_and_finite(seed, k, rough):
    env = make_environment(seed, "medium")
    brighter = EnvironmentLight(env.env_id, tuple(a * k for a in env.ambient), env.lights)
    mat = MaterialParams(rough, 0.3, 0.5)
    alb = random_albedo(seed % 1000, 8, 8)
    n = normal_map(GeometryProxy("cylinder", 150.0), 8, 8)
    base = shade(alb, n, env, mat)
    more = shade(alb, n, brighter, mat)
    assert np.all(np.isfinite(base)) and np.all((base >= 0) & (base <= 1))
    assert np.all(more >= base)


@pytest.mark.parametrize("angle", [0.0, 33.0, 90.0, 271.5])
def test_ambient_only_rotation_invariance(angle):
    env = EnvironmentLight("amb", (0.3, 0.5, 0.7), ())
    alb = random_albedo(4)
    n = normal_map(FLAT, 16, 16)
    mat = MaterialParams(0.2, 0.5, 0.9)
    assert np.array_equal(shade(alb, n, env, mat), shade(alb, n, rotate_environment(env, angle), mat))


# -- render_pair --------------------------------------------------------------

@pytest.fixture(scope="module")
def label():
    return sample_label_batch(0, 1, 32, 32)[0]


def test_render_pair_deterministic(label):
    pool = [make_environment(i, "bright", f"e{i}") for i in range(5)]
    a = render_pair(label, pool, 17)
    b = render_pair(label, pool, 17)
    assert np.array_equal(a.lit, b.lit)
    assert a.metadata() == b.metadata()


def test_render_pair_forced_env(label):
    pool = [make_environment(0, "dim", "only")]
    pair = render_pair(label, pool, 99)
    assert pair.env_id == "only"
    assert pair.lit.shape == pair.albedo.shape
    assert pair.lit.min() >= 0 and pair.lit.max() <= 1


def test_render_pair_empty_pool(label):
    with pytest.raises(ValidationError):
        render_pair(label, [], 0)


def test_render_pair_geometry_ranges(label):
    pool = [make_environment(0, "bright", "e")]
    kinds = set()
    for seed in range(60):
        g = render_pair(label, pool, seed).geometry
        kinds.add(g.kind)
        if g.kind == "cylinder":
            assert 30 <= g.arc_deg <= 150
        else:
            assert g.arc_deg is None
    assert kinds == {"flat", "cylinder", "box"}


def test_every_environment_drawn():
    lbl = sample_label_batch(0, 1, 32, 32)[0]
    pool = [make_environment(i, "medium", f"env-{i:02d}") for i in range(50)]
    # bypass shading cost: only the environment choice matters here
    seen = {render_pair(lbl, pool, seed).env_id for seed in range(1000)}
    assert len(seen) == 50


def test_load_environment_panorama(tmp_path):
    pano = np.full((32, 64, 3), 0.2)
    pano[14:18, 30:34] = 1.0  # in front of the label
    pano[14:18, 0:3] = 1.0  # behind it, dropped
    path = tmp_path / "room.png"
    save_png(path, pano)
    env = load_environment(path, max_lights=4)
    assert env.env_id == "panorama-room"
    assert 1 <= len(env.lights) <= 4
    for light in env.lights:
        assert light.direction[2] > 0.95
    np.testing.assert_allclose(env.ambient, 0.2, atol=0.005)


def test_load_environment_uniform_is_ambient_only(tmp_path):
    save_png(tmp_path / "grey.png", np.full((16, 32, 3), 0.5))
    env = load_environment(tmp_path / "grey.png")
    assert env.lights == ()
    np.testing.assert_allclose(env.ambient, 0.5, atol=0.005)

"""Built-in scenes and the JSON scene-file format.

Scene file schema::

    {
      "name": "my-scene",
      "camera": {"position": [x, y, z], "look_at": [x, y, z], "up": [x, y, z], "fov": 40},
      "materials": {
        "white": {"kind": "diffuse", "albedo": [r, g, b]},
        "lamp":  {"kind": "diffuse", "albedo": [0, 0, 0], "emission": [r, g, b]},
        "shiny": {"kind": "glossy", "albedo": [r, g, b], "exponent": 20}
      },
      "primitives": [
        {"type": "quad", "origin": [...], "edge1": [...], "edge2": [...], "material": "white"},
        {"type": "triangle", "v0": [...], "v1": [...], "v2": [...], "material": "white"},
        {"type": "sphere", "center": [...], "radius": 1.0, "inward": false, "material": "white"}
      ]
    }

Every primitive whose material emits becomes an area light, in file order.
"""
import json

import numpy as np

from .errors import SceneError
from .geometry import QUAD, SPHERE, Camera, Material, Scene

BUILTIN = ("cornell-diffuse", "cornell-glossy", "split-room", "furnace", "bandit-2")


def _oriented_quad(scene, center, a, b, normal, material):
    """Quad centred at ``center`` with edges ``a``, ``b`` whose front faces ``normal``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if np.dot(np.cross(a, b), normal) < 0:
        a, b = b, a
    origin = np.asarray(center, float) - 0.5 * a - 0.5 * b
    return scene.add_quad(origin, a, b, material)


def cornell(glossy=False, light_emission=15.0):
    s = Scene("cornell-glossy" if glossy else "cornell-diffuse",
              Camera((0.0, 1.0, 3.9), (0.0, 1.0, 0.0), (0.0, 1.0, 0.0), 37.0))
    s.material("white", Material("diffuse", (0.75, 0.75, 0.75)))
    s.material("red", Material("diffuse", (0.63, 0.065, 0.05)))
    s.material("green", Material("diffuse", (0.14, 0.45, 0.09)))
    s.material("light", Material("diffuse", (0.0, 0.0, 0.0), emission=(light_emission,) * 3))
    if glossy:
        s.material("box", Material("glossy", (0.7, 0.7, 0.7), exponent=20.0))
    else:
        s.material("box", Material("diffuse", (0.75, 0.75, 0.75)))
    s.add_quad((-1, 0, -1), (0, 0, 2), (2, 0, 0), "white")  # floor
    s.add_quad((-1, 2, -1), (2, 0, 0), (0, 0, 2), "white")  # ceiling
    s.add_quad((-1, 0, -1), (2, 0, 0), (0, 2, 0), "white")  # back
    s.add_quad((-1, 0, -1), (0, 2, 0), (0, 0, 2), "red")  # left
    s.add_quad((1, 0, -1), (0, 0, 2), (0, 2, 0), "green")  # right
    s.add_quad((-0.25, 1.998, -0.25), (0.5, 0, 0), (0, 0, 0.5), "light")
    s.add_box((0.1, 0.0, -0.2), (0.7, 0.6, 0.4), "box", skip=("-y",))
    s.add_box((-0.7, 0.0, -0.7), (-0.1, 1.2, -0.1), "box", skip=("-y",))
    return s


def furnace(albedo=0.5, emission=1.0):
    """Closed unit sphere, uniform emission and albedo: radiance is Le / (1 - albedo) everywhere."""
    s = Scene("furnace", Camera((0.0, 0.0, 0.0), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), 60.0))
    s.material("shell", Material("diffuse", (albedo,) * 3, emission=(emission,) * 3))
    s.add_sphere((0.0, 0.0, 0.0), 1.0, "shell", inward=True)
    return s


def split_room(light_emission=8.0, wall_height=1.5):
    """Four sealed rooms on a 4x4 floor; each room holds two lights only it can see."""
    s = Scene("split-room", Camera((0.0, 8.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, -1.0), 29.0))
    s.material("floor", Material("diffuse", (0.7, 0.7, 0.7)))
    s.material("wall", Material("diffuse", (0.6, 0.6, 0.6)))
    s.material("lamp", Material("diffuse", (0.0, 0.0, 0.0), emission=(light_emission,) * 3))
    h = wall_height
    _oriented_quad(s, (0, 0, 0), (4, 0, 0), (0, 0, 4), (0, 1, 0), "floor")
    for axis in (0, 2):
        for sign in (-1, 1):
            c = [0.0, h / 2, 0.0]
            c[axis] = 2.0 * sign
            n = [0.0, 0.0, 0.0]
            n[axis] = -sign
            along = [0.0, 0.0, 0.0]
            along[2 - axis] = 4.0
            _oriented_quad(s, c, along, (0, h, 0), n, "wall")
    # dividing walls (double sided by construction)
    _oriented_quad(s, (0, h / 2, 0), (0, 0, 4), (0, h, 0), (1, 0, 0), "wall")
    _oriented_quad(s, (0, h / 2, 0), (4, 0, 0), (0, h, 0), (0, 0, 1), "wall")
    # two lights per room, on the room's outer walls, facing inward
    for sx in (-1, 1):
        for sz in (-1, 1):
            _oriented_quad(s, (sx * 1.99, 1.1, sz * 1.0), (0, 0, 0.6), (0, 0.4, 0), (-sx, 0, 0), "lamp")
            _oriented_quad(s, (sx * 1.0, 1.1, sz * 1.99), (0.6, 0, 0), (0, 0.4, 0), (0, 0, -sz), "lamp")
    return s


def bandit2(ratio=3.0, emission=40.0):
    """Small receiver lit by two distant, unoccluded lights whose contributions differ by ``ratio``."""
    s = Scene("bandit-2", Camera((0.0, 3.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, -1.0), 16.0))
    s.material("receiver", Material("diffuse", (0.8, 0.8, 0.8)))
    s.material("dim", Material("diffuse", (0.0, 0.0, 0.0), emission=(emission,) * 3))
    s.material("bright", Material("diffuse", (0.0, 0.0, 0.0), emission=(emission * ratio,) * 3))
    _oriented_quad(s, (0, 0, 0), (1, 0, 0), (0, 0, 1), (0, 1, 0), "receiver")
    for x, mat in ((-5.0, "dim"), (5.0, "bright")):
        c = np.array([x, 10.0, 0.0])
        n = -c / np.linalg.norm(c)
        a = np.cross(n, (0.0, 0.0, 1.0))
        b = np.cross(n, a)
        _oriented_quad(s, c, a / np.linalg.norm(a), b / np.linalg.norm(b), n, mat)
    return s


def builtin_scene(name, **params):
    if name == "cornell-diffuse":
        return cornell(False, **params)
    if name == "cornell-glossy":
        return cornell(True, **params)
    if name == "split-room":
        return split_room(**params)
    if name == "furnace":
        return furnace(**params)
    if name == "bandit-2":
        return bandit2(**params)
    raise SceneError(f"unknown scene {name!r}; choose one of {', '.join(BUILTIN)}")


scenes_builtin = builtin_scene


# ---------------------------------------------------------------------------
# JSON scene files
# ---------------------------------------------------------------------------

def scene_from_dict(data):
    try:
        cam = data.get("camera", {})
        scene = Scene(data.get("name", "scene"), Camera(
            tuple(cam.get("position", (0, 0, 0))), tuple(cam.get("look_at", (0, 0, -1))),
            tuple(cam.get("up", (0, 1, 0))), float(cam.get("fov", 40.0))))
        for name, m in data["materials"].items():
            scene.material(name, Material(m.get("kind", "diffuse"), tuple(m.get("albedo", (0.5, 0.5, 0.5))),
                                          float(m.get("exponent", 0.0)), tuple(m.get("emission", (0, 0, 0)))))
        for p in data["primitives"]:
            kind = p["type"]
            if kind == "quad":
                scene.add_quad(p["origin"], p["edge1"], p["edge2"], p["material"])
            elif kind == "triangle":
                scene.add_triangle(p["v0"], p["v1"], p["v2"], p["material"])
            elif kind == "sphere":
                scene.add_sphere(p["center"], p["radius"], p["material"], bool(p.get("inward", False)))
            else:
                raise SceneError(f"unknown primitive type {kind!r}")
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene description: {exc}") from exc
    scene.kernel_data  # validate eagerly
    return scene


def scene_to_dict(scene):
    names = {i: n for n, i in scene._mat_index.items()}
    out = {
        "name": scene.name,
        "camera": {"position": list(scene.camera.position), "look_at": list(scene.camera.look_at),
                   "up": list(scene.camera.up), "fov": scene.camera.fov},
        "materials": {names[i]: {"kind": m.kind, "albedo": list(m.albedo), "exponent": m.exponent,
                                 "emission": list(m.emission)} for i, m in enumerate(scene.materials)},
        "primitives": [],
    }
    for kind, g, mat in scene.prims:
        g = [float(v) for v in g]
        if kind == SPHERE:
            rec = {"type": "sphere", "center": g[0:3], "radius": abs(g[3]), "inward": g[3] < 0}
        elif kind == QUAD:
            rec = {"type": "quad", "origin": g[0:3], "edge1": g[3:6], "edge2": g[6:9]}
        else:
            v0 = np.array(g[0:3])
            rec = {"type": "triangle", "v0": g[0:3], "v1": list(v0 + g[3:6]), "v2": list(v0 + g[6:9])}
        rec["material"] = names[mat]
        out["primitives"].append(rec)
    return out


def load_scene(path_or_id):
    """Built-in id or path to a JSON scene file."""
    if path_or_id in BUILTIN:
        return builtin_scene(path_or_id)
    if not str(path_or_id).endswith(".json"):
        raise SceneError(f"unknown scene {path_or_id!r}; choose one of {', '.join(BUILTIN)} or a .json file")
    with open(path_or_id) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene, path):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)

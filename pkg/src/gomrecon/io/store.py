"""GoM states, model checkpoints and scene manifests on disk."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diff import ParamStore
from ..geometry import Prolongation, TriMesh
from ..gom import CanonicalGoM, FaceGaussians
from ..rig import Pose
from ..splat import CameraModel
from .container import ContainerError, pack_json, read_container, unpack_json, write_container
from .images import read_png

GOM_KIND = "gom"
CHECKPOINT_KIND = "checkpoint"


def _require(arrays: dict, names, path) -> None:
    missing = [n for n in names if n not in arrays]
    if missing:
        raise ContainerError(f"{path}: missing arrays {missing}")


def gom_arrays(gom: CanonicalGoM) -> dict:
    g = gom.gaussians
    return {
        "__meta__": pack_json({"kind": GOM_KIND, "levels": int(gom.levels), "n_low": int(gom.prolongation.n_low)}),
        "low_vertices": gom.low_mesh.vertices,
        "faces_low": gom.low_mesh.faces,
        "weights_idx": gom.weights_idx,
        "weights_val": gom.weights_val,
        "prolongation_idx": gom.prolongation.idx,
        "prolongation_val": gom.prolongation.val,
        "faces_high": gom.high_faces,
        "gauss_r": g.r,
        "gauss_s": g.s,
        "gauss_c": g.c,
        "gauss_o": g.o,
        "gauss_alpha": g.alpha,
    }


GOM_FIELDS = ("__meta__", "low_vertices", "faces_low", "weights_idx", "weights_val", "prolongation_idx",
              "prolongation_val", "faces_high", "gauss_r", "gauss_s", "gauss_c", "gauss_o", "gauss_alpha")


def save_gom(gom: CanonicalGoM, path) -> None:
    write_container(path, gom_arrays(gom))


def gom_from_arrays(a: dict, source="<arrays>") -> CanonicalGoM:
    _require(a, GOM_FIELDS, source)
    meta = unpack_json(a["__meta__"])
    if meta.get("kind") != GOM_KIND:
        raise ContainerError(f"{source}: expected a GoM container, found kind {meta.get('kind')!r}")
    f64 = lambda x: np.asarray(x, dtype=np.float64)  # noqa: E731
    i64 = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
    faces_high = i64(a["faces_high"])
    for name in ("gauss_r", "gauss_s", "gauss_c", "gauss_o", "gauss_alpha"):
        if len(a[name]) != len(faces_high):
            raise ContainerError(f"{source}: field {name} has {len(a[name])} rows for {len(faces_high)} faces")
    return CanonicalGoM(
        low_mesh=TriMesh(f64(a["low_vertices"]), i64(a["faces_low"])),
        weights_idx=i64(a["weights_idx"]),
        weights_val=f64(a["weights_val"]),
        high_faces=faces_high,
        prolongation=Prolongation(i64(a["prolongation_idx"]), f64(a["prolongation_val"]), int(meta["n_low"])),
        gaussians=FaceGaussians(f64(a["gauss_r"]), f64(a["gauss_s"]), f64(a["gauss_c"]), f64(a["gauss_o"]),
                                f64(a["gauss_alpha"])),
        levels=int(meta["levels"]),
    )


def load_gom(path) -> CanonicalGoM:
    return gom_from_arrays(read_container(path), path)


def save_checkpoint(path, store: ParamStore, meta: dict) -> None:
    arrays = {"__meta__": pack_json({"kind": CHECKPOINT_KIND, **meta})}
    names = store.names()
    arrays["adam_steps"] = np.array([store.steps[n] for n in names], dtype=np.int32)
    for n in names:
        arrays[f"param/{n}"] = store.params[n]
        arrays[f"adam_m/{n}"] = store.m[n]
        arrays[f"adam_v/{n}"] = store.v[n]
    write_container(path, arrays)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    a = read_container(path)
    _require(a, ["__meta__", "adam_steps"], path)
    meta = unpack_json(a.pop("__meta__"))
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ContainerError(f"{path}: expected a checkpoint container, found kind {meta.get('kind')!r}")
    names = sorted(k[len("param/"):] for k in a if k.startswith("param/"))
    steps = a["adam_steps"]
    if len(steps) != len(names):
        raise ContainerError(f"{path}: field adam_steps has {len(steps)} entries for {len(names)} parameters")
    store = ParamStore()
    for n, s in zip(names, steps):
        _require(a, [f"adam_m/{n}", f"adam_v/{n}"], path)
        store.params[n] = a[f"param/{n}"]
        store.m[n] = a[f"adam_m/{n}"]
        store.v[n] = a[f"adam_v/{n}"]
        store.steps[n] = int(s)
    return store, meta


def save_pose(pose: Pose, path) -> None:
    Path(path).write_text(json.dumps(pose.to_json()))


def load_pose(path) -> Pose:
    try:
        return Pose.from_json(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise ValueError(f"{path}: cannot read pose ({exc.strerror})") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: invalid pose file ({exc})") from None


def load_camera(path) -> CameraModel:
    try:
        return CameraModel.load(path)
    except OSError as exc:
        raise ValueError(f"{path}: cannot read camera ({exc.strerror})") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: invalid camera file ({exc})") from None


@dataclass(frozen=True)
class ViewEntry:
    image: Path
    mask: Path
    camera: Path
    pose: Path
    exact: Path | None = None  # optional float sidecar with "image" and "mask"

    def load(self):
        if self.exact is not None and self.exact.exists():
            a = read_container(self.exact)
            _require(a, ["image", "mask"], self.exact)
            image, mask = a["image"].astype(np.float64), a["mask"].astype(np.float64)
        else:
            image, mask = read_png(self.image), read_png(self.mask, mask=True)
        return image, mask, load_pose(self.pose), load_camera(self.camera)


@dataclass(frozen=True)
class SceneManifest:
    subject: int
    sources: list
    targets: list
    rig: Path | None = None

    def to_json(self, root: Path) -> dict:
        def rel(p):
            return None if p is None else str(Path(p).relative_to(root))

        def entry(e: ViewEntry):
            d = {"image": rel(e.image), "mask": rel(e.mask), "camera": rel(e.camera), "pose": rel(e.pose)}
            if e.exact is not None:
                d["exact"] = rel(e.exact)
            return d

        return {"subject": self.subject, "rig": rel(self.rig),
                "sources": [entry(e) for e in self.sources], "targets": [entry(e) for e in self.targets]}

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(path.parent), indent=1))


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ValueError(f"{path}: cannot read manifest ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: manifest is not valid JSON ({exc})") from None
    root = path.parent

    def entries(key):
        out = []
        for i, e in enumerate(d.get(key, [])):
            paths = {}
            for field in ("image", "mask", "camera", "pose"):
                if field not in e:
                    raise ValueError(f"{path}: {key}[{i}] lacks field {field!r}")
                p = root / e[field]
                if not p.exists():
                    raise ValueError(f"{path}: {key}[{i}].{field} refers to missing file {p}")
                paths[field] = p
            out.append(ViewEntry(**paths, exact=root / e["exact"] if e.get("exact") else None))
        return out

    if "subject" not in d:
        raise ValueError(f"{path}: manifest lacks field 'subject'")
    sources = entries("sources")
    if not sources:
        raise ValueError(f"{path}: manifest lists no sources")
    rig = root / d["rig"] if d.get("rig") else None
    if rig is not None and not rig.exists():
        raise ValueError(f"{path}: rig refers to missing file {rig}")
    return SceneManifest(int(d["subject"]), sources, entries("targets"), rig)

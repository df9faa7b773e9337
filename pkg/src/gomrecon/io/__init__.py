"""On-disk formats: tensor containers, PNG images, manifests and checkpoints."""

from .container import (ContainerError, decode_container, encode_container, pack_json, read_container,
                        unpack_json, write_container)
from .images import linear_to_srgb, read_png, srgb_to_linear, write_png
from .store import (SceneManifest, ViewEntry, gom_arrays, gom_from_arrays, load_camera, load_checkpoint,
                    load_gom, load_manifest, load_pose, save_checkpoint, save_gom, save_pose)

__all__ = [
    "ContainerError", "SceneManifest", "ViewEntry", "decode_container", "encode_container", "gom_arrays",
    "gom_from_arrays", "linear_to_srgb", "load_camera", "load_checkpoint", "load_gom", "load_manifest", "load_pose",
    "pack_json", "read_container", "read_png", "save_checkpoint", "save_gom", "save_pose",
    "srgb_to_linear", "unpack_json", "write_container", "write_png",
]

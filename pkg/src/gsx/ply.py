"""Binary little-endian PLY reader/writer for Gaussian clouds.

The vertex layout follows the community 3DGS convention:
``x y z nx ny nz f_dc_0..2 [f_rest_*] opacity scale_0..2 rot_0..3
[obj_0..obj_{d-1}]``. Opacity is stored as a pre-sigmoid logit and scale
as log-stddev; both are decoded on load. Normals are written as zeros.
``f_rest`` properties are present only for SH degree > 0; ``obj_*``
properties are optional and decode to zeros when absent.
"""

from __future__ import annotations

import numpy as np

from gsx.types import GaussianCloud, ValidationError, sh_coeff_count


class PlyFormatError(ValueError):
    """Malformed PLY header or payload."""


def _logit(x):
    return np.log(x) - np.log1p(-x)


def _rest_names(sh_degree: int) -> list[str]:
    rest = sh_coeff_count(sh_degree) - 1
    return [f"f_rest_{i}" for i in range(3 * rest)]


def _property_names(sh_degree: int, feature_dim: int) -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += _rest_names(sh_degree)
    names += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    names += [f"obj_{i}" for i in range(feature_dim)]
    return names


def save_gaussian_ply(cloud: GaussianCloud, path) -> None:
    """Write a cloud to ``path``; the cloud must satisfy its invariants."""
    cloud.validate()
    n = cloud.count
    deg = cloud.sh_degree if n else 0
    d = cloud.feature_dim if n else 0
    names = _property_names(deg, d)
    rec = np.zeros(n, dtype=[(name, "<f4") for name in names])
    if n:
        rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype(np.float32)
        h = sh_coeff_count(deg)
        for c in range(3):
            rec[f"f_dc_{c}"] = cloud.color_coeffs[:, c, 0]
        for c in range(3):
            for j in range(1, h):
                rec[f"f_rest_{c * (h - 1) + j - 1}"] = cloud.color_coeffs[:, c, j]
        rec["opacity"] = _logit(np.clip(cloud.opacities, 1e-12, 1 - 1e-12))
        for a in range(3):
            rec[f"scale_{a}"] = np.log(cloud.scales[:, a])
        for a in range(4):
            rec[f"rot_{a}"] = cloud.rotations[:, a]
        for i in range(d):
            rec[f"obj_{i}"] = cloud.object_features[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def load_gaussian_ply(path) -> GaussianCloud:
    """Read a Gaussian cloud; raises :class:`PlyFormatError` on bad input."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"ply"):
        raise PlyFormatError("missing 'ply' magic")
    end = data.find(b"end_header\n")
    if end < 0:
        raise PlyFormatError("missing 'end_header'")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    count = None
    names: list[str] = []
    fmt_seen = False
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise PlyFormatError(f"unsupported format {parts[1]!r}")
            fmt_seen = True
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise PlyFormatError(f"unsupported element {parts[1]!r}")
            count = int(parts[2])
        elif parts[0] == "property":
            if parts[1] not in ("float", "float32"):
                raise PlyFormatError(f"unsupported property type {parts[1]!r}")
            names.append(parts[2])
    if not fmt_seen:
        raise PlyFormatError("missing format declaration")
    if count is None:
        raise PlyFormatError("missing vertex element")

    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    for name in required:
        if name not in names:
            raise PlyFormatError(f"missing required property {name!r}")

    rec_dtype = np.dtype([(name, "<f4") for name in names])
    expected = rec_dtype.itemsize * count
    if len(body) < expected:
        raise PlyFormatError(
            f"truncated payload: expected {expected} bytes, got {len(body)}")
    rec = np.frombuffer(body[:expected], dtype=rec_dtype)

    rest = sorted((n for n in names if n.startswith("f_rest_")),
                  key=lambda n: int(n.split("_")[-1]))
    n_rest = len(rest)
    if n_rest % 3 != 0:
        raise PlyFormatError("f_rest property count not divisible by 3")
    h = 1 + n_rest // 3
    deg = int(round(np.sqrt(h))) - 1
    if sh_coeff_count(deg) != h:
        raise PlyFormatError("f_rest count does not match any SH degree")
    obj = sorted((n for n in names if n.startswith("obj_")),
                 key=lambda n: int(n.split("_")[-1]))

    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    coeffs = np.zeros((count, 3, h))
    for c in range(3):
        coeffs[:, c, 0] = rec[f"f_dc_{c}"]
        for j in range(1, h):
            coeffs[:, c, j] = rec[f"f_rest_{c * (h - 1) + j - 1}"]
    opacities = 1.0 / (1.0 + np.exp(-rec["opacity"].astype(np.float64)))
    scales = np.exp(np.stack([rec[f"scale_{a}"] for a in range(3)], axis=1)
                    .astype(np.float64))
    rotations = np.stack([rec[f"rot_{a}"] for a in range(4)], axis=1).astype(np.float64)
    if obj:
        features = np.stack([rec[name] for name in obj], axis=1).astype(np.float64)
    else:
        features = np.zeros((count, 16))

    try:
        return GaussianCloud(positions, rotations, scales, opacities,
                             coeffs, features)
    except ValidationError as exc:
        raise PlyFormatError(f"loaded cloud violates invariants: {exc}") from exc

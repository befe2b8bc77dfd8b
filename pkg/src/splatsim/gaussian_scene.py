"""In-memory Gaussian-splat scenes and the standard splat PLY interchange format.

A scene is stored struct-of-arrays in float64, in the storage space of the
de-facto splat PLY convention: scales as natural logs, opacity as a logit, and
the rotation quaternion unnormalized in (w, x, y, z) order. Activations are
applied on read by the accessor methods. The PLY payload itself is float32;
float32 -> float64 -> float32 is lossless, so ``save_ply(load_ply(data))`` is
bit-identical on the property payload, while scenes synthesized in memory keep
full float64 precision until they are written out.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from splatsim.errors import (
    DegeneratePrimitiveError,
    InvalidPrimitiveError,
    PlyFormatError,
)

# Degree-0 real spherical harmonic basis constant, 1 / (2 sqrt(pi)).
SH_C0 = 0.28209479177387814

N_SH_REST = 45  # degree 1..3, 15 coefficients per RGB channel

# Vertex property layout of the standard splat PLY, in file order.
_PLY_PROPS = (
    ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    + [f"f_rest_{i}" for i in range(N_SH_REST)]
    + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
)

_FRAME_COMMENT = re.compile(rb"^comment\s+splatsim_frame=(\S+)\s*$")


@dataclass
class Gaussian:
    """One splat primitive, with storage-space (pre-activation) fields."""

    center: np.ndarray              # (3,) meters
    log_scale: np.ndarray           # (3,) log of per-axis stddev in meters
    rotation: np.ndarray            # (4,) quaternion (w, x, y, z), unnormalized
    opacity_logit: float
    sh_dc: np.ndarray               # (3,) degree-0 SH coefficient per channel
    sh_rest: np.ndarray = field(default_factory=lambda: np.zeros(N_SH_REST))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.opacity_logit = float(self.opacity_logit)
        self.sh_dc = np.asarray(self.sh_dc, dtype=np.float64).reshape(3)
        self.sh_rest = np.asarray(self.sh_rest, dtype=np.float64).reshape(N_SH_REST)

    def scale(self):
        """Activated per-axis standard deviations, exp(log_scale)."""
        return np.exp(self.log_scale)

    def opacity(self):
        """Activated opacity, sigmoid(opacity_logit)."""
        return float(_sigmoid(np.asarray(self.opacity_logit)))

    def normalized_rotation(self):
        """Unit quaternion (w, x, y, z)."""
        n = np.linalg.norm(self.rotation)
        if not np.isfinite(n) or n == 0.0:
            raise InvalidPrimitiveError(f"cannot normalize rotation {self.rotation}")
        return self.rotation / n


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quats_to_matrices(q):
    """Batched rotation matrices from (N, 4) quaternions; normalizes first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


class Scene:
    """Ordered collection of Gaussians plus a coordinate-frame tag.

    Immutable by convention: accessors return copies or derived arrays, and
    transforms produce new Scene objects, so instances can be shared across
    threads without locking.
    """

    def __init__(self, centers, log_scales, rotations, opacity_logits, sh_dc,
                 sh_rest=None, frame="arbitrary"):
        n = len(centers)
        self.centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
        self.sh_dc = np.ascontiguousarray(sh_dc, dtype=np.float64).reshape(n, 3)
        if sh_rest is None:
            sh_rest = np.zeros((n, N_SH_REST))
        self.sh_rest = np.ascontiguousarray(sh_rest, dtype=np.float64).reshape(n, N_SH_REST)
        self.frame = str(frame)

    @classmethod
    def empty(cls, frame="arbitrary"):
        z = np.zeros((0, 3))
        return cls(z, z, np.zeros((0, 4)), np.zeros(0), z,
                   np.zeros((0, N_SH_REST)), frame=frame)

    @classmethod
    def from_gaussians(cls, gaussians, frame="arbitrary"):
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(frame=frame)
        return cls(
            np.stack([g.center for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.sh_dc for g in gaussians]),
            np.stack([g.sh_rest for g in gaussians]),
            frame=frame,
        )

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i) -> Gaussian:
        return Gaussian(
            center=self.centers[i],
            log_scale=self.log_scales[i],
            rotation=self.rotations[i],
            opacity_logit=self.opacity_logits[i],
            sh_dc=self.sh_dc[i],
            sh_rest=self.sh_rest[i],
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    # Vectorized activated views.

    def activated_scales(self):
        return np.exp(self.log_scales)

    def activated_opacities(self):
        return _sigmoid(self.opacity_logits)

    def rotation_matrices(self):
        return quats_to_matrices(self.rotations)

    def covariances(self):
        """(N, 3, 3) world-space covariances R diag(s^2) R^T."""
        rot = self.rotation_matrices()
        s2 = np.exp(2.0 * self.log_scales)
        return np.einsum("nij,nj,nkj->nik", rot, s2, rot)

    def base_colors(self):
        """(N, 3) DC-term colors, clamped to [0, 1]."""
        return np.clip(0.5 + SH_C0 * self.sh_dc, 0.0, 1.0)

    def with_centers(self, new_centers):
        """New Scene with replaced centers; other arrays are shared."""
        out = Scene.__new__(Scene)
        out.centers = np.ascontiguousarray(new_centers, dtype=np.float64).reshape(len(self), 3)
        out.log_scales = self.log_scales
        out.rotations = self.rotations
        out.opacity_logits = self.opacity_logits
        out.sh_dc = self.sh_dc
        out.sh_rest = self.sh_rest
        out.frame = self.frame
        return out

    def with_log_scales(self, new_log_scales):
        """New Scene with replaced log-scales; other arrays are shared."""
        out = Scene.__new__(Scene)
        out.centers = self.centers
        out.log_scales = np.ascontiguousarray(new_log_scales, dtype=np.float64).reshape(len(self), 3)
        out.rotations = self.rotations
        out.opacity_logits = self.opacity_logits
        out.sh_dc = self.sh_dc
        out.sh_rest = self.sh_rest
        out.frame = self.frame
        return out


def concat_scenes(a: Scene, b: Scene) -> Scene:
    """Concatenate two scenes, a's Gaussians first."""
    frame = a.frame if a.frame == b.frame else "arbitrary"
    return Scene(
        np.concatenate([a.centers, b.centers]),
        np.concatenate([a.log_scales, b.log_scales]),
        np.concatenate([a.rotations, b.rotations]),
        np.concatenate([a.opacity_logits, b.opacity_logits]),
        np.concatenate([a.sh_dc, b.sh_dc]),
        np.concatenate([a.sh_rest, b.sh_rest]),
        frame=frame,
    )


def covariance(g: Gaussian):
    """World-space covariance R S S^T R^T of one Gaussian.

    S = diag(exp(log_scale)) and R is the rotation matrix of the normalized
    quaternion. The result is symmetric positive definite for finite inputs.
    """
    fields = np.concatenate([g.center, g.log_scale, g.rotation])
    if not np.all(np.isfinite(fields)):
        raise InvalidPrimitiveError("Gaussian has non-finite center/scale/rotation")
    rot = quat_to_matrix(g.normalized_rotation())
    s2 = np.exp(2.0 * g.log_scale)
    return (rot * s2) @ rot.T


def density_at(g: Gaussian, x):
    """Unnormalized Gaussian density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu))."""
    cov = covariance(g)
    d = np.asarray(x, dtype=np.float64).reshape(3) - g.center
    try:
        sol = np.linalg.solve(cov, d)
    except np.linalg.LinAlgError as e:
        raise DegeneratePrimitiveError(f"singular covariance: {e}") from e
    if not np.all(np.isfinite(sol)):
        raise DegeneratePrimitiveError("covariance solve produced non-finite values")
    return float(np.exp(-0.5 * d @ sol))


def base_color(g: Gaussian):
    """DC-term RGB color clamp(0.5 + C0 * sh_dc, 0, 1)."""
    return np.clip(0.5 + SH_C0 * g.sh_dc, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Splat PLY reading/writing
# ---------------------------------------------------------------------------


def _parse_header(data: bytes):
    """Returns (vertex_count, property_names, payload_offset, frame_tag)."""
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise PlyFormatError("not a PLY file (missing 'ply' magic or 'end_header')")
    header_lines = data[:end].split(b"\n")
    payload_offset = end + len(b"end_header\n")

    fmt = None
    count = None
    props = []
    in_vertex = False
    frame = None
    for line in header_lines[1:]:
        line = line.strip()
        if not line or line.startswith(b"comment"):
            m = _FRAME_COMMENT.match(line)
            if m:
                frame = m.group(1).decode("ascii")
            continue
        parts = line.split()
        if parts[0] == b"format":
            fmt = parts[1]
        elif parts[0] == b"element":
            name = parts[1]
            if name != b"vertex":
                raise PlyFormatError(f"unexpected element '{name.decode()}' (only 'vertex' is supported)")
            in_vertex = True
            count = int(parts[2])
        elif parts[0] == b"property":
            if not in_vertex:
                raise PlyFormatError("property declared outside the vertex element")
            if parts[1] not in (b"float", b"float32"):
                raise PlyFormatError(
                    f"property '{parts[-1].decode()}' has type '{parts[1].decode()}', expected float"
                )
            props.append(parts[2].decode("ascii"))
    if fmt != b"binary_little_endian":
        raise PlyFormatError("format must be binary_little_endian 1.0")
    if count is None:
        raise PlyFormatError("missing 'element vertex' declaration")
    return count, props, payload_offset, frame


def _expected_props(n_rest):
    return (
        _PLY_PROPS[:9]
        + [f"f_rest_{i}" for i in range(n_rest)]
        + _PLY_PROPS[9 + N_SH_REST:]
    )


def load_ply(data: bytes) -> Scene:
    """Parse a binary little-endian splat PLY into a Scene.

    The vertex element must carry the standard property sequence; files with
    fewer than 45 f_rest coefficients are zero-padded up to SH degree 3.
    """
    count, props, offset, frame = _parse_header(data)

    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    if n_rest > N_SH_REST:
        raise PlyFormatError(f"too many f_rest properties ({n_rest} > {N_SH_REST})")
    expected = _expected_props(n_rest)
    for want, got in zip(expected, props + [None] * len(expected)):
        if got is None:
            raise PlyFormatError(f"missing required property '{want}'")
        if got != want:
            raise PlyFormatError(f"unexpected property '{got}' where '{want}' was expected")
    if len(props) > len(expected):
        raise PlyFormatError(f"unexpected trailing property '{props[len(expected)]}'")

    n_props = len(props)
    need = count * n_props * 4
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise PlyFormatError(
            f"truncated payload: expected {need} bytes for {count} vertices, got {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype="<f4").reshape(count, n_props)

    raw = raw.astype(np.float64)
    rest = np.zeros((count, N_SH_REST))
    rest[:, :n_rest] = raw[:, 9:9 + n_rest]
    tail = 9 + n_rest
    scene = Scene(
        centers=raw[:, 0:3],
        log_scales=raw[:, tail + 1:tail + 4],
        rotations=raw[:, tail + 4:tail + 8],
        opacity_logits=raw[:, tail],
        sh_dc=raw[:, 6:9],
        sh_rest=rest,
        frame=frame if frame is not None else "arbitrary",
    )
    return scene


def save_ply(scene: Scene) -> bytes:
    """Serialize a Scene as a binary little-endian splat PLY.

    Normals are written as zeros and the full 45 f_rest coefficients are
    always emitted, so load_ply(save_ply(s)) reproduces s exactly and
    save_ply(load_ply(data)) is bit-identical on the property payload.
    """
    n = len(scene)
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"comment splatsim_frame={scene.frame}",
        f"element vertex {n}",
    ]
    header += [f"property float {p}" for p in _PLY_PROPS]
    header.append("end_header")
    header_bytes = ("\n".join(header) + "\n").encode("ascii")

    raw = np.zeros((n, len(_PLY_PROPS)), dtype="<f4")
    raw[:, 0:3] = scene.centers
    # normals (3:6) stay zero
    raw[:, 6:9] = scene.sh_dc
    raw[:, 9:9 + N_SH_REST] = scene.sh_rest
    tail = 9 + N_SH_REST
    raw[:, tail] = scene.opacity_logits
    raw[:, tail + 1:tail + 4] = scene.log_scales
    raw[:, tail + 4:tail + 8] = scene.rotations
    return header_bytes + raw.tobytes()


def load_ply_file(path) -> Scene:
    with open(path, "rb") as f:
        return load_ply(f.read())


def save_ply_file(scene: Scene, path):
    with open(path, "wb") as f:
        f.write(save_ply(scene))

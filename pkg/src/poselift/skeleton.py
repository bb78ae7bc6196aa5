"""Skeleton topology, synthetic motion generation and input normalization.

The default body is a 17-joint tree rooted at the pelvis. Synthetic
sequences come from forward kinematics over sinusoidal joint-angle
programs, so bone lengths are constant by construction; 2D observations
are a pinhole projection of the body placed a few meters from the camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MM_PER_M = 1000.0


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]  # -1 for the root
    root: int = 0

    def __post_init__(self):
        n = len(self.joint_names)
        if len(self.parents) != n:
            raise SkeletonError(f"{n} joints but {len(self.parents)} parent entries")
        if self.parents[self.root] != -1:
            raise SkeletonError("root joint must have parent -1")
        for j, p in enumerate(self.parents):
            if j == self.root:
                continue
            if not 0 <= p < n:
                raise SkeletonError(f"joint {j} has invalid parent {p}")
            if p >= j:
                raise SkeletonError(f"joint {j} must appear after its parent {p}")
        if sum(1 for p in self.parents if p == -1) != 1:
            raise SkeletonError("exactly one root required")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, j) for j, p in enumerate(self.parents) if p != -1]

    def children(self, joint: int) -> list[int]:
        return [j for j, p in enumerate(self.parents) if p == joint]

    def depth_first_order(self) -> list[int]:
        """Joint visiting order for spatial scans: DFS from the root."""
        order: list[int] = []
        stack = [self.root]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(reversed(self.children(j)))
        return order

    def adjacency_raw(self) -> np.ndarray:
        """Symmetric 0/1 bone adjacency, zero diagonal."""
        a = np.zeros((self.joint_count, self.joint_count))
        for p, j in self.edges:
            a[p, j] = 1.0
            a[j, p] = 1.0
        return a


_JOINT_NAMES = (
    "pelvis", "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "spine", "thorax", "neck", "head",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)

_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

# Bone from parent to joint: rest direction (unit) and length in mm.
_BONES: dict[str, tuple[tuple[float, float, float], float]] = {
    "right_hip": ((-1.0, 0.0, 0.0), 132.0),
    "right_knee": ((0.0, -1.0, 0.0), 442.0),
    "right_ankle": ((0.0, -1.0, 0.0), 434.0),
    "left_hip": ((1.0, 0.0, 0.0), 132.0),
    "left_knee": ((0.0, -1.0, 0.0), 442.0),
    "left_ankle": ((0.0, -1.0, 0.0), 434.0),
    "spine": ((0.0, 1.0, 0.0), 236.0),
    "thorax": ((0.0, 1.0, 0.0), 256.0),
    "neck": ((0.0, 1.0, 0.0), 120.0),
    "head": ((0.0, 1.0, 0.0), 115.0),
    "left_shoulder": ((1.0, 0.0, 0.0), 150.0),
    "left_elbow": ((0.0, -1.0, 0.0), 282.0),
    "left_wrist": ((0.0, -1.0, 0.0), 249.0),
    "right_shoulder": ((-1.0, 0.0, 0.0), 150.0),
    "right_elbow": ((0.0, -1.0, 0.0), 282.0),
    "right_wrist": ((0.0, -1.0, 0.0), 249.0),
}


def default_skeleton() -> Skeleton:
    return Skeleton(_JOINT_NAMES, _PARENTS)


def default_bone_lengths() -> np.ndarray:
    """Length per edge of the default skeleton, edge order = child index order."""
    return np.array([_BONES[_JOINT_NAMES[j]][1] for j, p in enumerate(_PARENTS) if p != -1])


@dataclass
class BoneConstraints:
    """Per-edge target lengths; generation must satisfy these with zero slack."""
    edges: list[tuple[int, int]]
    lengths: np.ndarray

    @classmethod
    def default(cls) -> "BoneConstraints":
        return cls(default_skeleton().edges, default_bone_lengths())

    def measure(self, positions: np.ndarray) -> np.ndarray:
        """Bone lengths of (T, J, 3) positions, shape (T, len(edges))."""
        out = np.empty((positions.shape[0], len(self.edges)))
        for i, (p, j) in enumerate(self.edges):
            out[:, i] = np.linalg.norm(positions[:, j] - positions[:, p], axis=-1)
        return out

    def max_deviation(self, positions: np.ndarray) -> float:
        measured = self.measure(positions)
        return float(np.abs(measured - measured[0]).max())


@dataclass
class Camera:
    """Pinhole intrinsics in normalized screen units plus root depth (mm).

    Projection of a root-relative point (X, Y, Z) in mm:
        u = f * X / (z0 + Z) + cx
        v = f * Y / (z0 + Z) + cy
    The body root sits on the optical axis at depth z0.
    """
    f: float
    cx: float
    cy: float
    z0: float

    def project(self, points_mm: np.ndarray) -> np.ndarray:
        depth = self.z0 + points_mm[..., 2]
        if np.any(depth <= 0):
            raise SkeletonError("point at or behind the camera plane")
        u = self.f * points_mm[..., 0] / depth + self.cx
        v = self.f * points_mm[..., 1] / depth + self.cy
        return np.stack([u, v], axis=-1)


@dataclass
class PoseSequence:
    input_2d: np.ndarray   # (T, J, 2) normalized screen units
    target_3d: np.ndarray  # (T, J, 3) root-relative mm
    fps: int
    camera: Camera

    def __post_init__(self):
        self.input_2d = np.asarray(self.input_2d, dtype=np.float64)
        self.target_3d = np.asarray(self.target_3d, dtype=np.float64)
        if self.input_2d.ndim != 3 or self.input_2d.shape[-1] != 2:
            raise SkeletonError(f"input_2d must be (T, J, 2), got {self.input_2d.shape}")
        if self.target_3d.ndim != 3 or self.target_3d.shape[-1] != 3:
            raise SkeletonError(f"target_3d must be (T, J, 3), got {self.target_3d.shape}")
        if self.input_2d.shape[:2] != self.target_3d.shape[:2]:
            raise SkeletonError(
                f"2D/3D frame grids disagree: {self.input_2d.shape} vs {self.target_3d.shape}")

    @property
    def frames(self) -> int:
        return self.input_2d.shape[0]

    @property
    def joints(self) -> int:
        return self.input_2d.shape[1]

    def equal(self, other: "PoseSequence") -> bool:
        return (self.fps == other.fps
                and self.camera == other.camera
                and np.array_equal(self.input_2d, other.input_2d)
                and np.array_equal(self.target_3d, other.target_3d))


MOTION_KINDS = ("walk", "sit", "reach", "idle")

# Angle program per articulating joint: (axis, base_deg, amp_deg, freq_hz,
# phase_offset in turns relative to the sequence's global phase).
_PROGRAMS: dict[str, dict[str, tuple[str, float, float, float, float]]] = {
    "walk": {
        "pelvis": ("y", 0.0, 7.0, 1.0, 0.25),
        "right_hip": ("x", 0.0, 28.0, 1.0, 0.0),
        "left_hip": ("x", 0.0, 28.0, 1.0, 0.5),
        "right_knee": ("x", -22.0, 26.0, 1.0, 0.2),
        "left_knee": ("x", -22.0, 26.0, 1.0, 0.7),
        "spine": ("z", 0.0, 5.0, 1.0, 0.0),
        "right_shoulder": ("x", 0.0, 17.0, 1.0, 0.5),
        "left_shoulder": ("x", 0.0, 17.0, 1.0, 0.0),
        "right_elbow": ("x", -18.0, 11.0, 1.0, 0.55),
        "left_elbow": ("x", -18.0, 11.0, 1.0, 0.05),
    },
    "sit": {
        "right_hip": ("x", -72.0, 14.0, 0.3, 0.0),
        "left_hip": ("x", -72.0, 14.0, 0.3, 0.02),
        "right_knee": ("x", 78.0, 12.0, 0.3, 0.5),
        "left_knee": ("x", 78.0, 12.0, 0.3, 0.52),
        "spine": ("x", 14.0, 7.0, 0.3, 0.25),
        "thorax": ("x", 6.0, 4.0, 0.3, 0.3),
        "right_shoulder": ("x", -10.0, 8.0, 0.3, 0.1),
        "left_shoulder": ("x", -10.0, 8.0, 0.3, 0.12),
        "neck": ("x", 4.0, 3.0, 0.3, 0.4),
    },
    "reach": {
        "right_shoulder": ("z", -35.0, 60.0, 0.4, 0.0),
        "right_elbow": ("x", -25.0, 30.0, 0.4, 0.15),
        "left_shoulder": ("x", -6.0, 6.0, 0.4, 0.5),
        "spine": ("z", -5.0, 9.0, 0.4, 0.05),
        "thorax": ("z", -3.0, 6.0, 0.4, 0.1),
        "pelvis": ("y", 0.0, 5.0, 0.4, 0.3),
        "right_hip": ("x", 0.0, 4.0, 0.4, 0.6),
        "left_hip": ("x", 0.0, 4.0, 0.4, 0.1),
    },
    "idle": {
        "pelvis": ("y", 0.0, 3.0, 0.25, 0.0),
        "spine": ("x", 2.0, 2.5, 0.22, 0.3),
        "thorax": ("x", 1.0, 2.0, 0.22, 0.35),
        "neck": ("x", 1.0, 2.0, 0.3, 0.1),
        "right_shoulder": ("x", -2.0, 3.0, 0.25, 0.2),
        "left_shoulder": ("x", -2.0, 3.0, 0.25, 0.7),
        "right_hip": ("x", 0.0, 2.0, 0.25, 0.5),
        "left_hip": ("x", 0.0, 2.0, 0.25, 0.0),
    },
}


def _rotation(axis: str, angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)
    if axis == "z":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)
    raise SkeletonError(f"unknown rotation axis {axis!r}")


def generate_synthetic_sequence(seed: int, index: int = 0, frames: int = 27,
                                motion: str = "walk", fps: int = 50,
                                noise_std: float = 0.01,
                                skeleton: Skeleton | None = None) -> PoseSequence:
    """Deterministic synthetic sequence; rng derives from (seed, index)."""
    if frames < 1:
        raise SkeletonError(f"frames must be >= 1, got {frames}")
    if motion not in MOTION_KINDS:
        raise SkeletonError(f"unknown motion kind {motion!r}, expected one of {MOTION_KINDS}")
    if noise_std < 0:
        raise SkeletonError("noise_std must be >= 0")
    skel = skeleton if skeleton is not None else default_skeleton()
    rng = np.random.default_rng([int(seed), int(index)])

    camera = Camera(
        f=float(rng.uniform(1.0, 1.3)),
        cx=0.0,
        cy=0.0,
        z0=float(rng.uniform(3000.0, 6000.0)),
    )
    global_phase = rng.uniform(0.0, 1.0)  # turns

    program = _PROGRAMS[motion]
    jitter: dict[str, tuple[float, float, float]] = {}
    for name in sorted(program):
        jitter[name] = (rng.uniform(0.75, 1.25),   # amplitude factor
                        rng.uniform(0.85, 1.15),   # frequency factor
                        rng.uniform(-0.06, 0.06))  # phase wobble, turns

    j_count = skel.joint_count
    name_of = skel.joint_names
    positions = np.zeros((frames, j_count, 3))
    world = np.empty((j_count, 3, 3))
    two_pi = 2.0 * np.pi

    for t in range(frames):
        seconds = t / fps
        for j in range(j_count):
            parent = skel.parents[j]
            base_rot = np.eye(3) if parent == -1 else world[parent]
            entry = program.get(name_of[j])
            if entry is not None:
                axis, base, amp, freq, rel_phase = entry
                amp_f, freq_f, wobble = jitter[name_of[j]]
                phase = two_pi * (global_phase + rel_phase + wobble)
                angle = np.deg2rad(base + amp * amp_f * np.sin(two_pi * freq * freq_f * seconds + phase))
                world[j] = base_rot @ _rotation(axis, angle)
            else:
                world[j] = base_rot
            if parent != -1:
                rest_dir, length = _BONES.get(
                    name_of[j], ((0.0, 1.0, 0.0), 100.0))
                positions[t, j] = positions[t, parent] + length * (world[parent] @ np.asarray(rest_dir))

    target_3d = positions  # root is pinned at the origin, already root-relative
    input_2d = camera.project(target_3d)
    if noise_std > 0:
        input_2d = input_2d + rng.normal(0.0, noise_std, size=input_2d.shape)
    return PoseSequence(input_2d=input_2d, target_3d=target_3d, fps=fps, camera=camera)


def generate_corpus(seed: int, count: int, frames: int = 27, motion: str = "mixed",
                    fps: int = 50, noise_std: float = 0.01) -> list[PoseSequence]:
    """Batch of sequences; motion 'mixed' cycles through all kinds."""
    if count < 0:
        raise SkeletonError("count must be >= 0")
    kinds = MOTION_KINDS if motion == "mixed" else (motion,)
    return [generate_synthetic_sequence(seed, index=i, frames=frames,
                                        motion=kinds[i % len(kinds)], fps=fps,
                                        noise_std=noise_std)
            for i in range(count)]


@dataclass
class NormStats:
    """Per joint-and-coordinate standardization statistics for 2D inputs."""
    mean: np.ndarray           # (J, 2)
    std: np.ndarray            # (J, 2), 1.0 where degenerate
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=bool))

    def apply(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.mean) / self.std

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "degenerate": self.degenerate.astype(int).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64),
                   degenerate=np.asarray(d["degenerate"], dtype=bool))


def normalize_inputs(inputs: np.ndarray) -> tuple[np.ndarray, NormStats]:
    """Standardize (S, T, J, 2) 2D inputs per joint and coordinate.

    Zero-variance channels keep their centered values and get unit scale,
    flagged in the returned stats.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 4 or inputs.shape[-1] != 2:
        raise SkeletonError(f"expected (S, T, J, 2) inputs, got {inputs.shape}")
    mean = inputs.mean(axis=(0, 1))
    std = inputs.std(axis=(0, 1))
    degenerate = std < 1e-12
    std = np.where(degenerate, 1.0, std)
    stats = NormStats(mean=mean, std=std, degenerate=degenerate)
    return stats.apply(inputs), stats

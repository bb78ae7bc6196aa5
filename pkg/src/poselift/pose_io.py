"""Lossless serialization of pose sequences to JSON and CSV.

Floats are written with repr (shortest round-trip form), so save followed
by load reproduces the arrays bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .skeleton import Camera, PoseSequence


class SequenceFormatError(ValueError):
    pass


def _float_list(arr: np.ndarray) -> list:
    return [[float(x) for x in row] for row in arr]


def sequence_to_dict(seq: PoseSequence) -> dict:
    return {
        "fps": int(seq.fps),
        "camera": {"f": seq.camera.f, "cx": seq.camera.cx,
                   "cy": seq.camera.cy, "z0": seq.camera.z0},
        "frames": [
            {"p2d": _float_list(seq.input_2d[t]), "p3d": _float_list(seq.target_3d[t])}
            for t in range(seq.frames)
        ],
    }


def sequence_from_dict(doc: dict, source: str = "<dict>") -> PoseSequence:
    try:
        fps = int(doc["fps"])
        cam = doc["camera"]
        camera = Camera(f=float(cam["f"]), cx=float(cam["cx"]),
                        cy=float(cam["cy"]), z0=float(cam["z0"]))
        frames = doc["frames"]
        if not frames:
            raise SequenceFormatError(f"{source}: sequence has no frames")
        p2d = np.asarray([fr["p2d"] for fr in frames], dtype=np.float64)
        p3d = np.asarray([fr["p3d"] for fr in frames], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, SequenceFormatError):
            raise
        raise SequenceFormatError(f"{source}: malformed sequence document ({e})") from e
    return PoseSequence(input_2d=p2d, target_3d=p3d, fps=fps, camera=camera)


def save_sequence_json(path: str | Path, seq: PoseSequence) -> None:
    Path(path).write_text(json.dumps(sequence_to_dict(seq)) + "\n")


def load_sequence_json(path: str | Path) -> PoseSequence:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SequenceFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return sequence_from_dict(doc, source=str(path))


def save_sequence_csv(path: str | Path, seq: PoseSequence) -> None:
    lines = [
        f"# fps={seq.fps}",
        f"# camera f={seq.camera.f!r} cx={seq.camera.cx!r} cy={seq.camera.cy!r} z0={seq.camera.z0!r}",
        "t,j,u,v,X,Y,Z",
    ]
    for t in range(seq.frames):
        for j in range(seq.joints):
            # float() strips the numpy scalar wrapper so repr emits bare digits
            u, v = (float(c) for c in seq.input_2d[t, j])
            x, y, z = (float(c) for c in seq.target_3d[t, j])
            lines.append(f"{t},{j},{u!r},{v!r},{x!r},{y!r},{z!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequence_csv(path: str | Path) -> PoseSequence:
    path = Path(path)
    fps = None
    camera = None
    rows: dict[tuple[int, int], tuple] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("fps="):
                fps = int(body[4:])
            elif body.startswith("camera"):
                fields = dict(part.split("=", 1) for part in body.split()[1:])
                try:
                    camera = Camera(f=float(fields["f"]), cx=float(fields["cx"]),
                                    cy=float(fields["cy"]), z0=float(fields["z0"]))
                except KeyError as e:
                    raise SequenceFormatError(f"{path}: line {lineno}: camera header missing {e}")
            continue
        if line.startswith("t,"):
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise SequenceFormatError(
                f"{path}: line {lineno}: expected 7 fields t,j,u,v,X,Y,Z, got {len(parts)}")
        try:
            t, j = int(parts[0]), int(parts[1])
            values = tuple(float(p) for p in parts[2:])
        except ValueError as e:
            raise SequenceFormatError(f"{path}: line {lineno}: {e}") from e
        if (t, j) in rows:
            raise SequenceFormatError(f"{path}: line {lineno}: duplicate entry for t={t} j={j}")
        rows[(t, j)] = values
    if fps is None or camera is None:
        raise SequenceFormatError(f"{path}: missing fps or camera header")
    if not rows:
        raise SequenceFormatError(f"{path}: no data rows")
    t_max = max(t for t, _ in rows)
    j_max = max(j for _, j in rows)
    if len(rows) != (t_max + 1) * (j_max + 1):
        raise SequenceFormatError(
            f"{path}: got {len(rows)} rows, expected {(t_max + 1) * (j_max + 1)} "
            f"for a complete (t, j) grid")
    p2d = np.empty((t_max + 1, j_max + 1, 2))
    p3d = np.empty((t_max + 1, j_max + 1, 3))
    for (t, j), vals in rows.items():
        p2d[t, j] = vals[:2]
        p3d[t, j] = vals[2:]
    return PoseSequence(input_2d=p2d, target_3d=p3d, fps=fps, camera=camera)


def save_sequence(path: str | Path, seq: PoseSequence, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt == "json":
        save_sequence_json(path, seq)
    elif fmt == "csv":
        save_sequence_csv(path, seq)
    else:
        raise SequenceFormatError(f"unknown sequence format {fmt!r}")


def load_sequence(path: str | Path) -> PoseSequence:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_sequence_csv(path)
    return load_sequence_json(path)


def save_corpus(directory: str | Path, sequences: list[PoseSequence],
                fmt: str = "json", meta: dict | None = None) -> list[Path]:
    """Write one file per sequence plus a manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, seq in enumerate(sequences):
        p = directory / f"seq_{i:05d}.{fmt}"
        save_sequence(p, seq, fmt=fmt)
        paths.append(p)
    manifest = {
        "count": len(sequences),
        "format": fmt,
        "files": [p.name for p in paths],
        "velocity_loss_applicable": bool(sequences and sequences[0].frames > 1),
    }
    if meta:
        manifest.update(meta)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return paths


def load_corpus(directory: str | Path) -> list[PoseSequence]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise SequenceFormatError(f"{directory}: no manifest.json found")
    try:
        manifest = json.loads(manifest_path.read_text())
        files = manifest["files"]
    except (json.JSONDecodeError, KeyError) as e:
        raise SequenceFormatError(f"{manifest_path}: malformed manifest ({e})") from e
    return [load_sequence(directory / name) for name in files]

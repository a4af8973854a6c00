"""Scene bundle directory format.

::

    <bundle>/
      intrinsics.txt        fx fy cx cy (ASCII)
      poses/NNNN.txt        4x4 row-major camera-to-world (ASCII)
      depth/NNNN.pgm        16-bit binary PGM, millimeters, 0 = invalid
      rgb/NNNN.ppm          8-bit binary PPM (optional)
      objects.json          scene metadata and object records
      trajectories/NNNN.txt one "x y z" anchor per line (optional)

See ``docs/formats.md`` for the exact grammar.  Every reader failure is a
:class:`~gst.errors.FormatError` naming the file and, where meaningful, the
byte offset of the violation.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from gst.errors import FormatError, InputError
from gst.scene import (
    Aabb,
    CameraIntrinsics,
    DepthMap,
    Frame,
    ObjectRecord,
    Pose,
    RigidTransform,
    SceneBundle,
)

DEPTH_SCALE = 1000.0  # stored units per meter
_TOKEN = re.compile(rb"\S+")


# ---------------------------------------------------------------------------
# Netpbm
# ---------------------------------------------------------------------------


def _read_netpbm_header(data: bytes, path, magic: bytes):
    """Parse ``magic W H MAXVAL`` and return (width, height, maxval, data offset)."""
    if not data.startswith(magic):
        raise FormatError(path, f"expected magic {magic.decode()!r}", 0)
    pos = len(magic)
    values = []
    while len(values) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(path, "malformed header: expected an unsigned integer", start)
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(path, "header must end with a single whitespace byte", pos)
    pos += 1
    width, height, maxval = values
    if width <= 0 or height <= 0:
        raise FormatError(path, f"invalid dimensions {width}x{height}", 0)
    if not 0 < maxval <= 65535:
        raise FormatError(path, f"maxval {maxval} out of range", 0)
    return width, height, maxval, pos


def _read_raster(path, magic: bytes, channels: int) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    width, height, maxval, pos = _read_netpbm_header(data, path, magic)
    bytes_per = 2 if maxval > 255 else 1
    need = width * height * channels * bytes_per
    have = len(data) - pos
    if have < need:
        raise FormatError(
            path, f"truncated pixel data: expected {need} bytes, found {have}", len(data)
        )
    if have > need:
        raise FormatError(path, f"{have - need} trailing bytes after pixel data", pos + need)
    dtype = ">u2" if bytes_per == 2 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=width * height * channels, offset=pos)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return arr.reshape(shape).astype(np.uint16 if bytes_per == 2 else np.uint8), maxval


def read_pgm16(path) -> np.ndarray:
    return _read_raster(path, b"P5", 1)[0].astype(np.uint16)


def write_pgm16(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    h, w = values.shape
    header = f"P5\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(header + values.astype(">u2").tobytes())


def read_ppm(path) -> np.ndarray:
    arr, maxval = _read_raster(path, b"P6", 3)
    if maxval > 255:
        raise FormatError(path, "only 8-bit PPM is supported", 0)
    return arr.astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


# ---------------------------------------------------------------------------
# ASCII numeric files
# ---------------------------------------------------------------------------


def _read_floats(path, count: int | None = None) -> tuple[list, list]:
    data = Path(path).read_bytes()
    values, offsets = [], []
    for m in _TOKEN.finditer(data):
        try:
            values.append(float(m.group()))
        except ValueError:
            raise FormatError(path, f"not a number: {m.group()[:20]!r}", m.start()) from None
        offsets.append(m.start())
    if count is not None and len(values) != count:
        off = offsets[count] if len(values) > count else len(data)
        raise FormatError(path, f"expected {count} numbers, found {len(values)}", off)
    return values, offsets


def read_intrinsics(path) -> CameraIntrinsics:
    values, _ = _read_floats(path, 4)
    try:
        return CameraIntrinsics(*values)
    except InputError as exc:
        raise FormatError(path, str(exc), 0) from None


def read_pose(path) -> Pose:
    values, offsets = _read_floats(path, 16)
    m = np.array(values).reshape(4, 4)
    if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-9):
        raise FormatError(path, "last row must be 0 0 0 1", offsets[12])
    try:
        return Pose(m[:3, :3], m[:3, 3])
    except InputError as exc:
        raise FormatError(path, f"invariant violated: {exc}", offsets[0]) from None


def write_matrix(path, m: np.ndarray) -> None:
    rows = [" ".join(repr(float(v)) for v in row) for row in np.asarray(m)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_trajectory(path) -> np.ndarray:
    values, offsets = _read_floats(path)
    if len(values) % 3:
        raise FormatError(path, "trajectory must hold x y z triples", offsets[-1])
    return np.array(values, dtype=float).reshape(-1, 3)


# ---------------------------------------------------------------------------
# objects.json
# ---------------------------------------------------------------------------


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode())


def read_objects(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.msg, _byte_offset(text, exc.pos)) from None
    if isinstance(doc, list):
        doc = {"objects": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("objects", []), list):
        raise FormatError(path, "expected an object with an 'objects' list", 0)

    objects = []
    for i, rec in enumerate(doc.get("objects", [])):
        try:
            box = Aabb(rec["min"], rec["max"])
            fv = rec.get("first_visible_frame")
            objects.append(
                ObjectRecord(
                    int(rec["id"]), str(rec["category"]), box, None if fv is None else int(fv)
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(path, f"objects[{i}]: {exc}") from None

    axis = doc.get("axis_align")
    try:
        axis_align = None if axis is None else RigidTransform.from_matrix(axis)
    except (InputError, ValueError) as exc:
        raise FormatError(path, f"axis_align: {exc}") from None
    area = doc.get("room_area")
    return {
        "scene_id": str(doc.get("scene_id", Path(path).parent.name)),
        "objects": objects,
        "axis_align": axis_align,
        "axis_align_applied": bool(doc.get("axis_align_applied", False)),
        "room_area": None if area is None else float(area),
    }


def objects_document(bundle: SceneBundle) -> dict:
    return {
        "scene_id": bundle.scene_id,
        "axis_align": None if bundle.axis_align is None else bundle.axis_align.as_matrix().tolist(),
        "axis_align_applied": bundle.axis_align_applied,
        "room_area": bundle.room_area,
        "objects": [
            {
                "id": o.id,
                "category": o.category,
                "min": list(o.box.min),
                "max": list(o.box.max),
                "first_visible_frame": o.first_visible_frame,
            }
            for o in bundle.objects
        ],
    }


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------


def _frame_files(root: Path, sub: str, suffix: str) -> list:
    d = root / sub
    if not d.is_dir():
        return []
    files = sorted(d.glob(f"*{suffix}"))
    for i, f in enumerate(files):
        if f.stem != f"{i:04d}":
            raise FormatError(f, f"expected frame file {i:04d}{suffix}")
    return files


def read_bundle(path) -> SceneBundle:
    """Load and validate a bundle directory."""
    root = Path(path)
    if not root.is_dir():
        raise FormatError(root, "not a directory")
    for required in ("intrinsics.txt", "objects.json"):
        if not (root / required).is_file():
            raise FormatError(root / required, "missing file")
    k = read_intrinsics(root / "intrinsics.txt")
    depth_files = _frame_files(root, "depth", ".pgm")
    pose_files = _frame_files(root, "poses", ".txt")
    rgb_files = _frame_files(root, "rgb", ".ppm")
    if not depth_files:
        raise FormatError(root / "depth", "no depth frames")
    if len(pose_files) != len(depth_files):
        raise FormatError(root / "poses", f"{len(pose_files)} poses for {len(depth_files)} depth maps")
    if rgb_files and len(rgb_files) != len(depth_files):
        raise FormatError(root / "rgb", f"{len(rgb_files)} images for {len(depth_files)} depth maps")

    frames = []
    shape = None
    for i, (dpath, ppath) in enumerate(zip(depth_files, pose_files)):
        raw = read_pgm16(dpath)
        if shape is None:
            shape = raw.shape
            try:
                k.check_image(shape[1], shape[0])
            except InputError as exc:
                raise FormatError(root / "intrinsics.txt", str(exc), 0) from None
        elif raw.shape != shape:
            raise FormatError(dpath, f"dimensions {raw.shape[::-1]} differ from frame 0", 0)
        rgb = None
        if rgb_files:
            rgb = read_ppm(rgb_files[i])
            if rgb.shape[:2] != shape:
                raise FormatError(rgb_files[i], "image dimensions differ from depth", 0)
        depth = DepthMap.from_array(raw.astype(np.float64) / DEPTH_SCALE)
        frames.append(
            Frame(depth, read_pose(ppath), rgb, str(rgb_files[i].relative_to(root)) if rgb_files else None)
        )

    meta = read_objects(root / "objects.json")
    trajectories = tuple(read_trajectory(f) for f in _frame_files(root, "trajectories", ".txt"))
    try:
        return SceneBundle(
            frames=tuple(frames),
            intrinsics=k,
            objects=tuple(meta["objects"]),
            axis_align=meta["axis_align"],
            axis_align_applied=meta["axis_align_applied"],
            room_area=meta["room_area"],
            scene_id=meta["scene_id"],
            trajectories=trajectories,
        )
    except InputError as exc:
        raise FormatError(root, str(exc)) from None


def write_bundle(bundle: SceneBundle, path) -> Path:
    """Write ``bundle`` in the directory format.  Depths are rounded to mm."""
    root = Path(path)
    for sub in ("poses", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    k = bundle.intrinsics
    (root / "intrinsics.txt").write_text(f"{k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r}\n")
    for i, frame in enumerate(bundle.frames):
        mm = np.where(frame.depth.valid, np.rint(frame.depth.values * DEPTH_SCALE), 0)
        if mm.max(initial=0) > 65535:
            raise InputError(f"frame {i}: depth exceeds the 16-bit millimeter range")
        write_pgm16(root / "depth" / f"{i:04d}.pgm", mm.astype(np.uint16))
        write_matrix(root / "poses" / f"{i:04d}.txt", frame.pose.as_matrix())
        if frame.rgb is not None:
            (root / "rgb").mkdir(exist_ok=True)
            write_ppm(root / "rgb" / f"{i:04d}.ppm", frame.rgb)
    for i, traj in enumerate(bundle.trajectories):
        (root / "trajectories").mkdir(exist_ok=True)
        lines = [" ".join(repr(float(v)) for v in p) for p in np.asarray(traj)]
        (root / "trajectories" / f"{i:04d}.txt").write_text("\n".join(lines) + "\n")
    (root / "objects.json").write_text(json.dumps(objects_document(bundle), indent=2) + "\n")
    return root

"""MOT Challenge file formats plus a fully labeled synthetic sequence generator.

File conventions (1-based pixel coordinates on disk, converted to 0-based at
the parse boundary):

* detections / results: ``frame,id,x,y,w,h,conf,...`` comma separated
* ``seqinfo.ini`` sidecar with image size, length and frame rate
* frames as binary PPM (P6), one per frame, named ``%06d.ppm``

A sequence directory looks like a real benchmark sequence::

    <seq>/seqinfo.ini
    <seq>/img1/000001.ppm ...
    <seq>/gt/gt.txt
    <seq>/det/det.txt
"""

from __future__ import annotations

import colorsys
import configparser
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, clip_box


class ParseError(ValueError):
    """A file could not be interpreted; the message carries file/line context."""


@dataclass(frozen=True)
class DetectionRow:
    """One line of a det/gt/result file, with 0-based pixel coordinates."""

    frame: int
    id: int            # -1 for anonymous detections
    bbox: BBox
    conf: float = 1.0
    extra: tuple[str, ...] = ()


@dataclass(frozen=True)
class SequenceMeta:
    name: str
    width: int
    height: int
    length: int
    frame_rate: float


def parse_det_file(path) -> list[DetectionRow]:
    """Read a comma-separated detection/gt/result file in file order."""
    rows: list[DetectionRow] = []
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) < 6:
            raise ParseError(f"{path}:{lineno}: expected at least 6 fields, got {len(fields)}")
        try:
            frame = int(float(fields[0]))
            obj_id = int(float(fields[1]))
            x, y, w, h = (float(v) for v in fields[2:6])
            conf = float(fields[6]) if len(fields) > 6 else 1.0
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric field ({exc})") from None
        if frame < 1:
            raise ParseError(f"{path}:{lineno}: frame index {frame} must be >= 1")
        if w <= 0 or h <= 0:
            raise ParseError(f"{path}:{lineno}: non-positive box size {w}x{h}")
        rows.append(DetectionRow(frame, obj_id, BBox(x - 1.0, y - 1.0, w, h), conf,
                                 tuple(fields[7:])))
    return rows


def _fmt2(value: float) -> str:
    # fixed two decimals, half-up (so 10.255 -> "10.26")
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def write_results(rows: Iterable[DetectionRow], path) -> None:
    """Write tracker output as ``frame,id,x,y,w,h,conf,-1,-1,-1`` lines.

    Coordinates go back to the 1-based file convention with fixed 2-decimal
    formatting; identities must be >= 1 with ascending frames per identity.
    """
    rows = list(rows)
    last_frame: dict[int, int] = {}
    for r in rows:
        if r.id < 1:
            raise ValueError(f"result identities must be >= 1, got {r.id}")
        if r.id in last_frame and r.frame <= last_frame[r.id]:
            raise ValueError(f"frames for identity {r.id} must ascend "
                             f"(frame {r.frame} after {last_frame[r.id]})")
        last_frame[r.id] = r.frame
    lines = [
        f"{r.frame},{r.id},{_fmt2(r.bbox.x + 1.0)},{_fmt2(r.bbox.y + 1.0)},"
        f"{_fmt2(r.bbox.w)},{_fmt2(r.bbox.h)},{_fmt2(r.conf)},-1,-1,-1"
        for r in rows
    ]
    Path(path).write_text("".join(line + "\n" for line in lines))


def parse_seqinfo(path) -> SequenceMeta:
    """Read a ``seqinfo.ini`` sidecar; unknown keys are ignored."""
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text())
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not parser.sections():
        raise ParseError(f"{path}: missing section header")
    section = parser[parser.sections()[0]]
    values = {}
    for key in ("imWidth", "imHeight", "seqLength", "frameRate"):
        if key not in section:
            raise ParseError(f"{path}: missing required key '{key}'")
        try:
            values[key] = float(section[key])
        except ValueError:
            raise ParseError(f"{path}: key '{key}' is not numeric") from None
    meta = SequenceMeta(
        name=section.get("name", path.parent.name),
        width=int(values["imWidth"]),
        height=int(values["imHeight"]),
        length=int(values["seqLength"]),
        frame_rate=values["frameRate"],
    )
    if meta.width <= 0 or meta.height <= 0 or meta.length <= 0 or meta.frame_rate <= 0:
        raise ParseError(f"{path}: all sequence fields must be positive")
    return meta


# -- PPM frames --------------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    """Store an H×W×3 float image in [0, 1] as binary PPM."""
    h, w, _ = image.shape
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Load a binary PPM into an H×W×3 float image in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6"):
        raise ParseError(f"{path}: not a P6 portable pixmap")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).astype(np.float64) / float(maxval)


def frame_path(seq_dir, frame: int) -> Path:
    return Path(seq_dir) / "img1" / f"{frame:06d}.ppm"


# -- synthetic sequences -----------------------------------------------------


@dataclass(frozen=True)
class IdentitySpec:
    start: tuple[float, float]          # initial top-left
    velocity: tuple[float, float]       # px / frame
    size: tuple[float, float]           # w, h
    color: tuple[float, float, float]   # RGB in [0, 1]
    jitter_amp: float = 0.0             # sinusoidal wobble, px
    jitter_period: float = 40.0
    jitter_phase: float = 0.0
    texture_seed: int = 0


@dataclass(frozen=True)
class OcclusionEvent:
    target: int   # identity index, 0-based
    start: int    # first occluded frame, 1-based
    duration: int


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a labeled sequence: moving textured rectangles on noise."""

    width: int = 128
    height: int = 96
    frames: int = 100
    num_identities: int = 3
    seed: int = 0
    name: str = "synthetic"
    frame_rate: float = 25.0
    det_center_jitter: float = 0.0   # sigma of detection centre noise, px
    det_drop_prob: float = 0.0
    det_fp_rate: float = 0.0         # expected false positives per frame
    occlusions: tuple[OcclusionEvent, ...] = ()
    identities: tuple[IdentitySpec, ...] | None = None  # procedural when None

    def __post_init__(self):
        if not (0.0 <= self.det_drop_prob <= 1.0):
            raise ValueError(f"det_drop_prob {self.det_drop_prob} must be in [0, 1]")
        if self.det_fp_rate < 0 or self.det_center_jitter < 0:
            raise ValueError("detection noise rates must be non-negative")
        for ev in self.occlusions:
            if not (1 <= ev.start and ev.start + ev.duration - 1 <= self.frames):
                raise ValueError(f"occlusion {ev} outside frames 1..{self.frames}")
            if not (0 <= ev.target < self.num_identities):
                raise ValueError(f"occlusion target {ev.target} out of range")
        if self.identities is not None and len(self.identities) != self.num_identities:
            raise ValueError("identities list does not match num_identities")


def load_synthetic_spec(path) -> SyntheticSpec:
    """Read a :class:`SyntheticSpec` from JSON, reporting the offending field."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    known = {f for f in SyntheticSpec.__dataclass_fields__}
    for key in raw:
        if key not in known:
            raise ParseError(f"{path}: unknown field '{key}'")
    try:
        if "occlusions" in raw:
            raw["occlusions"] = tuple(OcclusionEvent(**ev) for ev in raw["occlusions"])
        if raw.get("identities") is not None:
            raw["identities"] = tuple(
                IdentitySpec(start=tuple(i["start"]), velocity=tuple(i["velocity"]),
                             size=tuple(i["size"]), color=tuple(i["color"]),
                             jitter_amp=i.get("jitter_amp", 0.0),
                             jitter_period=i.get("jitter_period", 40.0),
                             jitter_phase=i.get("jitter_phase", 0.0),
                             texture_seed=i.get("texture_seed", 0))
                for i in raw["identities"])
        return SyntheticSpec(**raw)
    except (TypeError, KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None


@dataclass
class SyntheticSequence:
    meta: SequenceMeta
    frames: list[np.ndarray] = field(default_factory=list)
    gt: list[DetectionRow] = field(default_factory=list)
    det: list[DetectionRow] = field(default_factory=list)


def _procedural_identities(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[IdentitySpec, ...]:
    out = []
    for i in range(spec.num_identities):
        w = float(rng.uniform(14, 22))
        h = float(rng.uniform(18, 26))
        start = (float(rng.uniform(2, spec.width - w - 2)),
                 float(rng.uniform(2, spec.height - h - 2)))
        vel = (float(rng.uniform(-2.0, 2.0)), float(rng.uniform(-2.0, 2.0)))
        hue = (i * 0.6180339887498949) % 1.0  # golden-ratio spacing keeps hues apart
        color = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
        out.append(IdentitySpec(start=start, velocity=vel, size=(w, h), color=color,
                                jitter_amp=float(rng.uniform(0.0, 1.5)),
                                jitter_period=float(rng.uniform(25, 60)),
                                jitter_phase=float(rng.uniform(0, 2 * math.pi)),
                                texture_seed=int(rng.integers(0, 2**31 - 1))))
    return tuple(out)


def _reflect(p: float, lo: float, hi: float) -> float:
    # fold an unbounded coordinate into [lo, hi] (billiard reflection)
    if hi <= lo:
        return lo
    span = hi - lo
    q = (p - lo) % (2.0 * span)
    return lo + (q if q <= span else 2.0 * span - q)


def _texture(ident: IdentitySpec) -> np.ndarray:
    t = np.random.default_rng(ident.texture_seed).uniform(0.6, 1.0, size=(16, 16))
    return t


def _paint(image: np.ndarray, box: BBox, ident: IdentitySpec, texture: np.ndarray) -> None:
    x0, y0 = int(round(box.x)), int(round(box.y))
    x1, y1 = int(round(box.x2)), int(round(box.y2))
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, image.shape[1]), min(y1, image.shape[0])
    if x1 <= x0 or y1 <= y0:
        return
    yy, xx = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    # anchor the texture to the box so appearance is stable over time
    ty = ((yy - box.y) * 16 / box.h).astype(int) % 16
    tx = ((xx - box.x) * 16 / box.w).astype(int) % 16
    shade = texture[ty, tx]
    for c in range(3):
        image[y0:y1, x0:x1, c] = ident.color[c] * shade


def gen_synthetic_sequence(spec: SyntheticSpec) -> SyntheticSequence:
    """Render a sequence with ground truth and (optionally noisy) detections.

    During an occlusion event the target is neither rendered nor annotated nor
    detected. Boxes are clipped at the image border and removed from the
    ground truth when less than 25% of their area stays visible. Identities
    bounce off the borders so they stay in view; everything is a deterministic
    function of the spec (one seeded generator, frame-major call order).
    """
    rng = np.random.default_rng(spec.seed)
    idents = spec.identities if spec.identities is not None else _procedural_identities(spec, rng)
    textures = [_texture(ident) for ident in idents]
    occluded_at = {}
    for ev in spec.occlusions:
        for f in range(ev.start, ev.start + ev.duration):
            occluded_at.setdefault(f, set()).add(ev.target)

    meta = SequenceMeta(spec.name, spec.width, spec.height, spec.frames, spec.frame_rate)
    seq = SyntheticSequence(meta=meta)
    for frame in range(1, spec.frames + 1):
        t = frame - 1
        image = np.clip(rng.normal(0.5, 0.06, size=(spec.height, spec.width, 3)), 0.0, 1.0)
        hidden = occluded_at.get(frame, set())
        visible: list[tuple[int, BBox]] = []
        for i, ident in enumerate(idents):
            w, h = ident.size
            jitter = ident.jitter_amp * math.sin(2 * math.pi * t / ident.jitter_period
                                                 + ident.jitter_phase)
            raw_x = ident.start[0] + ident.velocity[0] * t + jitter
            raw_y = ident.start[1] + ident.velocity[1] * t + jitter
            x = _reflect(raw_x, 0.0, spec.width - w)
            y = _reflect(raw_y, 0.0, spec.height - h)
            box = BBox(x, y, w, h)
            if i in hidden:
                continue
            clipped = clip_box(box, spec.width, spec.height)
            if clipped is None or clipped.area < 0.25 * box.area:
                continue
            _paint(image, box, ident, textures[i])
            visible.append((i, clipped))
            seq.gt.append(DetectionRow(frame, i + 1, clipped, 1.0, ("1", "1.0")))
        # detections: jitter / drop per visible target, then false positives
        for i, box in visible:
            if spec.det_drop_prob > 0 and rng.random() < spec.det_drop_prob:
                continue
            dx = rng.normal(0.0, spec.det_center_jitter) if spec.det_center_jitter > 0 else 0.0
            dy = rng.normal(0.0, spec.det_center_jitter) if spec.det_center_jitter > 0 else 0.0
            jittered = clip_box(BBox(box.x + dx, box.y + dy, box.w, box.h),
                                spec.width, spec.height)
            if jittered is not None:
                seq.det.append(DetectionRow(frame, -1, jittered, 1.0))
        if spec.det_fp_rate > 0:
            for _ in range(int(rng.poisson(spec.det_fp_rate))):
                fw, fh = rng.uniform(10, 28), rng.uniform(10, 28)
                fx = rng.uniform(0, spec.width - fw)
                fy = rng.uniform(0, spec.height - fh)
                seq.det.append(DetectionRow(frame, -1, BBox(fx, fy, fw, fh), 0.5))
        seq.frames.append(image)
    return seq


def write_sequence(seq: SyntheticSequence, out_dir) -> None:
    """Lay a generated sequence out on disk in the benchmark directory shape."""
    out = Path(out_dir)
    (out / "img1").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    (out / "det").mkdir(exist_ok=True)
    for i, image in enumerate(seq.frames, start=1):
        write_ppm(out / "img1" / f"{i:06d}.ppm", image)
    _write_rows(seq.gt, out / "gt" / "gt.txt")
    _write_rows(seq.det, out / "det" / "det.txt")
    meta = seq.meta
    (out / "seqinfo.ini").write_text(
        "[Sequence]\n"
        f"name={meta.name}\n"
        "imDir=img1\n"
        f"frameRate={meta.frame_rate:g}\n"
        f"seqLength={meta.length}\n"
        f"imWidth={meta.width}\n"
        f"imHeight={meta.height}\n"
        "imExt=.ppm\n")


def _write_rows(rows: Sequence[DetectionRow], path) -> None:
    # gt/det files keep their extra columns; coordinates back to 1-based
    lines = []
    for r in rows:
        tail = "," + ",".join(r.extra) if r.extra else ",-1,-1,-1"
        lines.append(f"{r.frame},{r.id},{_fmt2(r.bbox.x + 1.0)},{_fmt2(r.bbox.y + 1.0)},"
                     f"{_fmt2(r.bbox.w)},{_fmt2(r.bbox.h)},{_fmt2(r.conf)}{tail}")
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_sequence(seq_dir) -> tuple[SequenceMeta, list[DetectionRow], list[DetectionRow]]:
    """Read (meta, gt rows, det rows) from a sequence directory; either row
    file may be absent, yielding an empty list."""
    seq_dir = Path(seq_dir)
    meta = parse_seqinfo(seq_dir / "seqinfo.ini")
    gt_path = seq_dir / "gt" / "gt.txt"
    det_path = seq_dir / "det" / "det.txt"
    gt = parse_det_file(gt_path) if gt_path.exists() else []
    det = parse_det_file(det_path) if det_path.exists() else []
    return meta, gt, det

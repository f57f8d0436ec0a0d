"""On-disk session formats and the processed-sample container.

A corpus directory holds `labels.jsonl` (one object per session: subject,
session, valence, arousal, liking, emotions[7]) and one subdirectory per
session:

    <session>/
      <session>_ECG.csv        header "time_s,value"
      <session>_EDA.csv
      frames/
        frames.csv             header "frame_index,timestamp_s"
        <frame_index>.pgm      8-bit binary grayscale (P5)
        landmarks.csv          optional, "frame_index,x0,y0,x1,y1,..."

Preprocessed samples are stored in a versioned binary record file with a
JSON sidecar. Record layout (little-endian):

    magic    4 bytes b"BAFS"
    u32      format version (1)
    u32      sample count
    u32      segment length
    then per sample:
      u16+utf8 subject id, u16+utf8 session id, u32 frame index,
      f64 timestamp, 10 x f64 label (valence, arousal, liking, emotions),
      segment length x f64 ECG window, segment length x f64 EDA window,
      u8 face kind (0 image / 1 feature vector),
      image: u32 side then side*side x f64; features: u32 length then f64s.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptionError, IngestError, ParseError, ValidationError
from .signals import (
    SEGMENT_LEN,
    SUPPORTED_SOURCE_HZ,
    AffectLabel,
    BioSegment,
    Channel,
    FrameRecord,
    SignalTrace,
    SyncedSample,
)

_SAMPLES_MAGIC = b"BAFS"
_SAMPLES_VERSION = 1


# --- primitive file formats -------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM; input is a float image in [0, 1]."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(b"P5"):
        raise ParseError(f"{path}: not a binary PGM (P5) file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ParseError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise ParseError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pixels = np.frombuffer(blob[pos : pos + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ParseError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def write_signal_csv(path, trace: SignalTrace) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("time_s,value\n")
        for t, v in zip(trace.sample_times(), trace.samples):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def read_signal_csv(path, channel: Channel) -> SignalTrace:
    path = Path(path)
    times = []
    values = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "time_s,value":
            raise ParseError(f"{path}:1: expected header 'time_s,value', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
            try:
                times.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from exc
    if len(values) < 2:
        raise ParseError(f"{path}: need at least 2 samples, got {len(values)}")
    times_arr = np.asarray(times)
    dt = np.diff(times_arr)
    if (dt <= 0).any():
        bad = int(np.argmax(dt <= 0)) + 3  # +2 header/1-based, +1 second row of pair
    else:
        bad = None
    if bad is not None:
        raise ParseError(f"{path}:{bad}: timestamps must be strictly increasing")
    rate = (len(times_arr) - 1) / (times_arr[-1] - times_arr[0])
    for supported in SUPPORTED_SOURCE_HZ:
        if abs(rate - supported) / supported < 0.01:
            rate = supported
            break
    else:
        raise ValidationError(
            f"{path}: sample rate {rate:.2f} Hz not in supported set "
            f"{SUPPORTED_SOURCE_HZ}"
        )
    return SignalTrace(channel, rate, np.asarray(values), start_time_s=float(times_arr[0]))


def _read_frames_csv(path) -> list:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "frame_index,timestamp_s":
            raise ParseError(
                f"{path}:1: expected header 'frame_index,timestamp_s', got {header!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad frame row") from exc
    return rows


def _read_landmarks_csv(path) -> dict:
    table = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("frame_index"):
                continue
            parts = line.split(",")
            if len(parts) < 5 or (len(parts) - 1) % 2 != 0:
                raise ParseError(
                    f"{path}:{lineno}: expected frame_index plus (x, y) pairs"
                )
            try:
                idx = int(parts[0])
                coords = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from exc
            table[idx] = [(coords[i], coords[i + 1]) for i in range(0, len(coords), 2)]
    return table


def parse_label_object(obj: dict) -> tuple:
    for key in ("subject", "session", "valence", "arousal", "liking", "emotions"):
        if key not in obj:
            raise ValidationError(f"label object missing field {key!r}")
    label = AffectLabel(
        valence=obj["valence"],
        arousal=obj["arousal"],
        liking=obj["liking"],
        emotions=np.asarray(obj["emotions"], dtype=np.float64),
    )
    return str(obj["subject"]), str(obj["session"]), label


def read_labels_jsonl(path) -> dict:
    """All labels keyed by session id."""
    path = Path(path)
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON") from exc
            subject, session, label = parse_label_object(obj)
            out[session] = (subject, label)
    return out


# --- session loading ---------------------------------------------------------


class SessionData:
    """Parsed raw session: traces per channel, frames, and the session label."""

    def __init__(self, traces, frames, label, subject_id, session_id):
        self.traces = traces
        self.frames = frames
        self.label = label
        self.subject_id = subject_id
        self.session_id = session_id


def load_session(session_dir, labels_file=None) -> SessionData:
    """Parse and validate one session directory.

    `labels_file` defaults to `labels.jsonl` next to the session directory.
    """
    session_dir = Path(session_dir)
    if not session_dir.is_dir():
        raise IngestError(f"{session_dir}: not a directory")
    session_id = session_dir.name
    labels_path = Path(labels_file) if labels_file else session_dir.parent / "labels.jsonl"
    if not labels_path.exists():
        raise IngestError(f"labels file not found: {labels_path}")
    labels = read_labels_jsonl(labels_path)
    if session_id not in labels:
        raise ValidationError(f"{labels_path}: no label for session {session_id!r}")
    subject_id, label = labels[session_id]

    traces = {}
    for channel in (Channel.ECG, Channel.EDA):
        csv_path = session_dir / f"{session_id}_{channel.value}.csv"
        if not csv_path.exists():
            raise IngestError(f"missing channel(s): {channel.value} ({csv_path})")
        traces[channel] = read_signal_csv(csv_path, channel)

    frames_dir = session_dir / "frames"
    frames_csv = frames_dir / "frames.csv"
    if not frames_csv.exists():
        raise IngestError(f"missing frames index: {frames_csv}")
    rows = _read_frames_csv(frames_csv)
    landmarks_csv = frames_dir / "landmarks.csv"
    landmark_table = _read_landmarks_csv(landmarks_csv) if landmarks_csv.exists() else {}
    frames = []
    for idx, t in sorted(rows):
        pgm = frames_dir / f"{idx}.pgm"
        if not pgm.exists():
            raise IngestError(f"missing frame image: {pgm}")
        frames.append(
            FrameRecord(
                timestamp_s=t,
                image=read_pgm(pgm),
                landmarks=landmark_table.get(idx),
            )
        )
    return SessionData(traces, frames, label, subject_id, session_id)


def list_sessions(corpus_dir) -> list:
    """Session directories under a corpus root, sorted by name."""
    corpus_dir = Path(corpus_dir)
    return sorted(
        p for p in corpus_dir.iterdir() if p.is_dir() and (p / "frames").is_dir()
    )


# --- processed sample container ----------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def write_samples(path, samples: list, extra_meta: dict | None = None) -> None:
    """Write SyncedSamples to the binary container plus a JSON sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_SAMPLES_MAGIC)
        fh.write(struct.pack("<III", _SAMPLES_VERSION, len(samples), SEGMENT_LEN))
        for s in samples:
            fh.write(_pack_str(s.subject_id))
            fh.write(_pack_str(s.session_id))
            fh.write(struct.pack("<Id", s.frame_index, s.face.timestamp_s))
            label_vec = np.concatenate(
                [[s.label.valence, s.label.arousal, s.label.liking], s.label.emotions]
            )
            fh.write(np.ascontiguousarray(label_vec, dtype="<f8").tobytes())
            for channel in (Channel.ECG, Channel.EDA):
                fh.write(
                    np.ascontiguousarray(
                        s.segments[channel].window, dtype="<f8"
                    ).tobytes()
                )
            if s.face.image is not None:
                side = s.face.image.shape[0]
                if s.face.image.shape != (side, side):
                    raise IngestError("processed face images must be square")
                fh.write(struct.pack("<BI", 0, side))
                fh.write(np.ascontiguousarray(s.face.image, dtype="<f8").tobytes())
            else:
                fv = s.face.feature_vector
                fh.write(struct.pack("<BI", 1, fv.size))
                fh.write(np.ascontiguousarray(fv, dtype="<f8").tobytes())

    subjects = sorted({s.subject_id for s in samples})
    sessions = sorted({s.session_id for s in samples})
    meta = {
        "format_version": _SAMPLES_VERSION,
        "n_samples": len(samples),
        "segment_len": SEGMENT_LEN,
        "subjects": subjects,
        "sessions": sessions,
    }
    if extra_meta:
        meta.update(extra_meta)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_samples(path) -> list:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _SAMPLES_MAGIC:
        raise CorruptionError(f"{path}: not a processed-sample file (bad magic)")
    version, count, seg_len = struct.unpack_from("<III", blob, 4)
    if version != _SAMPLES_VERSION:
        raise CorruptionError(f"{path}: unsupported sample file version {version}")
    if seg_len != SEGMENT_LEN:
        raise CorruptionError(
            f"{path}: segment length {seg_len} != expected {SEGMENT_LEN}"
        )
    offset = 4 + struct.calcsize("<III")
    samples = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        subject_id = blob[offset : offset + n].decode("utf-8")
        offset += n
        (n,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        session_id = blob[offset : offset + n].decode("utf-8")
        offset += n
        frame_index, timestamp = struct.unpack_from("<Id", blob, offset)
        offset += struct.calcsize("<Id")
        label_vec = np.frombuffer(blob[offset : offset + 80], dtype="<f8")
        offset += 80
        label = AffectLabel(
            valence=label_vec[0],
            arousal=label_vec[1],
            liking=label_vec[2],
            emotions=label_vec[3:10].copy(),
        )
        segments = {}
        for channel in (Channel.ECG, Channel.EDA):
            window = np.frombuffer(blob[offset : offset + 8 * seg_len], dtype="<f8")
            offset += 8 * seg_len
            segments[channel] = BioSegment(channel, window.copy(), frame_index)
        kind, payload = struct.unpack_from("<BI", blob, offset)
        offset += struct.calcsize("<BI")
        if kind == 0:
            img = np.frombuffer(
                blob[offset : offset + 8 * payload * payload], dtype="<f8"
            ).reshape(payload, payload)
            offset += 8 * payload * payload
            face = FrameRecord(timestamp_s=timestamp, image=img.copy())
        elif kind == 1:
            fv = np.frombuffer(blob[offset : offset + 8 * payload], dtype="<f8")
            offset += 8 * payload
            face = FrameRecord(timestamp_s=timestamp, feature_vector=fv.copy())
        else:
            raise CorruptionError(f"{path}: unknown face payload kind {kind}")
        samples.append(
            SyncedSample(
                segments=segments,
                face=face,
                label=label,
                subject_id=subject_id,
                session_id=session_id,
            )
        )
    return samples

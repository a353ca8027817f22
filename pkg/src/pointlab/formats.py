"""On-disk formats: PGM label maps, SCM1 score maps, CSV tables, answer logs.

Everything multi-byte is little-endian, including the 16-bit PGM payload
(plain binary PGM leaves 8-bit files identical either way; for 16-bit
maps this container is deliberately non-portable in exchange for one
endianness rule across all artifacts).

Readers never raise bare parse exceptions: every malformed input maps to
FormatError carrying a byte offset (or record index for line formats).
"""

from __future__ import annotations

import csv
import io
import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pointlab.domain import (
    VOID,
    LabelMap,
    Resolution,
    ScoreMap,
    Verdict,
    valid_identifier,
)

SCM_MAGIC = b"SCM1"
POINT_CSV_HEADER = [
    "image_id",
    "class_id",
    "x",
    "y",
    "verdict",
    "yes_votes",
    "no_votes",
    "unsure_votes",
    "source",
]


class FormatError(Exception):
    """Malformed file content.  offset is a byte offset where known."""

    def __init__(self, message: str, *, offset: int | None = None, path: Path | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}: "
        if offset is not None:
            loc += f"at byte {offset}: "
        super().__init__(loc + message)
        self.offset = offset
        self.path = path


# ---------------------------------------------------------------------------
# PGM label maps

class _TokenReader:
    """Whitespace/comment tokenizer over a PGM header, tracking byte offsets."""

    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path
        self.comments: list[bytes] = []

    def next_token(self) -> bytes:
        data, n = self.data, len(self.data)
        while self.pos < n:
            ch = self.data[self.pos : self.pos + 1]
            if ch == b"#":
                eol = data.find(b"\n", self.pos)
                if eol < 0:
                    raise FormatError("unterminated comment", offset=self.pos, path=self.path)
                self.comments.append(data[self.pos + 1 : eol].strip())
                self.pos = eol + 1
            elif ch.isspace():
                self.pos += 1
            else:
                start = self.pos
                while self.pos < n and not data[self.pos : self.pos + 1].isspace():
                    self.pos += 1
                return data[start : self.pos]
        raise FormatError("unexpected end of header", offset=self.pos, path=self.path)

    def next_int(self, what: str) -> int:
        start = self.pos
        tok = self.next_token()
        try:
            return int(tok)
        except ValueError:
            raise FormatError(
                f"expected integer for {what}, got {tok!r}", offset=start, path=self.path
            ) from None


def write_label_map(m: LabelMap, path: str | Path) -> None:
    """Write a binary PGM (P5).  maxval encodes VOID; a header comment keeps
    the class count so reads round-trip it."""
    path = Path(path)
    maxval = 255 if m.classes <= 255 else 65535
    grid = m.grid.copy()
    grid[grid == VOID] = maxval
    if maxval == 255:
        payload = grid.astype(np.uint8).tobytes()
    else:
        payload = grid.astype("<u2").tobytes()
    header = b"P5\n# classes %d\n%d %d\n%d\n" % (m.classes, m.width, m.height, maxval)
    path.write_bytes(header + payload)


def read_label_map(path: str | Path, classes: int | None = None) -> LabelMap:
    """Read a P5 label map.  Class count comes from the argument, else the
    '# classes N' header comment, else defaults to maxval."""
    path = Path(path)
    data = path.read_bytes()
    rd = _TokenReader(data, path)
    magic = rd.next_token()
    if magic != b"P5":
        raise FormatError(f"bad magic {magic!r}, expected b'P5'", offset=0, path=path)
    width = rd.next_int("width")
    height = rd.next_int("height")
    maxval_at = rd.pos
    maxval = rd.next_int("maxval")
    if width <= 0 or height <= 0:
        raise FormatError(f"bad dimensions {width}x{height}", offset=3, path=path)
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}", offset=maxval_at, path=path)
    # exactly one whitespace byte separates header and payload
    if rd.pos >= len(data) or not data[rd.pos : rd.pos + 1].isspace():
        raise FormatError("missing whitespace after maxval", offset=rd.pos, path=path)
    payload_start = rd.pos + 1

    if classes is None:
        for c in rd.comments:
            parts = c.split()
            if len(parts) == 2 and parts[0] == b"classes":
                try:
                    classes = int(parts[1])
                except ValueError:
                    raise FormatError(
                        f"bad classes comment {c!r}", offset=3, path=path
                    ) from None
        if classes is None:
            classes = maxval

    itemsize = 1 if maxval == 255 else 2
    expected = width * height * itemsize
    payload = data[payload_start:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: need {expected} bytes, have {len(payload)}",
            offset=payload_start + len(payload),
            path=path,
        )
    if len(payload) > expected:
        raise FormatError(
            f"{len(payload) - expected} trailing bytes after payload",
            offset=payload_start + expected,
            path=path,
        )
    dtype = np.uint8 if maxval == 255 else np.dtype("<u2")
    grid = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.uint16)

    bad = (grid >= classes) & (grid != maxval)
    if bad.any():
        flat = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError(
            f"class index {int(grid.ravel()[flat])} >= classes={classes}",
            offset=payload_start + flat * itemsize,
            path=path,
        )
    grid = grid.copy()
    grid[grid == maxval] = VOID
    return LabelMap(grid=grid, classes=classes)


# ---------------------------------------------------------------------------
# SCM1 score maps

def write_score_map(m: ScoreMap, path: str | Path) -> None:
    """ASCII header 'SCM1 W H C\\n' followed by W*H*C little-endian float32,
    pixel-major (row-major pixels, C contiguous scores per pixel)."""
    path = Path(path)
    header = b"SCM1 %d %d %d\n" % (m.width, m.height, m.classes)
    path.write_bytes(header + m.scores.astype("<f4").tobytes())


def read_score_map(path: str | Path) -> ScoreMap:
    path = Path(path)
    data = path.read_bytes()
    eol = data.find(b"\n")
    if eol < 0:
        raise FormatError("missing header line", offset=0, path=path)
    parts = data[:eol].split()
    if len(parts) != 4 or parts[0] != SCM_MAGIC:
        raise FormatError(f"bad header {data[:eol]!r}", offset=0, path=path)
    try:
        width, height, classes = (int(p) for p in parts[1:])
    except ValueError:
        raise FormatError(f"non-integer dimensions in {data[:eol]!r}", offset=5, path=path) from None
    if width <= 0 or height <= 0 or classes <= 0:
        raise FormatError(f"bad dimensions {width}x{height}x{classes}", offset=5, path=path)
    payload = data[eol + 1 :]
    expected = width * height * classes * 4
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {expected}",
            offset=eol + 1 + min(len(payload), expected),
            path=path,
        )
    raw = np.frombuffer(payload, dtype="<f4").reshape(height, width, classes).astype(np.float64)
    if not np.isfinite(raw).all():
        flat = int(np.flatnonzero(~np.isfinite(raw).reshape(-1, classes).all(axis=1))[0])
        raise FormatError(
            f"non-finite score at pixel {flat}", offset=eol + 1 + flat * classes * 4, path=path
        )
    sums = raw.sum(axis=2)
    dev = np.abs(sums - 1.0)
    if dev.max() > 1e-3:
        flat = int(dev.argmax())
        raise FormatError(
            f"pixel {flat} score vector sums to {sums.ravel()[flat]:.6f}, outside 1 +/- 1e-3",
            offset=eol + 1 + flat * classes * 4,
            path=path,
        )
    if raw.min() < 0.0:
        flat = int(np.flatnonzero((raw < 0).reshape(-1, classes).any(axis=1))[0])
        raise FormatError(
            f"negative score at pixel {flat}", offset=eol + 1 + flat * classes * 4, path=path
        )
    # renormalize float32 quantization drift away
    raw = raw / sums[:, :, None]
    return ScoreMap(scores=raw)


# ---------------------------------------------------------------------------
# Point-label CSV

@dataclass(frozen=True)
class PointLabelRow:
    """One resolved (point, class) label with its vote tallies."""

    image_id: str
    class_id: int
    x: float
    y: float
    verdict: Resolution
    yes_votes: int
    no_votes: int
    unsure_votes: int
    source: str

    def __post_init__(self) -> None:
        if not valid_identifier(self.image_id):
            raise ValueError(f"image id {self.image_id!r} not in [A-Za-z0-9_-]+")
        if not valid_identifier(self.source):
            raise ValueError(f"source {self.source!r} not in [A-Za-z0-9_-]+")
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")
        if min(self.yes_votes, self.no_votes, self.unsure_votes) < 0:
            raise ValueError("negative vote count")


def _row_sort_key(r: PointLabelRow) -> tuple:
    return (r.image_id, round(r.y, 6), round(r.x, 6), r.class_id)


def write_point_labels(rows: Iterable[PointLabelRow], path: str | Path) -> None:
    """Deterministic CSV: sorted by (image_id, y, x, class_id), 6-decimal coords."""
    path = Path(path)
    ordered = sorted(rows, key=_row_sort_key)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POINT_CSV_HEADER)
    for r in ordered:
        w.writerow(
            [
                r.image_id,
                r.class_id,
                f"{r.x:.6f}",
                f"{r.y:.6f}",
                r.verdict.value,
                r.yes_votes,
                r.no_votes,
                r.unsure_votes,
                r.source,
            ]
        )
    path.write_text(buf.getvalue())


def read_point_labels(path: str | Path) -> list[PointLabelRow]:
    path = Path(path)
    rows: list[PointLabelRow] = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != POINT_CSV_HEADER:
            raise FormatError(f"bad header {header!r}", path=path)
        for i, rec in enumerate(rd, start=2):
            if len(rec) != len(POINT_CSV_HEADER):
                raise FormatError(f"line {i}: expected {len(POINT_CSV_HEADER)} fields", path=path)
            try:
                verdict = Resolution(rec[4])
            except ValueError:
                raise FormatError(f"line {i}: bad verdict {rec[4]!r}", path=path) from None
            try:
                row = PointLabelRow(
                    image_id=rec[0],
                    class_id=int(rec[1]),
                    x=float(rec[2]),
                    y=float(rec[3]),
                    verdict=verdict,
                    yes_votes=int(rec[5]),
                    no_votes=int(rec[6]),
                    unsure_votes=int(rec[7]),
                    source=rec[8],
                )
            except ValueError as e:
                raise FormatError(f"line {i}: {e}", path=path) from None
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Class dictionary

def write_class_dictionary(names: Sequence[str], path: str | Path) -> None:
    """CSV of (class_id, name); ids are dense 0..C-1, names unique."""
    if len(set(names)) != len(names):
        raise ValueError("class names must be unique")
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id", "name"])
    for i, name in enumerate(names):
        w.writerow([i, name])
    path.write_text(buf.getvalue())


def read_class_dictionary(path: str | Path) -> list[str]:
    path = Path(path)
    names: list[str] = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["class_id", "name"]:
            raise FormatError(f"bad header {header!r}", path=path)
        for i, rec in enumerate(rd):
            if len(rec) != 2 or rec[0] != str(i):
                raise FormatError(f"expected dense id {i}, got {rec!r}", path=path)
            names.append(rec[1])
    if len(set(names)) != len(names):
        raise FormatError("duplicate class names", path=path)
    return names


# ---------------------------------------------------------------------------
# Answer log (JSON lines, append-only)

@dataclass(frozen=True)
class AnswerRecord:
    """One logged answer; the log is the single source of truth for state."""

    question_id: str
    annotator_id: str
    verdict: Verdict
    latency_ms: int
    timestamp: str  # RFC 3339 UTC, informational only


def rfc3339_now() -> str:
    from datetime import datetime, timezone

    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


class AnswerLogWriter:
    """Append-only writer.  Each append flushes before returning, so an ack
    sent after append() survives a process crash; pass fsync=True to survive
    OS crashes too."""

    def __init__(self, path: str | Path, fsync: bool = False):
        self.path = Path(path)
        self._fh = open(self.path, "a", encoding="utf-8")
        self._fsync = fsync

    def append(self, rec: AnswerRecord) -> None:
        line = json.dumps(
            {
                "question_id": rec.question_id,
                "annotator_id": rec.annotator_id,
                "verdict": rec.verdict.value,
                "latency_ms": rec.latency_ms,
                "timestamp": rec.timestamp,
            },
            separators=(",", ":"),
        )
        self._fh.write(line + "\n")
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "AnswerLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append_answer_log(rec: AnswerRecord, path: str | Path) -> None:
    with AnswerLogWriter(path) as w:
        w.append(rec)


def read_answer_log(path: str | Path) -> list[AnswerRecord]:
    """Read every complete record.  A truncated or garbled trailing record is
    dropped with a warning naming its index; garbage before the last record
    is an error."""
    path = Path(path)
    records: list[AnswerRecord] = []
    if not path.exists():
        return records
    lines = path.read_bytes().split(b"\n")
    # a well-formed log ends with '\n', so the final split element is empty
    for i, line in enumerate(lines):
        if line == b"":
            if i != len(lines) - 1:
                raise FormatError(f"blank record {i}", path=path)
            continue
        try:
            obj = json.loads(line)
            rec = AnswerRecord(
                question_id=obj["question_id"],
                annotator_id=obj["annotator_id"],
                verdict=Verdict(obj["verdict"]),
                latency_ms=int(obj["latency_ms"]),
                timestamp=obj["timestamp"],
            )
        except (ValueError, KeyError, TypeError):
            if i == len(lines) - 1:
                warnings.warn(
                    f"answer log {path}: dropping truncated trailing record {i}",
                    stacklevel=2,
                )
                continue
            raise FormatError(f"malformed record {i}: {line[:80]!r}", path=path) from None
        records.append(rec)
    return records

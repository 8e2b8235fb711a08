"""PHTX binary event files: photon records and time-tagger click records.

Layout (little-endian, packed):
    header   magic "PHTX" | version u16 | kind u8 | resolution_ps u32 | channels u8
    click    t u64 ps | channel u8
    photon   t u64 ps | nu i32 (0.1 MHz) | pol u8 | origin u8 | pulse u64

Records are time-ordered. Reading streams the file in chunks.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .config import EVENT_CHUNK_RECORDS
from .errors import DomainError, EventFormatError
from .streams import PHOTON_DTYPE, empty_photons, require_ordered

logger = logging.getLogger(__name__)

MAGIC = b"PHTX"
VERSION = 1
KIND_PHOTON = 0
KIND_CLICK = 1
KIND_NAMES = {KIND_PHOTON: "photon", KIND_CLICK: "click"}

HEADER = struct.Struct("<4sHBIB")
CLICK_RECORD = np.dtype([("t", "<u8"), ("channel", "u1")])
PHOTON_RECORD = np.dtype([("t", "<u8"), ("nu", "<i4"), ("pol", "u1"), ("origin", "u1"), ("pulse", "<u8")])
RECORD_DTYPES = {KIND_PHOTON: PHOTON_RECORD, KIND_CLICK: CLICK_RECORD}

# ν is stored in units of 0.1 MHz
NU_UNITS_PER_GHZ = 1e4


@dataclass
class EventHeader:
    kind: int
    resolution_ps: int = 1
    channels: int = 1
    version: int = VERSION

    def pack(self):
        return HEADER.pack(MAGIC, self.version, self.kind, self.resolution_ps, self.channels)

    @property
    def dtype(self):
        return RECORD_DTYPES[self.kind]


# ── Conversions between in-memory streams and file records ───────────────────


def photons_to_records(photons):
    """Quantize a PHOTON_DTYPE stream to 1 ps and 0.1 MHz."""
    if len(photons) and photons["t"].min() < 0:
        raise DomainError("photon times must be non-negative to be written")
    nu = np.rint(photons["nu"] * NU_UNITS_PER_GHZ)
    info = np.iinfo(np.int32)
    if len(nu) and (nu.min() < info.min or nu.max() > info.max):
        raise DomainError("frequency offset does not fit the 32-bit record field")
    records = np.zeros(len(photons), dtype=PHOTON_RECORD)
    records["t"] = np.rint(photons["t"]).astype(np.uint64)
    records["nu"] = nu.astype(np.int32)
    records["pol"] = photons["pol"]
    records["origin"] = photons["origin"]
    records["pulse"] = photons["pulse"].astype(np.uint64)
    return records


def records_to_photons(records):
    photons = empty_photons(len(records))
    photons["t"] = records["t"].astype(np.float64)
    photons["nu"] = records["nu"] / NU_UNITS_PER_GHZ
    photons["pol"] = records["pol"]
    photons["origin"] = records["origin"]
    photons["pulse"] = records["pulse"].astype(np.int64)
    return photons


def clicks_to_records(channels):
    """Merge per-channel click arrays into one time-ordered record array.

    Equal timestamps are ordered by channel number.
    """
    times = np.concatenate([np.asarray(c, dtype=np.int64) for c in channels]) if channels else np.zeros(0, np.int64)
    labels = np.concatenate([np.full(len(c), i, dtype=np.uint8) for i, c in enumerate(channels)]) if channels else np.zeros(0, np.uint8)
    order = np.lexsort((labels, times))
    records = np.zeros(len(times), dtype=CLICK_RECORD)
    records["t"] = times[order].astype(np.uint64)
    records["channel"] = labels[order]
    return records


def split_channels(records, channels):
    """Per-channel int64 click arrays from click records."""
    return [records["t"][records["channel"] == ch].astype(np.int64) for ch in range(channels)]


# ── File I/O ─────────────────────────────────────────────────────────────────


def write_events(stream, path, channels=None, chunk_records=EVENT_CHUNK_RECORDS):
    """Write a PHOTON_DTYPE stream or click records to path.

    Returns the number of records written.
    """
    if stream.dtype == PHOTON_DTYPE:
        records = photons_to_records(stream)
        header = EventHeader(KIND_PHOTON, channels=1)
    elif stream.dtype == PHOTON_RECORD:
        records = stream
        header = EventHeader(KIND_PHOTON, channels=1)
    elif stream.dtype == CLICK_RECORD:
        records = stream
        n_channels = channels or (int(records["channel"].max()) + 1 if len(records) else 1)
        header = EventHeader(KIND_CLICK, channels=n_channels)
    else:
        raise DomainError(f"cannot write records of dtype {stream.dtype}")
    require_ordered(records["t"].astype(np.int64), f"{KIND_NAMES[header.kind]} records")

    with open(path, "wb") as f:
        f.write(header.pack())
        for start in range(0, len(records), chunk_records):
            f.write(records[start:start + chunk_records].tobytes())
    logger.info(f"Wrote {len(records)} {KIND_NAMES[header.kind]} records to {path}")
    return len(records)


def read_header(f):
    raw = f.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise EventFormatError("file too short for the PHTX header", 0)
    magic, version, kind, resolution, channels = HEADER.unpack(raw)
    if magic != MAGIC:
        raise EventFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise EventFormatError(f"unsupported version {version}", 4)
    if kind not in RECORD_DTYPES:
        raise EventFormatError(f"unknown record kind {kind}", 6)
    if resolution != 1:
        raise EventFormatError(f"unsupported time resolution {resolution} ps", 7)
    return EventHeader(kind, resolution, channels, version)


def iter_events(path, chunk_records=EVENT_CHUNK_RECORDS):
    """Yield (header, records) chunk by chunk; memory stays bounded by chunk_records."""
    with open(path, "rb") as f:
        header = read_header(f)
        itemsize = header.dtype.itemsize
        offset = HEADER.size
        last_t = None
        while True:
            raw = f.read(chunk_records * itemsize)
            if not raw:
                break
            whole = len(raw) // itemsize
            if len(raw) % itemsize:
                raise EventFormatError(
                    f"truncated trailing record ({len(raw) % itemsize} of {itemsize} bytes)",
                    offset + whole * itemsize,
                )
            records = np.frombuffer(raw, dtype=header.dtype)
            times = records["t"]
            if last_t is not None and whole and times[0] < last_t:
                raise EventFormatError("records not time-ordered", offset)
            back = np.flatnonzero(times[1:] < times[:-1])
            if len(back):
                raise EventFormatError("records not time-ordered", offset + (int(back[0]) + 1) * itemsize)
            last_t = times[-1]
            offset += len(raw)
            yield header, records


def read_events(path, chunk_records=EVENT_CHUNK_RECORDS):
    """Load a whole file: (header, records). Use iter_events for large files."""
    header = None
    chunks = []
    for header, records in iter_events(path, chunk_records):
        chunks.append(records)
    if header is None:
        with open(path, "rb") as f:
            header = read_header(f)
    records = np.concatenate(chunks) if chunks else np.zeros(0, dtype=header.dtype)
    logger.debug(f"Read {len(records)} {KIND_NAMES[header.kind]} records from {path}")
    return header, records


def read_photons(path):
    header, records = read_events(path)
    if header.kind != KIND_PHOTON:
        raise EventFormatError("expected a photon event file", 6)
    return records_to_photons(records)


def read_clicks(path):
    """Per-channel click arrays of a click event file."""
    header, records = read_events(path)
    if header.kind != KIND_CLICK:
        raise EventFormatError("expected a click event file", 6)
    return split_channels(records, header.channels)

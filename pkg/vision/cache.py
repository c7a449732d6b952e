"""
Descriptor persistence and lazy extraction.

Cache file layout (little-endian):
    b"DIRD1" | dimension u32 | mode u8 (0 bit, 1 byte) | frame count u32 |
    frame count x (frame index u32, dimension x u16)
Records are kept sorted by frame index, so appending frames that are
already present leaves the file byte-identical.
"""
import logging
import os
import struct
import threading
import time
from collections.abc import Mapping
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np
from filelock import FileLock

from app.error_handling import DescriptorError, ImageError, MissingDescriptorError
from utils.parallel import thread_map
from vision.dird import DirdConfig, DirdDescriptor, extract_descriptor

logger = logging.getLogger(__name__)

MAGIC = b"DIRD1"
_MODES = {"bit": 0, "byte": 1}
_MODE_NAMES = {v: k for k, v in _MODES.items()}


class DescriptorCacheFile:
    def __init__(self, path, cfg: DirdConfig):
        self.path = Path(path)
        self.dimension = cfg.dimension
        self.mode = cfg.quantization
        self.block_size = cfg.filter_count
        self._lock = FileLock(str(self.path) + ".lock")

    def _decode(self, payload: bytes) -> Dict[int, DirdDescriptor]:
        if payload[:5] != MAGIC:
            raise DescriptorError(f"{self.path} is not a descriptor cache (bad header)")
        dimension, mode_byte, count = struct.unpack_from("<IBI", payload, 5)
        mode = _MODE_NAMES.get(mode_byte)
        if dimension != self.dimension or mode != self.mode:
            raise DescriptorError(
                f"{self.path} holds {mode} descriptors of dimension {dimension}, "
                f"expected {self.mode} / {self.dimension}"
            )
        record = struct.Struct(f"<I{dimension}H")
        offset = 5 + struct.calcsize("<IBI")
        expected = offset + count * record.size
        if len(payload) != expected:
            raise DescriptorError(f"{self.path} is truncated ({len(payload)} of {expected} bytes)")

        records = {}
        for _ in range(count):
            frame = struct.unpack_from("<I", payload, offset)[0]
            values = np.frombuffer(payload, dtype="<u2", count=dimension, offset=offset + 4)
            records[frame] = DirdDescriptor(quantized=values, mode=mode, block_size=self.block_size)
            offset += record.size
        return records

    def _encode(self, records: Dict[int, DirdDescriptor]) -> bytes:
        chunks = [MAGIC, struct.pack("<IBI", self.dimension, _MODES[self.mode], len(records))]
        for frame in sorted(records):
            descriptor = records[frame]
            if descriptor.quantized is None or descriptor.mode != self.mode:
                raise DescriptorError(f"frame {frame} is not {self.mode}-quantized")
            if descriptor.dimension != self.dimension:
                raise DescriptorError(f"frame {frame} has dimension {descriptor.dimension}")
            chunks.append(struct.pack("<I", frame))
            chunks.append(np.asarray(descriptor.quantized, dtype="<u2").tobytes())
        return b"".join(chunks)

    def read(self) -> Dict[int, DirdDescriptor]:
        if not self.path.exists():
            return {}
        with self._lock:
            return self._decode(self.path.read_bytes())

    def append(self, descriptors: Dict[int, DirdDescriptor]) -> int:
        """Adds frames that are not cached yet; returns how many were added."""
        with self._lock:
            records = self._decode(self.path.read_bytes()) if self.path.exists() else {}
            new = {f: d.without_raw() for f, d in descriptors.items() if f not in records}
            if not new and self.path.exists():
                return 0
            records.update(new)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp_path = self.path.with_suffix(self.path.suffix + ".tmp")
            tmp_path.write_bytes(self._encode(records))
            os.replace(tmp_path, self.path)
        logger.info(f"Descriptor cache {self.path}: +{len(new)} frames ({len(records)} total)")
        return len(new)


class LazyDescriptorStore(Mapping):
    """
    Frame index -> DirdDescriptor, extracted from the dataset on first access.

    With a cache file, stored frames are served from it and every descriptor
    is used in quantized form so cached and fresh frames compare alike.
    """

    def __init__(self, provider, cfg: DirdConfig, threads: int = 1, cache: Optional[DescriptorCacheFile] = None):
        self.provider = provider
        self.cfg = cfg
        self.threads = threads
        self.cache = cache
        self._descriptors: Dict[int, DirdDescriptor] = cache.read() if cache else {}
        self._fresh = set()
        self._lock = threading.Lock()
        self.extracted_count = 0
        self.extraction_seconds = 0.0

    def __len__(self):
        return self.provider.frame_count

    def __iter__(self):
        return iter(range(self.provider.frame_count))

    def __contains__(self, frame):
        return isinstance(frame, (int, np.integer)) and 0 <= frame < self.provider.frame_count

    def _extract(self, frame: int) -> DirdDescriptor:
        try:
            image = self.provider.load_frame(frame)
        except ImageError as exc:
            if exc.frame is not None:
                raise
            raise ImageError(str(exc), frame=frame) from exc
        descriptor = extract_descriptor(image, self.cfg)
        return descriptor.without_raw() if self.cache else descriptor

    def __getitem__(self, frame):
        if frame not in self:
            raise KeyError(frame)
        frame = int(frame)
        with self._lock:
            cached = self._descriptors.get(frame)
        if cached is not None:
            return cached
        self.prefetch([frame])
        return self._descriptors[frame]

    def prefetch(self, frames: Iterable[int]) -> int:
        """Extracts every listed frame not held yet; returns the number extracted."""
        with self._lock:
            missing = sorted({int(f) for f in frames if int(f) not in self._descriptors})
        for frame in missing:
            if frame not in self:
                raise MissingDescriptorError(frame)
        if not missing:
            return 0

        start = time.perf_counter()
        results = thread_map(self._extract, missing, self.threads)
        elapsed = time.perf_counter() - start

        with self._lock:
            for frame, descriptor in zip(missing, results):
                self._descriptors[frame] = descriptor
                self._fresh.add(frame)
            self.extracted_count += len(missing)
            self.extraction_seconds += elapsed
        logger.debug(f"Extracted {len(missing)} descriptors in {elapsed * 1000:.1f} ms")
        return len(missing)

    def persist(self) -> int:
        if self.cache is None:
            return 0
        with self._lock:
            fresh = {f: self._descriptors[f] for f in sorted(self._fresh)}
            self._fresh.clear()
        return self.cache.append(fresh)

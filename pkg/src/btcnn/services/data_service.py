"""
Loading of the USPS text files.

Each line holds a label followed by 256 pixel values in [-1, 1]; parsed splits can be
kept in a binary cache keyed by the hash of the source file.
"""
import gzip
import hashlib
import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..models.dataset import Dataset
from ..utils.config import (
    CACHE_FORMAT_VERSION,
    CACHE_MAGIC,
    IMAGE_SIZE,
    NUM_CLASSES,
    USPS_FIELDS_PER_LINE,
    USPS_TEST_SIZE,
    USPS_TRAIN_SIZE,
)
from ..utils.errors import ParseError

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sBB4I")
_SPLIT_TAGS = {"train": 0, "test": 1}
_CANONICAL_SIZES = {"train": USPS_TRAIN_SIZE, "test": USPS_TEST_SIZE}
_PIXEL_SLACK = 1e-6


class DataService:
    """Loads USPS text files and maintains the binary dataset cache."""

    def __init__(self, cache_dir: Optional[Path] = None) -> None:
        """
        Initialize the service.

        Args:
            cache_dir: Directory for parsed-split caches; caching is off when None
        """
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None

    def load_usps(self, train_path: Path, test_path: Path) -> Tuple[Dataset, Dataset]:
        """
        Load both USPS splits.

        Args:
            train_path: Training file, optionally gzip-compressed
            test_path: Test file, optionally gzip-compressed

        Returns:
            Tuple of (train, test) datasets with pixels remapped to [0, 1]

        Raises:
            FileNotFoundError: If a file is missing
            ParseError: If a file is malformed
        """
        train = self.load_split(Path(train_path), "train")
        test = self.load_split(Path(test_path), "test")
        logger.info(f"Loaded USPS: {len(train)} train + {len(test)} test images")
        return train, test

    def load_split(self, path: Path, split: str) -> Dataset:
        """Load one split, through the cache when enabled."""
        if not path.exists():
            raise FileNotFoundError(f"USPS file not found: {path}")

        cache_file = self._cache_file(path, split)
        if cache_file is not None and cache_file.exists():
            logger.debug(f"Cache hit for {path}: {cache_file}")
            return self.read_cache(cache_file)

        dataset = self.parse_usps(path, split)
        if cache_file is not None:
            self.write_cache(dataset, cache_file)
        return dataset

    def parse_usps(self, path: Path, split: str) -> Dataset:
        """
        Parse the classic USPS text format.

        Each non-blank line holds a label followed by 256 pixel values in [-1, 1],
        row-major 16x16. Pixels are remapped with (v + 1) / 2.

        Args:
            path: Text file, gzip-compressed when it starts with the gzip magic
            split: "train" or "test"

        Returns:
            The dataset

        Raises:
            ParseError: For lines without 257 fields, non-numeric fields or bad labels
        """
        labels: List[int] = []
        rows: List[np.ndarray] = []
        for line_number, line in enumerate(self._read_lines(path), start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != USPS_FIELDS_PER_LINE:
                raise ParseError(
                    f"expected {USPS_FIELDS_PER_LINE} fields, got {len(fields)}",
                    path, line_number,
                )
            try:
                values = np.array(fields, dtype=np.float64)
            except ValueError as e:
                raise ParseError(f"non-numeric field ({e})", path, line_number) from e

            label = values[0]
            if label != np.floor(label) or not 0 <= label < NUM_CLASSES:
                raise ParseError(f"label {fields[0]} outside [0, {NUM_CLASSES})", path, line_number)
            pixels = values[1:]
            if np.any(np.abs(pixels) > 1.0 + _PIXEL_SLACK):
                raise ParseError("pixel values must lie in [-1, 1]", path, line_number)
            labels.append(int(label))
            rows.append(pixels)

        images = np.clip((np.array(rows).reshape(-1, 1, IMAGE_SIZE, IMAGE_SIZE) + 1.0) / 2.0,
                         0.0, 1.0)
        if not rows:
            images = np.zeros((0, 1, IMAGE_SIZE, IMAGE_SIZE))
        if len(labels) != _CANONICAL_SIZES[split]:
            logger.warning(
                f"{path} has {len(labels)} {split} images; canonical USPS has "
                f"{_CANONICAL_SIZES[split]}"
            )
        logger.debug(f"Parsed {len(labels)} images from {path}")
        return Dataset(images, np.array(labels, dtype=np.int64), split)

    def _read_lines(self, path: Path) -> List[str]:
        with open(path, "rb") as f:
            head = f.read(2)
        if head == b"\x1f\x8b":
            with gzip.open(path, "rt") as f:
                return f.read().splitlines()
        with open(path) as f:
            return f.read().splitlines()

    def _cache_file(self, path: Path, split: str) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
        return self.cache_dir / f"usps-{split}-{digest}.bin"

    def write_cache(self, dataset: Dataset, cache_file: Path) -> None:
        """
        Write a dataset in the binary cache format.

        Layout (little-endian): magic, version byte, split byte, N, C, H, W as uint32,
        float64 pixels, uint8 labels.
        """
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        n, c, h, w = dataset.images.shape
        header = _HEADER.pack(CACHE_MAGIC, CACHE_FORMAT_VERSION, _SPLIT_TAGS[dataset.split],
                              n, c, h, w)
        temp_file = cache_file.with_suffix(".tmp")
        with open(temp_file, "wb") as f:
            f.write(header)
            f.write(dataset.images.astype("<f8").tobytes())
            f.write(dataset.labels.astype(np.uint8).tobytes())
        temp_file.replace(cache_file)
        logger.debug(f"Wrote cache {cache_file}")

    def read_cache(self, cache_file: Path) -> Dataset:
        """
        Read a dataset from the binary cache format.

        Raises:
            ParseError: On wrong magic, unsupported version or truncated payload
        """
        payload = Path(cache_file).read_bytes()
        if len(payload) < _HEADER.size:
            raise ParseError("cache header truncated", cache_file)
        magic, version, split_tag, n, c, h, w = _HEADER.unpack_from(payload)
        if magic != CACHE_MAGIC:
            raise ParseError(f"not a dataset cache (magic {magic!r})", cache_file)
        if version != CACHE_FORMAT_VERSION:
            raise ParseError(f"unsupported cache format version {version}", cache_file)
        splits = {tag: name for name, tag in _SPLIT_TAGS.items()}
        if split_tag not in splits:
            raise ParseError(f"unknown split tag {split_tag}", cache_file)

        pixel_bytes = n * c * h * w * 8
        expected = _HEADER.size + pixel_bytes + n
        if len(payload) != expected:
            raise ParseError(f"cache payload is {len(payload)} bytes, expected {expected}",
                             cache_file)
        offset = _HEADER.size
        images = np.frombuffer(payload, dtype="<f8", count=n * c * h * w, offset=offset)
        labels = np.frombuffer(payload, dtype=np.uint8, count=n, offset=offset + pixel_bytes)
        return Dataset(images.reshape(n, c, h, w).astype(np.float64),
                       labels.astype(np.int64), splits[split_tag])

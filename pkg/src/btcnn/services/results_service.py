"""Run directories, result tables and image previews on disk."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from PIL import Image, ImageDraw

from ..models.run_record import RunRecord
from ..utils.config import DEFAULT_OUT_DIR

logger = logging.getLogger(__name__)

PREVIEW_SCALE = 4
_PREVIEW_GAP = 2


class ResultsService:
    """Writes run tables, config snapshots and image previews under one output directory."""

    def __init__(self, out_dir: Path = DEFAULT_OUT_DIR) -> None:
        """
        Initialize the service.

        Args:
            out_dir: Root of every file written
        """
        self.out_dir = Path(out_dir)

    def write_table(self, frame: pd.DataFrame, relative: str) -> Path:
        """Write a DataFrame as CSV (no index) via a temporary file."""
        path = self.out_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        temp_file = path.with_suffix(".tmp")
        frame.to_csv(temp_file, index=False)
        temp_file.replace(path)
        logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_json(self, data: Dict[str, Any], relative: str) -> Path:
        """Write a JSON document via a temporary file."""
        path = self.out_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        temp_file = path.with_suffix(".tmp")
        try:
            with open(temp_file, "w") as f:
                json.dump(data, f, indent=2, default=_json_default)
            temp_file.replace(path)
        except Exception as e:
            logger.error(f"Error writing {path}: {e}", exc_info=True)
            temp_file.unlink(missing_ok=True)
            raise
        logger.debug(f"Wrote {path}")
        return path

    def write_run(
        self,
        record: RunRecord,
        run_name: str,
        extra: Optional[Dict[str, Any]] = None
    ) -> Path:
        """
        Write one run: epochs.csv, config.json and, after any epoch, calibration_bins.csv.

        Args:
            record: The finished run
            run_name: Sub-directory name
            extra: Additional metadata merged into config.json (e.g. the blur policy)

        Returns:
            The run directory
        """
        run_dir = self.out_dir / run_name
        self.write_table(record.to_frame(), f"{run_name}/epochs.csv")
        snapshot = {
            "variant": record.variant,
            "seed": record.seed,
            "config": record.config,
            "parameter_count": record.parameter_count,
            "dense_parameter_count": record.dense_parameter_count,
            "peak_rss_mb": round(record.peak_rss_mb, 1),
            "plateau_epoch": record.plateau_epoch(),
            "pixel_range": [0.0, 1.0],
        }
        if extra:
            snapshot.update(extra)
        self.write_json(snapshot, f"{run_name}/config.json")
        if record.final_calibration is not None:
            self.write_table(record.final_calibration.to_frame(),
                             f"{run_name}/calibration_bins.csv")
        logger.info(f"Wrote run {run_name} to {run_dir}")
        return run_dir

    def write_preview(
        self,
        images: Sequence[np.ndarray],
        relative: str,
        captions: Optional[Sequence[str]] = None,
        scale: int = PREVIEW_SCALE
    ) -> Path:
        """
        Render greyscale images side by side into one PNG.

        Args:
            images: [1, H, W] or [H, W] arrays in [0, 1]
            relative: Destination below the output directory
            captions: Optional label drawn under each image
            scale: Integer magnification

        Returns:
            The PNG path
        """
        tiles = [
            Image.fromarray(np.uint8(np.round(np.clip(np.squeeze(img), 0.0, 1.0) * 255)))
            for img in images
        ]
        tiles = [t.resize((t.width * scale, t.height * scale), Image.NEAREST) for t in tiles]
        tile_w = max(t.width for t in tiles)
        tile_h = max(t.height for t in tiles)
        caption_h = 12 if captions else 0
        width = len(tiles) * (tile_w + _PREVIEW_GAP) + _PREVIEW_GAP
        height = tile_h + caption_h + 2 * _PREVIEW_GAP
        canvas = Image.new("L", (width, height), color=128)
        draw = ImageDraw.Draw(canvas)
        for i, tile in enumerate(tiles):
            x = _PREVIEW_GAP + i * (tile_w + _PREVIEW_GAP)
            canvas.paste(tile, (x, _PREVIEW_GAP))
            if captions:
                draw.text((x + 1, _PREVIEW_GAP + tile_h), captions[i], fill=255)

        path = self.out_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        canvas.save(path, format="PNG")
        logger.debug(f"Wrote preview {path}")
        return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")

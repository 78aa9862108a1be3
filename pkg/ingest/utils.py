import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd
from django.conf import settings

from core.exceptions import ConfigurationError, WaveformLengthError, WaveformParseError

logger = logging.getLogger('ingest')

BEARING_LABELS_FILE = 'bearing_labels.json'
MANIFEST_FILE = 'manifest.json'

_TOKENIZE_LINE = re.compile(r'line (\d+)')


class WaveformCSV:
    """
    Reader/writer for single-waveform CSV files.

    Accepted shapes: one sample per row, one channel per column with a header
    naming the axes, or the raw six-column FEMTO row
    (hour, minute, second, microsecond, horizontal, vertical) without header.
    Either ',' or ';' delimits fields.
    """

    @staticmethod
    def _delimiter(path: Path) -> str:
        with open(path, 'r', encoding='utf-8') as fh:
            first = fh.readline()
        return ';' if ';' in first and ',' not in first else ','

    @staticmethod
    def _is_numeric(token: str) -> bool:
        try:
            float(token)
        except ValueError:
            return False
        return True

    @staticmethod
    def _select_column(frame: pd.DataFrame, header: Optional[list], axis: str) -> int:
        if header is not None:
            wanted = 'horiz' if axis == 'horizontal' else 'vert'
            for idx, name in enumerate(header):
                if wanted in str(name).lower():
                    return idx
            return 0
        n_cols = frame.shape[1]
        if n_cols >= 6:
            return 4 if axis == 'horizontal' else 5
        if n_cols == 2:
            return 0 if axis == 'horizontal' else 1
        return 0

    @staticmethod
    def read(path, axis: str = 'horizontal', expected_length: Optional[int] = None) -> np.ndarray:
        path = Path(path)
        try:
            delimiter = WaveformCSV._delimiter(path)
            frame = pd.read_csv(
                path, sep=delimiter, header=None, dtype=str,
                na_filter=False, skip_blank_lines=True,
            )
        except pd.errors.EmptyDataError:
            raise WaveformLengthError(path, expected_length, 0, 'empty file')
        except pd.errors.ParserError as exc:
            match = _TOKENIZE_LINE.search(str(exc))
            row = int(match.group(1)) if match else -1
            raise WaveformParseError(path, row, 'inconsistent field count') from exc
        except UnicodeDecodeError as exc:
            raise WaveformParseError(path, 0, 'not a text file') from exc

        frame = frame.fillna('')
        header = None
        first_row = [str(v).strip() for v in frame.iloc[0].tolist()]
        if not any(WaveformCSV._is_numeric(v) for v in first_row):
            header = first_row
            frame = frame.iloc[1:]
        offset = 2 if header is not None else 1  # file line of the first data row

        column = WaveformCSV._select_column(frame, header, axis)
        raw = np.char.strip(frame.iloc[:, column].to_numpy(dtype=str))
        if raw.size == 0:
            raise WaveformLengthError(path, expected_length, 0, 'no data rows')

        # A cut-off final line leaves empty trailing fields.
        if raw[-1] == '':
            raise WaveformLengthError(path, expected_length, raw.size - 1, 'truncated final row')

        try:
            values = raw.astype(np.float64)
        except ValueError:
            for idx, token in enumerate(raw):
                if not WaveformCSV._is_numeric(token):
                    raise WaveformParseError(path, idx + offset, f"malformed numeric field {token!r}")
            raise

        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            idx = int(bad[0])
            raise WaveformParseError(path, idx + offset, f"non-finite value {raw[idx]!r}")

        if expected_length is not None and values.size != expected_length:
            raise WaveformLengthError(path, expected_length, values.size)
        return values

    @staticmethod
    def write(path, samples: np.ndarray, axis: str = 'horizontal') -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({axis: np.asarray(samples, dtype=np.float64)}).to_csv(
            path, index=False, float_format=settings.BENCHMARK_CONFIG['CSV_FLOAT_FORMAT'],
        )
        return path


# ==================== Layout conventions ====================

@dataclass(frozen=True)
class ParsedName:
    bearing_id: str
    condition_id: str
    order_key: int
    sampling_rate_hz: Optional[float] = None
    fault_label: Optional[str] = None


class LayoutMismatch(ValueError):
    pass


_FEMTO_BEARING = re.compile(r'^Bearing(\d+)_(\d+)$')
_FEMTO_FILE = re.compile(r'^acc_(\d+)\.csv$', re.IGNORECASE)
_FEMTO_SKIP = re.compile(r'^temp_\d+\.csv$', re.IGNORECASE)
_XJTU_FILE = re.compile(r'^(\d+)\.csv$', re.IGNORECASE)
_CWRU_GROUP = re.compile(r'^(\d+)k_([A-Za-z]+)$')
_CWRU_DIAMETER = re.compile(r'^(\d{3})$')
_CWRU_LOAD = re.compile(r'^(\d+)\.csv$', re.IGNORECASE)
CWRU_CLASSES = {'B': 'BALL', 'IR': 'IR', 'OR': 'OR'}


class LayoutConventions:
    """
    Path parsers for the supported directory layouts.

    Each parser takes a path relative to the dataset root and returns a
    ParsedName, ``None`` for files the layout deliberately ignores, or raises
    LayoutMismatch with the reason the name does not parse.
    """

    @staticmethod
    def femto_like(rel: Path) -> Optional[ParsedName]:
        if _FEMTO_SKIP.match(rel.name):
            return None
        if len(rel.parts) < 2:
            raise LayoutMismatch("expected <...>/Bearing<c>_<u>/acc_<n>.csv")
        bearing = _FEMTO_BEARING.match(rel.parts[-2])
        if not bearing:
            raise LayoutMismatch(f"directory {rel.parts[-2]!r} is not Bearing<c>_<u>")
        acc = _FEMTO_FILE.match(rel.name)
        if not acc:
            raise LayoutMismatch(f"file {rel.name!r} is not acc_<n>.csv")
        return ParsedName(
            bearing_id=f"{bearing.group(1)}_{bearing.group(2)}",
            condition_id=bearing.group(1),
            order_key=int(acc.group(1)),
        )

    @staticmethod
    def xjtu_like(rel: Path) -> Optional[ParsedName]:
        if len(rel.parts) != 3:
            raise LayoutMismatch("expected <condition>/Bearing<c>_<u>/<n>.csv")
        condition, bearing_dir, name = rel.parts
        bearing = _FEMTO_BEARING.match(bearing_dir)
        if not bearing:
            raise LayoutMismatch(f"directory {bearing_dir!r} is not Bearing<c>_<u>")
        index = _XJTU_FILE.match(name)
        if not index:
            raise LayoutMismatch(f"file {name!r} is not <n>.csv")
        return ParsedName(
            bearing_id=f"{bearing.group(1)}_{bearing.group(2)}",
            condition_id=condition,
            order_key=int(index.group(1)),
        )

    @staticmethod
    def cwru_like(rel: Path) -> Optional[ParsedName]:
        parts = rel.parts
        if len(parts) == 2 and parts[0] == 'Normal':
            load = _CWRU_LOAD.match(parts[1])
            if not load:
                raise LayoutMismatch(f"file {parts[1]!r} is not <load>.csv")
            return ParsedName(
                bearing_id=f"Normal/{load.group(1)}",
                condition_id=load.group(1),
                order_key=0,
                sampling_rate_hz=settings.BENCHMARK_CONFIG['LAYOUT_SAMPLING_RATES']['cwru_normal'],
                fault_label='Normal',
            )
        if len(parts) != 4:
            raise LayoutMismatch("expected <rate>k_<end>/<B|IR|OR>/<diameter>/<load>.csv or Normal/<load>.csv")
        group, fault, diameter, name = parts
        group_match = _CWRU_GROUP.match(group)
        if not group_match:
            raise LayoutMismatch(f"directory {group!r} is not <rate>k_<end>")
        if fault not in CWRU_CLASSES:
            raise LayoutMismatch(f"fault directory {fault!r} is not one of B, IR, OR")
        if not _CWRU_DIAMETER.match(diameter):
            raise LayoutMismatch(f"diameter directory {diameter!r} is not three digits (mils)")
        load = _CWRU_LOAD.match(name)
        if not load:
            raise LayoutMismatch(f"file {name!r} is not <load>.csv")
        return ParsedName(
            bearing_id=f"{group}/{fault}/{diameter}",
            condition_id=load.group(1),
            order_key=int(load.group(1)),
            sampling_rate_hz=float(group_match.group(1)) * 1000.0,
            fault_label=f"{CWRU_CLASSES[fault]}/0.{diameter}",
        )

    @staticmethod
    def parser(layout: str) -> Callable[[Path], Optional[ParsedName]]:
        parsers: Dict[str, Callable[[Path], Optional[ParsedName]]] = {
            'femto_like': LayoutConventions.femto_like,
            'xjtu_like': LayoutConventions.xjtu_like,
            'cwru_like': LayoutConventions.cwru_like,
        }
        try:
            return parsers[layout]
        except KeyError:
            raise ConfigurationError(f"unknown layout {layout!r}; choose one of {sorted(parsers)}")

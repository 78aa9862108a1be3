import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from core.exceptions import ConfigurationError, DatasetIOError
from core.utils import read_config, read_json, write_json

from .models import PARTITIONS, SplitAssignment

logger = logging.getLogger('splits')

BEARING_TABLE_DIR = Path(__file__).resolve().parent / 'bearing_tables'
SPLIT_COLUMNS = ['bearing_id', 'seq_index', 'window_index', 'partition']


def load_bearing_table(name_or_path) -> Dict:
    """A shipped table by name (femto, xjtu, cwru) or a JSON/YAML file."""
    text = str(name_or_path)
    shipped = BEARING_TABLE_DIR / f"{text.lower().replace('_like', '')}.json"
    if shipped.exists() and not Path(text).exists():
        table = read_json(shipped)
    else:
        table = read_config(text)
    table.pop('description', None)
    unknown = [k for k in table if k not in PARTITIONS]
    if unknown:
        raise ConfigurationError(f"bearing table keys must be {PARTITIONS}, got {unknown}")
    return table


def save_split(assignment: SplitAssignment, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [
        {'bearing_id': key[0], 'seq_index': key[1], 'window_index': key[2], 'partition': partition}
        for key, partition in assignment.mapping.items()
    ]
    pd.DataFrame(rows, columns=SPLIT_COLUMNS).to_csv(path, index=False)
    write_json(path.with_name(path.name + '.json'), {
        'strategy': assignment.strategy,
        'seed': assignment.seed,
        'fractions': assignment.fractions,
        'bearing_table': assignment.bearing_table,
    })
    logger.info(f"💾 Saved {assignment.strategy} split of {len(assignment)} samples to {path}")
    return path


def _optional_tuple(value) -> Optional[tuple]:
    return tuple(value) if value is not None else None


def load_split(path) -> SplitAssignment:
    path = Path(path)
    if not path.exists():
        raise DatasetIOError(f"split file not found: {path}")
    frame = pd.read_csv(path, dtype={'bearing_id': str, 'partition': str})
    missing = [c for c in SPLIT_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigurationError(f"{path} is missing columns {missing}")
    mapping = {
        (row.bearing_id, int(row.seq_index), int(row.window_index)): row.partition
        for row in frame.itertuples(index=False)
    }
    sidecar = path.with_name(path.name + '.json')
    meta = read_json(sidecar) if sidecar.exists() else {}
    return SplitAssignment(
        strategy=meta.get('strategy', 'by_bearing'),
        mapping=mapping,
        seed=meta.get('seed'),
        bearing_table=meta.get('bearing_table'),
        fractions=_optional_tuple(meta.get('fractions')),
    )

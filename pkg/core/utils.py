import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
import yaml
from django.conf import settings

from .exceptions import ConfigurationError, DatasetIOError

logger = logging.getLogger('core')

T = TypeVar('T')
R = TypeVar('R')


def bench_config() -> Dict[str, Any]:
    return settings.BENCHMARK_CONFIG


class Seeding:
    """
    Deterministic random streams.

    Every stochastic stage draws from numpy's PCG64 bit generator seeded by a
    SeedSequence whose spawn key names the stage and item (waveform index,
    restart index, tree index...). Streams therefore do not depend on thread
    scheduling or on how many other streams were drawn before.
    """

    @staticmethod
    def sequence(seed: int, *keys: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                      spawn_key=tuple(int(k) for k in keys))

    @staticmethod
    def rng(seed: int, *keys: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(Seeding.sequence(seed, *keys)))

    @staticmethod
    def child_seed(seed: int, *keys: int) -> int:
        return int(Seeding.sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0])

    @staticmethod
    def stage_key(name: str) -> int:
        """Stable integer key for a named stage."""
        return int.from_bytes(hashlib.sha256(name.encode('utf-8')).digest()[:4], 'big')


# ==================== JSON / config files ====================

def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(obj: Any, indent: Optional[int] = 2) -> str:
    # float repr round-trips exactly
    return json.dumps(obj, indent=indent, default=_to_builtin, allow_nan=False)


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + '\n', encoding='utf-8')
    return path


def read_json(path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise DatasetIOError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}", {'detail': str(exc)}) from exc


def read_config(path) -> Dict[str, Any]:
    """Load a JSON or YAML configuration document."""
    path = Path(path)
    if path.suffix.lower() in ('.yaml', '.yml'):
        try:
            data = yaml.safe_load(path.read_text(encoding='utf-8'))
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"invalid YAML in {path}", {'detail': str(exc)}) from exc
    else:
        try:
            data = read_json(path)
        except DatasetIOError as exc:
            raise ConfigurationError(str(exc)) from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top-level document must be an object")
    return data


def config_hash(obj: Any) -> str:
    canonical = json.dumps(obj, sort_keys=True, separators=(',', ':'), default=_to_builtin)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# ==================== Misc ====================

_DIGITS = re.compile(r'(\d+)')


def natural_key(text: str) -> List:
    """Sort key treating digit runs as integers ("acc_10" after "acc_9")."""
    return [int(part) if part.isdigit() else part for part in _DIGITS.split(str(text))]


def thread_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Map in a thread pool; results come back in input order."""
    items = list(items)
    workers = threads or bench_config()['THREADS']
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def parse_fractions(text: str) -> Sequence[float]:
    try:
        return tuple(float(part) for part in text.split(','))
    except ValueError as exc:
        raise ConfigurationError(f"invalid fractions {text!r}") from exc

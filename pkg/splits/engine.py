import logging
import math
from collections import defaultdict
from fnmatch import fnmatchcase
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from core.exceptions import SplitError
from core.utils import Seeding, natural_key

from .models import PARTITIONS, LeakageAudit, SplitAssignment

logger = logging.getLogger('splits')


# ==================== Bearing tables ====================

def _is_pattern_table(table: Mapping) -> bool:
    return bool(table) and set(table) <= set(PARTITIONS) and all(
        isinstance(v, (list, tuple)) for v in table.values()
    )


def resolve_bearing_table(bearing_ids: Sequence[str], table: Mapping) -> Dict[str, str]:
    """
    Map each bearing id to a partition.

    ``table`` is either a resolved ``{bearing_id: partition}`` map or a
    ``{partition: [id or shell pattern, ...]}`` document. An id listed
    literally wins over patterns; an id whose patterns point at more than
    one partition is an error, and so is an id nothing matches.
    """
    if not _is_pattern_table(table):
        resolved = {str(b): str(p) for b, p in table.items()}
        bad = sorted({p for p in resolved.values() if p not in PARTITIONS})
        if bad:
            raise SplitError(f"bearing table uses unknown partitions {bad}")
        missing = [b for b in bearing_ids if b not in resolved]
        if missing:
            raise SplitError(f"bearings missing from the bearing table: {', '.join(missing)}")
        return {b: resolved[b] for b in bearing_ids}

    resolved: Dict[str, str] = {}
    missing: List[str] = []
    for bearing_id in bearing_ids:
        literal = [p for p, entries in table.items() if bearing_id in entries]
        if len(literal) > 1:
            raise SplitError(f"bearing {bearing_id} is listed in {sorted(literal)}")
        if literal:
            resolved[bearing_id] = literal[0]
            continue
        matched = sorted({
            p for p, entries in table.items()
            if any(fnmatchcase(bearing_id, str(pattern)) for pattern in entries)
        })
        if len(matched) > 1:
            raise SplitError(f"bearing {bearing_id} matches patterns of several partitions: {matched}")
        if not matched:
            missing.append(bearing_id)
            continue
        resolved[bearing_id] = matched[0]
    if missing:
        raise SplitError(f"bearings missing from the bearing table: {', '.join(missing)}")
    return resolved


def _bearing_order(samples: Sequence) -> List[str]:
    return sorted({s.bearing_id for s in samples}, key=natural_key)


def split_by_bearing(samples: Sequence, bearing_table: Mapping) -> SplitAssignment:
    """Every sample goes where its bearing is assigned."""
    resolved = resolve_bearing_table(_bearing_order(samples), bearing_table)
    mapping = {s.key: resolved[s.bearing_id] for s in samples}
    assignment = SplitAssignment(strategy='by_bearing', mapping=mapping, bearing_table=resolved)
    empty = [p for p, n in assignment.sizes().items() if n == 0]
    if empty:
        logger.warning(f"⚠️ Bearing split leaves {', '.join(empty)} empty")
    logger.info(f"✂️ Bearing split sizes {assignment.sizes()}")
    return assignment


# ==================== Random split ====================

def check_fractions(fractions: Sequence[float]) -> Tuple[float, float, float]:
    if len(fractions) != 3:
        raise SplitError(f"expected three fractions (train, val, test), got {len(fractions)}")
    fractions = tuple(float(f) for f in fractions)
    if any(not math.isfinite(f) or f <= 0.0 for f in fractions):
        raise SplitError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)!r}")
    return fractions


def partition_quotas(n: int, fractions: Sequence[float]) -> List[int]:
    """
    Largest-remainder quotas: floor(f * n) each, leftover units to the
    largest fractional parts (earlier partition on ties). When n allows it,
    every partition gets at least one sample, taken from the largest quota.
    """
    raw = [f * n for f in fractions]
    quotas = [int(math.floor(r + 1e-9)) for r in raw]
    leftover = n - sum(quotas)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - quotas[i]), i))
    for i in order[:leftover]:
        quotas[i] += 1
    if n >= len(quotas):
        for i in range(len(quotas)):
            if quotas[i] == 0:
                donor = max(range(len(quotas)), key=lambda j: (quotas[j], -j))
                quotas[donor] -= 1
                quotas[i] += 1
    return quotas


def split_random(samples: Sequence, fractions: Optional[Sequence[float]] = None, seed: int = 0) -> SplitAssignment:
    """
    Leaky baseline: samples, not bearings, are shuffled into partitions.

    Samples are put in canonical (bearing, seq, window) order, permuted by a
    seeded PCG64 stream, and the permutation is cut at the partition quotas.
    No class stratification is applied.
    """
    if fractions is None:
        fractions = settings.BENCHMARK_CONFIG['RANDOM_SPLIT_FRACTIONS']
    fractions = check_fractions(fractions)
    keys = sorted({s.key for s in samples}, key=lambda k: (natural_key(k[0]), k[1], k[2]))
    if len(keys) != len(samples):
        raise SplitError("samples contain duplicate provenance keys")
    quotas = partition_quotas(len(keys), fractions)
    rng = Seeding.rng(seed, Seeding.stage_key('split_random'))
    order = rng.permutation(len(keys))

    mapping = {}
    bounds = np.cumsum([0] + quotas)
    for partition, start, stop in zip(PARTITIONS, bounds[:-1], bounds[1:]):
        for index in order[start:stop]:
            mapping[keys[int(index)]] = partition
    assignment = SplitAssignment(strategy='random', mapping=mapping, seed=seed, fractions=fractions)
    logger.info(f"🎲 Random split (seed {seed}) sizes {assignment.sizes()}")
    return assignment


# ==================== Audit ====================

def leakage_audit(assignment: SplitAssignment, samples: Optional[Sequence] = None) -> LeakageAudit:
    """Bearings whose samples land in two or more partitions, with per-partition counts."""
    keys = [s.key for s in samples] if samples is not None else list(assignment.mapping)
    counts: Dict[str, Dict[str, int]] = defaultdict(lambda: {p: 0 for p in PARTITIONS})
    for key in keys:
        if key not in assignment.mapping:
            raise SplitError(f"sample {key} is not covered by the split")
        counts[key[0]][assignment.mapping[key]] += 1

    leaking = {
        bearing_id: {p: n for p, n in per.items() if n}
        for bearing_id, per in sorted(counts.items(), key=lambda item: natural_key(item[0]))
        if sum(1 for n in per.values() if n) >= 2
    }
    if leaking:
        logger.warning(f"⚠️ {len(leaking)} of {len(counts)} bearings span several partitions")
    return LeakageAudit(leak_free=not leaking, leaking_bearings=leaking, n_bearings=len(counts))

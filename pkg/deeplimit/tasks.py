from __future__ import annotations

import logging
from typing import Any, Dict, List

from celery import group, shared_task

from .services.harness import solve_level
from .services.optimize import parallel_map

logger = logging.getLogger(__name__)


@shared_task(bind=True, name="deeplimit.solve_ladder_level")
def solve_ladder_level(self, payload: Dict[str, Any]) -> Dict[str, Any]:
    """
    Celery task: minimise E_n for one ladder level.
    Failures come back in the result's "error" field rather than as task failures.
    """
    return solve_level(payload)


def run_ladder_levels(payloads: List[Dict[str, Any]], workers: int = 1) -> List[Dict[str, Any]]:
    """
    Fan the levels out as a group; results come back in input order.
    In eager mode the signatures run in-process on up to `workers` threads.
    """
    if not payloads:
        return []
    signatures = [solve_ladder_level.s(p) for p in payloads]
    if solve_ladder_level.app.conf.task_always_eager:
        return parallel_map(lambda sig: sig.apply().get(), signatures, workers)
    logger.info("Dispatching %d ladder levels to Celery workers", len(signatures))
    try:
        return group(signatures).apply_async().get()
    except Exception as e:
        logger.warning("Celery dispatch failed, solving levels in-process: %s", e)
        return parallel_map(solve_level, payloads, workers)

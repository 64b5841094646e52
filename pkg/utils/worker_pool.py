#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Worker Pool
Runs independent model fits in a process pool, yielding results in
submission order so a single caller can write them as they arrive.
"""

import logging
import sys
from concurrent.futures import ProcessPoolExecutor

from tqdm import tqdm

logger = logging.getLogger(__name__)


def map_jobs(fn, items, jobs=1, desc=None, progress=True):
    """Apply ``fn`` to every item, in order, with ``jobs`` worker processes

    ``fn`` must be a module-level function taking one argument. Progress
    (including fits per second) goes to standard error.
    """
    items = list(items)
    bar = tqdm(total=len(items), desc=desc, unit="fit", file=sys.stderr, disable=not progress, leave=False)
    try:
        if jobs <= 1 or len(items) <= 1:
            for item in items:
                result = fn(item)
                bar.update(1)
                yield result
        else:
            logger.debug(f"Starting process pool with {jobs} workers for {len(items)} jobs")
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for result in pool.map(fn, items, chunksize=1):
                    bar.update(1)
                    yield result
    finally:
        bar.close()

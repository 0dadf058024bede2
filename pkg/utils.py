"""
Shared helpers: package logger, deterministic number formatting, CSV/JSON
rendering and an order-preserving parallel map.
"""

import asyncio
import csv
import io
import json
import logging
import math

import numpy as np

# Package logger; create_app attaches Flask's default handler to it
logger = logging.getLogger("dicke_dft")


def get_logger(name: str) -> logging.Logger:
    """Child logger of the package logger (e.g. 'dicke_dft.spectral')."""
    return logger.getChild(name)


def format_float(value) -> str:
    """Format a real number with 17 significant digits."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def render_csv(header, rows) -> str:
    """Render a table as CSV text with LF line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(cell) for cell in row])
    return buffer.getvalue()


def to_jsonable(obj):
    """
    Convert numpy containers and scalars into plain JSON types.

    Non-finite floats become None so the output stays valid JSON.
    """
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def render_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, ensure_ascii=False) + "\n"


async def _gather_ordered(func, items, threads):
    semaphore = asyncio.Semaphore(threads)

    async def run_one(item):
        async with semaphore:
            return await asyncio.to_thread(func, item)

    return await asyncio.gather(*(run_one(item) for item in items))


def gather_ordered(func, items, threads: int = 1) -> list:
    """
    Apply func to every item, concurrently when threads > 1.

    Results come back in input order regardless of completion order, so
    parallel and sequential runs assemble identical outputs.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    return list(asyncio.run(_gather_ordered(func, items, int(threads))))

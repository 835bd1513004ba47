"""
Utility functions shared by the data, training and reporting code: seeding,
worker pools, digests and JSON-lines files.
"""
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy

from .errors import ConfigError, DataError


def child_rng(seed, *keys):
    """
    Independent generator for a (seed, keys...) path. The same path always
    gives the same stream, regardless of the order in which paths are used,
    so serial and parallel generation agree.

    Parameters
    ----------

    seed : int
        Master seed
    keys : ints
        Path below the master seed (e.g. split index, scene index)
    """
    return numpy.random.default_rng(numpy.random.SeedSequence([int(seed)] + [int(k) for k in keys]))


def worker_count(default=1):
    """
    Number of worker threads, from the ``DBEA_THREADS`` environment variable.
    """
    value = os.environ.get("DBEA_THREADS")
    if value is None or value == "":
        return default
    try:
        n = int(value)
    except ValueError:
        raise ConfigError("not an integer: {!r}".format(value), "DBEA_THREADS")
    if n < 1:
        raise ConfigError("must be >= 1", "DBEA_THREADS")
    return n


def parallel_map(fn, items, workers=1):
    """
    ``list(map(fn, items))``, optionally on a thread pool. Output order
    always follows input order.
    """
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def file_digest(path):
    """
    SHA-256 hex digest of a file's contents.
    """
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def _encode(obj):
    # Floats are written with 17 significant digits so they round-trip exactly.
    if isinstance(obj, (bool, numpy.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, numpy.integer)):
        return str(int(obj))
    if isinstance(obj, (float, numpy.floating)):
        obj = float(obj)
        if not numpy.isfinite(obj):
            raise DataError("cannot serialize non-finite float {}".format(obj))
        text = format(obj, '.17g')
        if 'e' not in text and '.' not in text and 'n' not in text:
            text += '.0'
        return text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return '{' + ', '.join(json.dumps(str(k)) + ': ' + _encode(v)
                               for k, v in obj.items()) + '}'
    if isinstance(obj, numpy.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return '[' + ', '.join(_encode(v) for v in obj) + ']'
    raise DataError("cannot serialize {!r}".format(type(obj)))


def dumps_record(record):
    """
    One JSON-lines record (no trailing newline).
    """
    return _encode(record)


def write_jsonl(path, records):
    """
    Write records one per line, UTF-8.
    """
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(dumps_record(record))
            f.write('\n')


def read_jsonl(path):
    """
    Read a JSON-lines file.

    Returns
    -------

    records : list of dict

    Raises
    ------

    DataError
        Naming the first line that does not parse to an object.
    """
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as error:
                raise DataError("{}:{}: {}".format(path, lineno, error.msg))
            if not isinstance(record, dict):
                raise DataError("{}:{}: record is not an object".format(path, lineno))
            records.append(record)
    return records

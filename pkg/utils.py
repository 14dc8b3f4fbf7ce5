# Different utils: hashing and seeding, atomic artifact writes, csv/json output, logging setup, run manifests.

import hashlib
import json
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from datetime import timedelta

import pandas as pd
from loguru import logger

TOOL_VERSION = '0.1.0'


def print_duration(time_start, message):
    seconds = int(time.time() - time_start)
    logger.info(f'{message}{timedelta(seconds=seconds)}')
    return seconds / 60


def sha256_text(text):
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            h.update(chunk)
    return h.hexdigest()


def derive_seed(seed, key):
    # per-item seed from the run seed and a stable key; independent of execution order
    return int(sha256_text(f'{seed}:{key}')[:16], 16)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(',', ':'))


@contextmanager
def atomic_write(path, mode='w'):
    """Yields a file object on a temp file next to `path`; renames over `path` on success."""
    path = os.fspath(path)
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=dirname, prefix='.' + os.path.basename(path) + '.', suffix='.tmp')
    try:
        if 'b' in mode:
            f = os.fdopen(fd, mode)
        else:
            f = os.fdopen(fd, mode, encoding='utf-8', newline='\n')
        with f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json(obj, path):
    with atomic_write(path) as f:
        json.dump(obj, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_jsonl(rows, path):
    n = 0
    with atomic_write(path) as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + '\n')
            n += 1
    return n


def read_jsonl(path):
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def rows_to_csv(rows, path, columns=None):
    df = pd.DataFrame(list(rows), columns=columns)
    with atomic_write(path) as f:
        df.to_csv(f, index=False, lineterminator='\n')
    return path


def setup_logging(log_path=None, level='INFO'):
    # human-readable stderr sink plus an optional line-delimited JSON sink
    logger.remove()
    logger.add(sys.stderr, level=level,
               format='<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {extra[stage]} | {message}')
    if log_path:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        logger.add(log_path, level='DEBUG', serialize=True, enqueue=True)
    logger.configure(extra={'stage': '-', 'record_id': None, 'outcome': None})


def write_manifest(out_dir, stage, config_hash, seed, inputs, outputs, extra=None, prefix=None):
    """Writes [<prefix>.]<stage>.manifest.json into out_dir. Output paths are stored relative to out_dir."""
    from corpus import FORMAT_VERSION

    out_dir = os.fspath(out_dir)
    manifest = {
        'stage': stage,
        'tool_version': TOOL_VERSION,
        'format_version': FORMAT_VERSION,
        'config_hash': config_hash,
        'seed': seed,
        'inputs': {os.path.basename(os.fspath(p)): sha256_file(p) for p in inputs},
        'outputs': {os.path.relpath(os.fspath(p), out_dir): sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    name = f'{prefix}.{stage}.manifest.json' if prefix else f'{stage}.manifest.json'
    return write_json(manifest, os.path.join(out_dir, name))

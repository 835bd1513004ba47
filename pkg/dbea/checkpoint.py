"""
Checkpoint files.

Layout: the magic bytes ``DBEACKPT``, a little-endian uint32 header length,
a UTF-8 JSON header, then the parameters as little-endian float64 in header
order. The header holds the format version, the model config, the name,
shape and byte offset of every tensor, the payload length and its SHA-256.
"""
import json
import logging
import os
import struct

import numpy

from .errors import CheckpointError, ShapeError
from .model import ModelConfig, TandemModel
from .utils import sha256_bytes

logger = logging.getLogger(__name__)

MAGIC = b'DBEACKPT'
FORMAT_VERSION = 1


def checkpoint_bytes(model):
    """
    Serialized form of `model`; equal models give equal bytes.
    """
    tensors, chunks, offset = [], [], 0
    for name, array in model.named_arrays():
        data = numpy.ascontiguousarray(array, dtype='<f8').tobytes()
        tensors.append({'name': name, 'shape': list(array.shape), 'offset': offset})
        chunks.append(data)
        offset += len(data)
    payload = b''.join(chunks)
    header = {
        'format_version': FORMAT_VERSION,
        'model_config': model.config.to_dict(),
        'tensors': tensors,
        'payload_bytes': len(payload),
        'sha256': sha256_bytes(payload),
    }
    header = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return MAGIC + struct.pack('<I', len(header)) + header + payload


def save_checkpoint(model, path):
    """
    Write `model` (its parameters and config) to `path`. The file is replaced
    atomically, so an existing checkpoint survives a failed write.
    """
    data = checkpoint_bytes(model)
    tmp = "{}.tmp".format(path)
    with open(tmp, 'wb') as f:
        f.write(data)
    os.replace(tmp, path)
    logger.debug("saved %d parameters to %s", model.count(), path)
    return path


def _parse_header(data, path):
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC):
        raise CheckpointError("{}: not a checkpoint".format(path))
    (n,) = struct.unpack('<I', data[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(data) < start + n:
        raise CheckpointError("{}: truncated header".format(path))
    try:
        header = json.loads(data[start:start + n].decode('utf-8'))
    except (UnicodeDecodeError, ValueError):
        raise CheckpointError("{}: corrupt header".format(path))
    return header, data[start + n:]


def load_checkpoint(path, expected_config=None):
    """
    Read a checkpoint written by `save_checkpoint`.

    Parameters
    ----------

    path : string
    expected_config : ModelConfig, optional
        If given, the stored config must equal it

    Returns
    -------

    model : TandemModel

    Raises
    ------

    CheckpointError
        On truncation, digest mismatch or an unknown format version; nothing
        is loaded in that case.
    ShapeError
        If the stored config differs from `expected_config`.
    """
    with open(path, 'rb') as f:
        data = f.read()
    header, payload = _parse_header(data, path)
    if header.get('format_version') != FORMAT_VERSION:
        raise CheckpointError("{}: format version {!r}, expected {}".format(
            path, header.get('format_version'), FORMAT_VERSION))
    if len(payload) != header['payload_bytes']:
        raise CheckpointError("{}: payload is {} bytes, header says {}".format(
            path, len(payload), header['payload_bytes']))
    if sha256_bytes(payload) != header['sha256']:
        raise CheckpointError("{}: digest mismatch".format(path))
    try:
        config = ModelConfig(**header['model_config'])
    except TypeError as error:
        raise CheckpointError("{}: bad model config: {}".format(path, error))
    if expected_config is not None and config != expected_config:
        diff = ["{}: stored {} vs expected {}".format(k, getattr(config, k),
                                                      getattr(expected_config, k))
                for k in config.__dataclass_fields__
                if getattr(config, k) != getattr(expected_config, k)]
        raise ShapeError("{}: checkpoint does not match the model config ({})".format(
            path, "; ".join(diff)))
    model = TandemModel.init(config, seed=0)
    stored = {t['name']: t for t in header['tensors']}
    named = model.named_arrays()
    if sorted(stored) != sorted(name for name, _ in named):
        raise ShapeError("{}: tensor names do not match the model".format(path))
    for name, array in named:
        entry = stored[name]
        if tuple(entry['shape']) != array.shape:
            raise ShapeError("{}: tensor {} has shape {}, model expects {}".format(
                path, name, tuple(entry['shape']), array.shape))
        values = numpy.frombuffer(payload, dtype='<f8', count=array.size,
                                  offset=entry['offset'])
        array[...] = values.reshape(array.shape)
    return model

"""
Model checkpoint container.

A checkpoint is a little-endian chunk stream: every
chunk starts with a `<III` header (chunk type, payload size, format version).

    HEADER  b"DITCKPT\\0" + UTF-8 JSON {"config": {...}, "metadata": {...}}
    PARAM   <H name length> name <B ndim> <ndim·I dims> <f8 values, row-major>
            (one chunk per parameter, names in sorted order)
    END     empty payload

Readers reject an unknown format version, a missing HEADER/END chunk, a
parameter whose byte count disagrees with its dims, and any parameter set
that does not match the configured model.
"""

import json
from enum import IntEnum
from pathlib import Path
from struct import calcsize, pack, unpack_from
from typing import Any, Dict, Optional, Tuple

import numpy as np

from dit_cache.common.autodiff import parameter
from dit_cache.common.errors import FormatError
from dit_cache.common.format_versions import format_versions
from dit_cache.common.run_directory import atomic_write_bytes
from dit_cache.debug_system import get_debug_logger, LogCategory
from .Core import DiTConfig, DiTModel

# Module-level debug logger
debug_logger = get_debug_logger()

MAGIC = b"DITCKPT\0"
CHUNK_HEADER = "<III"


class ChunkType(IntEnum):
    HEADER = 0x1
    PARAM = 0x2
    END = 0x3


#######################################################
class Chunks:

    #######################################################
    @staticmethod
    def write_chunk(data: bytes, chunk_type: ChunkType) -> bytes:
        return pack(CHUNK_HEADER, chunk_type, len(data), format_versions.current("checkpoint")) + data

    #######################################################
    @staticmethod
    def read_chunk(data: bytes, offset: int) -> Tuple[ChunkType, bytes, int]:
        """Returns (type, payload, next offset)"""
        header_size = calcsize(CHUNK_HEADER)
        if offset + header_size > len(data):
            raise FormatError(f"truncated chunk header at byte {offset}")
        raw_type, size, version = unpack_from(CHUNK_HEADER, data, offset)
        format_versions.check("checkpoint", version, f"chunk at byte {offset}")
        try:
            chunk_type = ChunkType(raw_type)
        except ValueError:
            raise FormatError(f"unknown chunk type 0x{raw_type:X} at byte {offset}")
        start = offset + header_size
        if start + size > len(data):
            raise FormatError(f"chunk at byte {offset} runs past the end of the file")
        return chunk_type, data[start:start + size], start + size

    #######################################################
    @staticmethod
    def pack_param(name: str, values: np.ndarray) -> bytes:
        encoded = name.encode("utf-8")
        out = pack("<H", len(encoded)) + encoded + pack("<B", values.ndim)
        out += pack(f"<{values.ndim}I", *values.shape)
        return out + np.ascontiguousarray(values, dtype="<f8").tobytes()

    #######################################################
    @staticmethod
    def unpack_param(payload: bytes) -> Tuple[str, np.ndarray]:
        try:
            name_len = unpack_from("<H", payload, 0)[0]
            pos = 2
            name = payload[pos:pos + name_len].decode("utf-8")
            pos += name_len
            ndim = unpack_from("<B", payload, pos)[0]
            pos += 1
            dims = unpack_from(f"<{ndim}I", payload, pos)
            pos += 4 * ndim
        except Exception as e:
            raise FormatError(f"malformed parameter chunk: {e}")
        count = int(np.prod(dims)) if dims else 1
        if len(payload) - pos != 8 * count:
            raise FormatError(f"parameter {name!r}: {len(payload) - pos} bytes for dims {dims}")
        values = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).astype(np.float64)
        return name, values.reshape(dims)


def checkpoint_bytes(model: DiTModel, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    header = json.dumps({"config": model.config.to_dict(), "metadata": metadata or {}},
                        sort_keys=True).encode("utf-8")
    out = bytearray(Chunks.write_chunk(MAGIC + header, ChunkType.HEADER))
    for name in sorted(model.params):
        out += Chunks.write_chunk(Chunks.pack_param(name, model.params[name].data), ChunkType.PARAM)
    out += Chunks.write_chunk(b"", ChunkType.END)
    return bytes(out)


def model_from_bytes(data: bytes, source: str = "") -> Tuple[DiTModel, Dict[str, Any]]:
    chunk_type, payload, offset = Chunks.read_chunk(data, 0)
    if chunk_type is not ChunkType.HEADER or not payload.startswith(MAGIC):
        raise FormatError(f"{source or 'data'} is not a dit_cache checkpoint")
    header = json.loads(payload[len(MAGIC):].decode("utf-8"))
    config = DiTConfig(**header["config"])

    params = {}
    while True:
        chunk_type, payload, offset = Chunks.read_chunk(data, offset)
        if chunk_type is ChunkType.END:
            break
        if chunk_type is not ChunkType.PARAM:
            raise FormatError(f"unexpected {chunk_type.name} chunk in parameter stream")
        name, values = Chunks.unpack_param(payload)
        params[name] = parameter(values)

    expected = DiTModel.parameter_shapes(config)
    if set(params) != set(expected):
        raise FormatError(f"parameter set does not match config: "
                          f"{sorted(set(params) ^ set(expected))[:5]}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise FormatError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")
    return DiTModel(config, params), header.get("metadata", {})


def save_checkpoint(model: DiTModel, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write model to path atomically"""
    target = atomic_write_bytes(path, checkpoint_bytes(model, metadata))
    debug_logger.log_file_operation("save checkpoint", str(target))
    return target


def load_checkpoint(path) -> Tuple[DiTModel, Dict[str, Any]]:
    """Read a checkpoint; returns (model, metadata)"""
    path = Path(path)
    data = path.read_bytes()
    model, metadata = model_from_bytes(data, str(path))
    debug_logger.log_file_operation("load checkpoint", str(path), details={"bytes": len(data)})
    return model, metadata

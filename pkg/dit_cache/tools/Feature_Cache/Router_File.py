"""
Router file I/O.

A router file is JSON text:

    {"version": 1, "T": 8, "N": 8, "tau": 0.1, "logits": [T·N floats, row-major, t = 1 first]}

Floats are written with repr precision so a round-trip is bit-exact.
"""

import json
from pathlib import Path
from typing import Optional

import numpy as np

from dit_cache.common.errors import DimensionError, FormatError
from dit_cache.common.format_versions import format_versions
from dit_cache.common.run_directory import atomic_write_bytes, csv_text
from dit_cache.debug_system import get_debug_logger
from .Core import GateSource, Router, as_gate_matrix

# Module-level debug logger
debug_logger = get_debug_logger()


def router_to_dict(router: Router) -> dict:
    return {
        "version": format_versions.current("router"),
        "T": router.T,
        "N": router.N,
        "tau": router.tau,
        "logits": [float(v) for v in router.logits.data.reshape(-1)],
    }


def router_bytes(router: Router) -> bytes:
    return (json.dumps(router_to_dict(router), indent=1) + "\n").encode("utf-8")


def router_from_dict(payload: dict, source: str = "", expected_n: Optional[int] = None) -> Router:
    if not isinstance(payload, dict):
        raise FormatError(f"router file {source} does not hold a JSON object")
    format_versions.check("router", payload.get("version"), source)
    try:
        T, N, tau = int(payload["T"]), int(payload["N"]), float(payload["tau"])
        logits = np.asarray(payload["logits"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"router file {source} is malformed: {e}")
    if logits.size != T * N:
        raise FormatError(f"router file {source}: {logits.size} logits for T={T}, N={N}")
    if expected_n is not None and N != expected_n:
        raise DimensionError(f"router in {source or 'file'} does not fit the model", (T, N), (T, expected_n))
    return Router(logits.reshape(T, N), tau)


def save_router(router: Router, path) -> Path:
    target = atomic_write_bytes(path, router_bytes(router))
    debug_logger.log_file_operation("save router", str(target), details={"T": router.T, "N": router.N})
    return target


def load_router(path, expected_n: Optional[int] = None) -> Router:
    """
    Read a router file.

    Args:
        path: router JSON file
        expected_n: block count of the target model; a mismatch raises DimensionError

    Returns:
        Router with the stored logits and threshold
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"router file {path} is not valid JSON: {e}")
    router = router_from_dict(payload, str(path), expected_n)
    debug_logger.log_file_operation("load router", str(path))
    return router


def grid_csv(source: GateSource) -> str:
    """T rows × N columns of 0/1 (1 = cached), first row is t = T"""
    gates = as_gate_matrix(source)
    cached = gates.cached_mask().astype(int)
    header = ["t"] + [f"block_{i}" for i in range(gates.N)]
    rows = ([t] + cached[t - 1].tolist() for t in range(gates.T, 0, -1))
    return csv_text(header, rows)

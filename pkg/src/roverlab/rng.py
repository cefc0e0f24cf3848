"""Deterministic random streams built on the Philox counter-based generator.

Every stochastic subsystem draws from its own Philox4x64 stream keyed by
(master_seed, stream_id), so consumption in one subsystem never shifts the
draws of another and whole runs replay bit-for-bit from a single seed.
"""

from __future__ import annotations

import numpy as np

_U64 = (1 << 64) - 1

# Stream ids (second Philox key word).
TERRAIN = 1
POLICY_INIT = 2
ACTION_SAMPLING = 3
MINIBATCH_SHUFFLE = 4
ENV_BASE = 1000  # env i uses ENV_BASE + i
EVAL_ENV = 2000
EVAL_RUN_BASE = 3000  # transfer run r uses EVAL_RUN_BASE + r


def stream(master_seed: int, stream_id: int) -> np.random.Generator:
    """Independent generator for (master_seed, stream_id), both taken mod 2^64."""
    key = np.array([master_seed & _U64, stream_id & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def capture_state(gen: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's full internal state."""
    state = gen.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "counter": [int(v) for v in state["state"]["counter"]],
        "key": [int(v) for v in state["state"]["key"]],
        "buffer": [int(v) for v in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_state(snapshot: dict) -> np.random.Generator:
    """Rebuild a generator from a capture_state() snapshot."""
    gen = np.random.Generator(np.random.Philox())
    gen.bit_generator.state = {
        "bit_generator": snapshot["bit_generator"],
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return gen

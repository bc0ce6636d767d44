"""The .nbt tensor file format and the run-configuration document.

Every array the engine exchanges with the outside world travels through one
tiny binary format: magic, dtype byte, rank byte, 8-byte extents, row-major
little-endian payload.  Writes are byte-deterministic and non-finite values
are refused at the door.
"""

import io

import numpy as np

from promptfuse import (
    NonFiniteValueError,
    load_tensor,
    parse_config,
    read_tensor,
    save_tensor,
    write_tensor,
)

rng = np.random.default_rng(1)
arr = rng.standard_normal((4, 8, 8)).astype(np.float32)

sink = io.BytesIO()
write_tensor(arr, sink)
data = sink.getvalue()
print(f"4x8x8 float32 -> {len(data)} bytes "
      f"(6 header + 3*8 extents + {arr.size * 4} payload)")
print(f"magic {data[:4]!r}, dtype byte {data[4]}, rank byte {data[5]}")

back = read_tensor(io.BytesIO(data))
print("round trip bitwise identical:", np.array_equal(back, arr))

sink2 = io.BytesIO()
write_tensor(arr, sink2)
print("second write produces identical bytes:", sink2.getvalue() == data)

try:
    write_tensor(np.array([1.0, np.nan], dtype=np.float32), io.BytesIO())
except NonFiniteValueError as exc:
    print("NaN refused on write:", exc)

# the config document is a flat key = value file with typed defaults
config = parse_config("""
# editing run settings
num_ddim_steps = 25
fusion_mode = adaptive
lambda = 1e-5
""")
print(f"\nconfig: {config.num_ddim_steps} steps, fusion {config.fusion_mode}, "
      f"lambda {config.lambda_}, seed {config.seed} (default)")

import tempfile, pathlib
with tempfile.TemporaryDirectory() as tmp:
    path = pathlib.Path(tmp) / "latent.nbt"
    save_tensor(path, arr)
    print(f"file helpers round trip: {np.array_equal(load_tensor(path), arr)}")

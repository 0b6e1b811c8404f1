"""Regenerates the NPY reference fixtures with numpy's own writer.

Each array is stored as <name>.npy next to an entry in expected.json giving
dtype, shape, and every element's bit pattern in C order.
"""
import json

import numpy as np

rng = np.random.default_rng(20240611)
cases = {}


def bits(a):
    flat = np.ascontiguousarray(a).reshape(-1)
    view = {"<f4": np.uint32, "<f8": np.uint64, "<i8": np.uint64}[a.dtype.str]
    return [int(v) for v in flat.view(view)]


def save(name, a, version=None, fortran=False):
    if fortran:
        arr = np.asfortranarray(a)
    else:
        arr = a if a.ndim == 0 else np.ascontiguousarray(a)
    with open(f"{name}.npy", "wb") as f:
        np.lib.format.write_array(f, arr, version=version)
    cases[name] = {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "fortran": fortran,
        "version": list(version or (1, 0)),
        "bits": bits(a),
    }


dtypes = ["<f4", "<f8", "<i8"]
for i in range(20):
    rank = int(rng.integers(1, 4))
    shape = tuple(int(s) for s in rng.integers(1, 7, size=rank))
    dt = dtypes[i % 3]
    if dt == "<i8":
        a = rng.integers(-(2**40), 2**40, size=shape, dtype=np.int64)
    else:
        a = rng.standard_normal(shape).astype(dt)
    save(f"random_{i:02}", a)

save("fortran_f8", rng.standard_normal((3, 4, 2)), fortran=True)
save("fortran_i8", rng.integers(-9, 9, size=(5, 3)).astype("<i8"), fortran=True)
save("v2_f4", rng.standard_normal((2, 3)).astype("<f4"), version=(2, 0))
save("scalar_f8", np.array(2.5))
save("empty_f4", np.zeros((0, 4), dtype="<f4"))
save("single_f8", np.array([0.0]))

with open("expected.json", "w") as f:
    json.dump(cases, f, indent=1, sort_keys=True)

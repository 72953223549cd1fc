"""Compare the two surface-normal kernel backends.

Runs the same scenes through the compiled path and the pure-numpy path,
reports wall time for each, and proves the outputs agree.  Usage:

    python3 benchmarks/bench_kernels.py [--size 480x640] [--repeats 3]

The first compiled-path call includes JIT compilation; it is timed
separately as "warmup".
"""
import argparse
import os
import sys
import time

import numpy as np

from depthkit import CameraIntrinsics, DepthMap
from depthkit import _kernels
from depthkit.geometry import backproject_grid


def _scene(h: int, w: int) -> DepthMap:
    """A sloped sheet with a bump and a band of holes."""
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    values = 3.0 + 0.002 * us + 0.004 * vs
    values += 0.3 * np.exp(-((us - w / 2) ** 2 + (vs - h / 2) ** 2) / (0.02 * h * w))
    values[(us + vs) % 17 == 0] = 0.0
    return DepthMap(values)


def _run(points, valid, k, backend: str, repeats: int):
    os.environ["DEPTHKIT_NUMBA"] = "1" if backend == "numba" else "0"
    timings = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = _kernels.normals_from_points(points, valid, k)
        timings.append(time.perf_counter() - t0)
    return result, min(timings)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", default="480x640", help="scene HxW (default 480x640)")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timed passes per backend; the best is reported")
    parser.add_argument("--k-neighbors", type=int, default=25)
    args = parser.parse_args(argv)
    h, w = (int(p) for p in args.size.lower().split("x"))

    depth = _scene(h, w)
    cam = CameraIntrinsics(fx=0.8 * w, fy=0.8 * w,
                           cx=(w - 1) / 2, cy=(h - 1) / 2, baseline=0.075)
    points = backproject_grid(depth, cam)
    saved = os.environ.get("DEPTHKIT_NUMBA")
    try:
        os.environ["DEPTHKIT_NUMBA"] = "1"
        if _kernels.using_numba():
            t0 = time.perf_counter()
            _kernels.normals_from_points(points, depth.valid, args.k_neighbors)
            print(f"warmup (jit compile): {time.perf_counter() - t0:.3f}s")
            (nb_n, nb_ok), nb_time = _run(points, depth.valid, args.k_neighbors,
                                          "numba", args.repeats)
        else:
            print("compiled path unavailable; timing the numpy path twice")
            nb_n = nb_ok = nb_time = None

        (np_n, np_ok), np_time = _run(points, depth.valid, args.k_neighbors,
                                      "numpy", args.repeats)
    finally:
        if saved is None:
            os.environ.pop("DEPTHKIT_NUMBA", None)
        else:
            os.environ["DEPTHKIT_NUMBA"] = saved

    px = h * w
    print(f"scene {h}x{w}, k={args.k_neighbors}, "
          f"valid={depth.valid.mean():.3f}, repeats={args.repeats}")
    print(f"numpy : {np_time:.3f}s  ({px / np_time / 1e6:.2f} Mpx/s)")
    if nb_time is None:
        return 0
    print(f"numba : {nb_time:.3f}s  ({px / nb_time / 1e6:.2f} Mpx/s)")
    print(f"speedup: {np_time / nb_time:.1f}x")

    if not np.array_equal(nb_ok, np_ok):
        print("FAIL: validity masks differ")
        return 1
    # normals are sign-fixed toward the camera, so compare directly; the
    # paths accumulate the covariances in different orders, so agreement
    # is to rounding, not bitwise
    dev = np.abs(nb_n[nb_ok] - np_n[np_ok]).max() if nb_ok.any() else 0.0
    print(f"max |numba - numpy| over valid normals: {dev:.3e}")
    if dev > 1e-6:
        print("FAIL: backends disagree beyond 1e-6")
        return 1
    print("backends agree")
    return 0


if __name__ == "__main__":
    sys.exit(main())

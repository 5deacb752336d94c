"""Time the per-vertex kernels under numba and plain numpy.

    python3 benchmarks/bench_kernels.py --vertices 1000000 --repeat 5
"""

import argparse
import time

import numpy as np

from warpdiff import _kernels


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile on first numba call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vertices", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    n = rng.normal(size=(args.vertices, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    J = rng.normal(scale=0.3, size=(args.vertices, 3, 3))
    p = rng.normal(size=(args.vertices, 3))
    q = p + rng.normal(scale=0.1, size=p.shape)
    edges = np.stack([np.arange(args.vertices - 1), np.arange(1, args.vertices)], axis=1)

    backends = ["numba", "numpy"] if _kernels.HAVE_NUMBA else ["numpy"]
    print(f"{args.vertices} vertices, best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for label, call in [
        ("tangent_frames", lambda b: _kernels.tangent_frames(n, backend=b)),
        ("update_normals", lambda b: _kernels.update_normals(n, J, backend=b)),
        ("edge_growth", lambda b: _kernels.edge_growth(p, q, edges, backend=b)),
    ]:
        times = [best_of(lambda: call(b), args.repeat) for b in backends]
        row = f"{label:<16}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>11.1f}x"
        print(row)

    a, _ = _kernels.update_normals(n, J, backend=backends[0])
    b, _ = _kernels.update_normals(n, J, backend=backends[-1])
    print(f"max |numba - numpy| normal difference: {np.abs(a - b).max():.1e}")


if __name__ == "__main__":
    main()

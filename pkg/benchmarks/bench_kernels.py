"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--sizes 20,60,110] [--repeat 50]

Prints one row per (kernel, network size) with median wall time of each
path and the speedup. Compilation happens in a warm-up call and is not timed.
"""
import argparse
import statistics
import time

import numpy as np

from offloadnet import _kernels as k
from offloadnet.gcnn import _coefficients
from offloadnet.instances import make_instance
from offloadnet.policy import baseline_weights


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(inst, rng):
    cg = inst.conflict
    ext = inst.extended
    r = inst.link_rates.astype(float)
    x = rng.uniform(0, 40, r.size)
    g = rng.normal(size=r.size)
    mus = k.contention_forward_np(r, x, cg.indptr, cg.indices, 10)
    indptr, nbr, eid = ext.csr
    w = baseline_weights(ext)
    phys = ~ext.is_virtual
    src = int(inst.edge_nodes[0])
    lg = ext.line_graph
    coef = _coefficients(lg)
    X = rng.normal(size=(lg.vertex_count, 32))
    return {
        "contention_forward": lambda impl: impl(r, x, cg.indptr, cg.indices, 10),
        "contention_backward": lambda impl: impl(r, x, mus, cg.indptr, cg.indices, g),
        "dijkstra": lambda impl: impl(indptr, nbr, eid, w, phys, src),
        "bracket": lambda impl: impl(lg.indptr, lg.indices, coef, X, True),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="20,60,110")
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    if k.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    pairs = {
        "contention_forward": (k.contention_forward_np, k.contention_forward_jit),
        "contention_backward": (k.contention_backward_np, k.contention_backward_jit),
        "dijkstra": (k.dijkstra_np, k.dijkstra_jit),
        "bracket": (k.laplacian_apply_np, k.laplacian_apply_jit),
    }
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'n':>4} {'links':>6} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        inst = make_instance(n, 1000 + n, draws=0)
        for name, call in cases(inst, rng).items():
            np_impl, jit_impl = pairs[name]
            t_np = median_time(lambda: call(np_impl), args.repeat)
            t_jit = median_time(lambda: call(jit_impl), args.repeat)
            print(f"{name:<20} {n:>4} {inst.extended.n_links:>6} {1e6 * t_np:>10.1f} "
                  f"{1e6 * t_jit:>10.1f} {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()

"""Compare the numba and pure-numpy orbit kernels, fast vs basic-on-closure.

    python3 benchmarks/bench_orbits.py [--side 12] [--repeats 5]

Uses [htrans1, vtrans1] on a side x side image grid acting on both sides of a
(side^2) x (side^2) layer; the closure has order side^2.
"""

import argparse
import time

from equisearch import tied_mlp
from equisearch._accel import NUMBA_AVAILABLE, use_backend
from equisearch.orbit_engine import LayerShape, build_edge_action, orbits_basic, orbits_fast


def best_of(fn, repeats):
    fn()  # warm-up (JIT compile)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--side", type=int, default=12)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    n = args.side ** 2
    shape = LayerShape(n, n)
    plans = [tied_mlp.plan_from_spec(s, [n, n], output="same") for s in ("htrans1", "vtrans1")]
    actions = [build_edge_action(shape, p.boundaries[0], p.boundaries[1]) for p in plans]
    closure = tied_mlp.joint_plan(plans)
    closure_action = build_edge_action(shape, closure.boundaries[0], closure.boundaries[1])
    backends = ["numba", "numpy"] if NUMBA_AVAILABLE else ["numpy"]
    print(f"layer {shape}, N={shape.edge_count}, closure order {closure.group.order}")
    print(f"{'backend':8} {'algorithm':9} {'seconds':>10} {'apps/N':>8}")
    results = {}
    for b in backends:
        with use_backend(b):
            for name, fn in (("fast", lambda: orbits_fast(shape, actions)),
                             ("basic", lambda: orbits_basic(shape, closure_action))):
                t, part = best_of(fn, args.repeats)
                results[b, name] = t
                print(f"{b:8} {name:9} {t:10.5f} {part.run.applications / shape.edge_count:8.1f}")
    for b in backends:
        print(f"{b}: basic/fast wall-time ratio {results[b, 'basic'] / results[b, 'fast']:.2f}")
    if len(backends) == 2:
        for name in ("fast", "basic"):
            print(f"{name}: numpy/numba speedup {results['numpy', name] / results['numba', name]:.2f}")


if __name__ == "__main__":
    main()

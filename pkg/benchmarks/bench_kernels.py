"""Compare the compiled kernel backend against the pure-NumPy fallback.

Times the three hot kernels (batched MLP forward, backward, Adam) at the
shapes the training loop actually uses, for whichever backends are
importable.  Run:

    python3 benchmarks/bench_kernels.py [--repeats 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from munlab._kernels import act_code
from munlab._kernels import numpy_ref

try:
    from munlab._kernels import _core
except ImportError:  # pragma: no cover - source-only installs
    _core = None

SHAPES = {
    "dynamics member (64, 3-128-128-2)": ([3, 128, 128, 2], 64),
    "policy (64, 4-64-64-1)": ([4, 64, 64, 1], 64),
    "distance (960, 4-64-64-1)": ([4, 64, 64, 1], 960),
}


def _setup(layer_sizes, batch, rng):
    weights = [rng.standard_normal((o, i)) * 0.1
               for i, o in zip(layer_sizes, layer_sizes[1:])]
    biases = [rng.standard_normal(o) * 0.01 for o in layer_sizes[1:]]
    x = rng.standard_normal((batch, layer_sizes[0]))
    d_out = rng.standard_normal((batch, layer_sizes[-1]))
    return weights, biases, x, d_out


def _time(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e6  # us per call


def bench(backend, name, repeats, rng):
    rows = []
    hidden, out = act_code("tanh"), act_code("identity")
    for label, (sizes, batch) in SHAPES.items():
        weights, biases, x, d_out = _setup(sizes, batch, rng)
        acts = backend.forward(weights, biases, x, hidden, out)
        fwd = _time(lambda: backend.forward(weights, biases, x, hidden, out), repeats)
        bwd = _time(
            lambda: backend.backward(weights, acts, d_out, hidden, out, True, True),
            repeats,
        )
        grad = [np.zeros_like(w) + 1e-3 for w in weights]
        m = [np.zeros_like(w) for w in weights]
        v = [np.zeros_like(w) for w in weights]
        adam = _time(
            lambda: [backend.adam_update(w, g, mm, vv, 10, 1e-3, 0.9, 0.999, 1e-8)
                     for w, g, mm, vv in zip(weights, grad, m, v)],
            repeats,
        )
        rows.append((label, fwd, bwd, adam))
    print(f"\n{name}")
    print(f"  {'shape':40s} {'forward':>10s} {'backward':>10s} {'adam':>10s}")
    for label, fwd, bwd, adam in rows:
        print(f"  {label:40s} {fwd:8.1f}us {bwd:8.1f}us {adam:8.1f}us")
    return {label: (fwd, bwd, adam) for label, fwd, bwd, adam in rows}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    ref = bench(numpy_ref, "numpy_ref (pure python fallback)", args.repeats, rng)
    if _core is None:
        print("\ncompiled backend not available; build the extension to compare")
        return
    core = bench(_core, "_core (compiled)", args.repeats, rng)
    print("\nspeedup (numpy_ref / _core)")
    for label in SHAPES:
        ratios = [r / max(c, 1e-9) for r, c in zip(ref[label], core[label])]
        print(f"  {label:40s} fwd x{ratios[0]:.2f}  bwd x{ratios[1]:.2f}  "
              f"adam x{ratios[2]:.2f}")


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-numpy scan backends.

    python3 benchmarks/bench_backends.py [--lengths 256,1024,4096] [--repeats 3]

Prints one CSV row per (backend, kernel, L) with the median wall time and the
largest deviation from the compiled sequential result.
"""

import argparse
import sys

import numpy as np

from noisebox import _kernels
from noisebox.bench import median_ns


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", default="256,1024,4096")
    ap.add_argument("--channels", type=int, default=128, help="flattened C*S width")
    ap.add_argument("--chunk", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels not built; only the python backend is timed", file=sys.stderr)
    rng = np.random.default_rng(args.seed)
    print("backend,kernel,L,wall_ns,max_abs_dev")
    for L in (int(s) for s in args.lengths.split(",")):
        a = rng.uniform(0.5, 1.0, (L, args.channels))
        x = rng.standard_normal((L, args.channels))
        ref = _kernels.get_backend(backends[-1]).scan_seq(a, x)
        for name in backends:
            mod = _kernels.get_backend(name)
            for kernel, fn in (("seq", lambda: mod.scan_seq(a, x)),
                               ("chunked", lambda: mod.scan_chunked(a, x, args.chunk))):
                wall = median_ns(fn, args.repeats)
                dev = float(np.max(np.abs(fn() - ref)))
                print(f"{name},{kernel},{L},{wall},{dev:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Compare the compiled and numpy RLS kernels.

    python benchmarks/bench_rls.py [--frames 250] [--bins 257] [--repeat 5]

Two regimes are timed: all bins of a 4 s clip (numpy vectorises across
bins) and a single long bin (numpy pays Python overhead per frame).
"""

import argparse
import timeit

import numpy as np

from egonoise import _rls_py
from egonoise.gsc import GscState, RlsParams

try:
    from egonoise import _rls_ext
except ImportError:  # extension not built
    _rls_ext = None


def make_inputs(frames, bins, dim, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((frames, bins)) + 1j * rng.standard_normal((frames, bins))
    u = rng.standard_normal((frames, bins, dim)) + 1j * rng.standard_normal((frames, bins, dim))
    return d, u


def time_backend(run, d, u, dim, repeat):
    def once():
        st = GscState.initial(d.shape[1], dim, RlsParams())
        run(d, u, st.w, st.P, st.lam)

    return min(timeit.repeat(once, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=250)
    ap.add_argument("--bins", type=int, default=257)
    ap.add_argument("--dim", type=int, default=5, help="blocked-signal dimension (M - 1)")
    ap.add_argument("--long-frames", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    regimes = [
        (f"{args.frames} frames x {args.bins} bins", args.frames, args.bins),
        (f"{args.long_frames} frames x 1 bin", args.long_frames, 1),
    ]
    print(f"{'regime':<28} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for name, frames, bins in regimes:
        d, u = make_inputs(frames, bins, args.dim)
        t_py = time_backend(_rls_py.rls_run, d, u, args.dim, args.repeat)
        if _rls_ext is None:
            print(f"{name:<28} {t_py * 1e3:>12.1f} {'n/a':>12} {'':>8}")
            continue
        t_cy = time_backend(_rls_ext.rls_run, d, u, args.dim, args.repeat)
        print(f"{name:<28} {t_py * 1e3:>12.1f} {t_cy * 1e3:>12.1f} {t_py / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()

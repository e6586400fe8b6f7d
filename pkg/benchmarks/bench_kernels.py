"""Compare the compiled kernels with the numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]

Prints ns/element for each kernel and backend, and checks that both agree.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from muslab.autograd import _fallback as gelu_py
from muslab.fp8 import E4M3, E5M2
from muslab.fp8 import _fallback as quant_py

try:
    from muslab.autograd import _kernels as gelu_c
    from muslab.fp8 import _kernels as quant_c
except ImportError:
    gelu_c = quant_c = None


def _time(fn, n: int, repeat: int) -> float:
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    return best / n * 1e9


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    x = np.random.default_rng(args.seed).standard_normal(args.n) * 100.0
    if quant_c is None:
        print("compiled kernels not built; only the fallback is timed")

    print(f"{'kernel':<14}{'python ns/elt':>15}{'cython ns/elt':>15}{'speedup':>10}")
    for fmt in (E4M3, E5M2):
        qargs = (fmt.mantissa_bits, fmt.min_exponent, fmt.max_finite, True, fmt.overflow_value)
        py = _time(lambda: quant_py.quantize_array(x, *qargs), args.n, args.repeat)
        row = f"{'quantize ' + fmt.name:<14}{py:>15.2f}"
        if quant_c is not None:
            c = _time(lambda: quant_c.quantize_array(x, *qargs), args.n, args.repeat)
            same = np.array_equal(quant_py.quantize_array(x, *qargs), quant_c.quantize_array(x, *qargs))
            row += f"{c:>15.2f}{py / c:>9.1f}x" + ("" if same else "  MISMATCH")
        print(row)

    g = x / 100.0
    py = _time(lambda: gelu_py.gelu_with_grad(g), args.n, args.repeat)
    row = f"{'gelu+grad':<14}{py:>15.2f}"
    if gelu_c is not None:
        c = _time(lambda: gelu_c.gelu_with_grad(g), args.n, args.repeat)
        err = max(np.max(np.abs(a - b)) for a, b in zip(gelu_py.gelu_with_grad(g), gelu_c.gelu_with_grad(g)))
        row += f"{c:>15.2f}{py / c:>9.1f}x  max|diff|={err:.1e}"
    print(row)


if __name__ == "__main__":
    main()

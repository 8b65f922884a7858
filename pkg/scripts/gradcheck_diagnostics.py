"""Where does the full-model finite-difference check lose accuracy?

Runs the 64-bit check on the fixed 4-token instance, lists the worst
elements, then recomputes those elements with extended-precision central
differences to tell analytic errors apart from difference-quotient noise.

    python scripts/gradcheck_diagnostics.py [--top 8]
"""

import argparse
import time

import numpy as np

from acmimlln import autodiff as ad
from acmimlln.synthetic import gradcheck_problem


def extended_difference(model, loss, name, idx, h="1e-7"):
    t = model.params[name]
    flat = t.data.reshape(-1)
    i = np.ravel_multi_index(idx, t.shape) if t.shape else 0
    h = np.longdouble(h)
    with ad.no_grad():
        orig = flat[i]
        flat[i] = orig + h
        up = loss().data
        flat[i] = orig - h
        down = loss().data
        flat[i] = orig
    return (up - down) / (2 * h)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--top", type=int, default=8)
    ap.add_argument("--eps", type=float, default=1e-5)
    args = ap.parse_args()

    ad.set_default_dtype(np.float64)
    model, loss = gradcheck_problem()
    start = time.perf_counter()
    report = ad.grad_check(loss, model.params, eps=args.eps)
    print(f"loss {float(loss().data):.6f}  max relative error {report.max_error:.3e}  "
          f"({time.perf_counter() - start:.1f}s)")
    print(f"within rtol=1e-4 atol=1e-9: {report.within(1e-4, 1e-9)}")

    worst = sorted(report.errors.items(), key=lambda kv: -kv[1])[:args.top]
    ad.set_default_dtype(np.longdouble)
    for _, t in model.params.items():
        t.data = t.data.astype(np.longdouble)
    print(f"\n{'parameter':<28}{'index':<12}{'rel err':>10}{'analytic':>14}{'fd 64-bit':>14}"
          f"{'fd extended':>14}{'analytic vs ext':>17}")
    for name, err in worst:
        idx = report.worst_index[name]
        a, n = report.analytic[name][idx], report.numeric[name][idx]
        ref = float(extended_difference(model, loss, name, idx))
        rel = abs(a - ref) / max(abs(a), abs(ref), 1e-300)
        print(f"{name:<28}{str(tuple(int(k) for k in idx)):<12}{err:>10.2e}{a:>14.6e}{n:>14.6e}"
              f"{ref:>14.6e}{rel:>17.2e}")
    if np.finfo(np.longdouble).eps == np.finfo(np.float64).eps:
        print("\nnote: longdouble is 64-bit on this platform, the extended column is not extended")


if __name__ == "__main__":
    main()

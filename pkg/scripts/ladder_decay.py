"""h-ladder norms of Op_h(a) applied to wave packets at several tau offsets.

Prints the log-log slope and R^2, and the slope of log norm against 1/h,
which separates power-law decay from exp(-c/h) decay."""
import argparse

import numpy as np

from kglab.model import SpacetimeModel
from kglab.quantize import GridSpec, PacketClipped, symbol_a
from kglab.spectral import ladder_fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--taus", type=float, nargs="+", default=[1.0, 0.7, 0.6, 0.5, 0.3, 0.0])
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--T", type=float, default=2.0)
    args = ap.parse_args()
    grid = GridSpec(8.0, 1024, 512)
    sym = symbol_a(args.delta, args.T)
    hs = [2.0 ** -k for k in range(3, 8)]
    m = SpacetimeModel.flat()
    print(f"{'tau0':>5} {'s_prime':>8} {'R2':>6} {'d log|.|/d(1/h)':>16} {'R2(1/h)':>8}  norms")
    for tau in args.taus:
        try:
            f = ladder_fit(m, sym, (-3 * args.T, 0.0, tau, 1.0), hs, grid)
        except PacketClipped as exc:
            print(f"{tau:>5.2f}  unresolved: {exc}")
            continue
        keep = np.asarray(f.norms) > 1e-13
        inv_h = 1 / np.asarray(hs)[keep]
        ln = np.log(np.asarray(f.norms)[keep])
        if keep.sum() >= 2:
            c, b = np.polyfit(inv_h, ln, 1)
            ss = np.sum((ln - ln.mean()) ** 2)
            r2e = 1 - np.sum((ln - (c * inv_h + b)) ** 2) / ss if ss > 0 else 1.0
        else:
            c, r2e = float("nan"), float("nan")
        r2 = f.r2 if f.r2 is not None else float("nan")
        norms = " ".join(f"{v:.1e}" for v in f.norms)
        print(f"{tau:>5.2f} {f.s_prime:>8.2f} {r2:>6.3f} {c:>16.3f} {r2e:>8.3f}  {norms}")


if __name__ == "__main__":
    main()

"""Per-mode connection determinants |W| for z = +-i, with the L-doubling check."""
import argparse

from kglab.model import SpacetimeModel
from kglab.spectral import mode_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--c02", default="0.2*jap(t)^(-3)")
    ap.add_argument("--mu", type=float, default=2.0)
    ap.add_argument("--m-max", type=int, default=32)
    ap.add_argument("--L", type=float, default=100.0)
    args = ap.parse_args()
    m = SpacetimeModel.from_strings(mu=args.mu, c02=args.c02)
    rep = mode_scan(m, args.m_max, args.L)
    print(f"{'m':>4} {'z':>4} {'|W|':>12} {'L-doubling':>11}")
    for r in rep.results:
        key = (r.m, f"{r.z.imag:+g}i")
        print(f"{r.m:>4} {key[1]:>4} {r.W:>12.6e} {rep.stability[key]:>11.1e}")
    print("verdict:", rep.verdict)


if __name__ == "__main__":
    main()

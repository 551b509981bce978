"""Relative error of the assembled second- and first-order Weyl rules in t
against the quadrature oracle, as the t-grid is refined at fixed L."""
import argparse

from kglab.quantize import GridSpec, weyl_oracle_error


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--coef", default="jap(t)^(-3)")
    ap.add_argument("--L", type=float, default=4.0)
    ap.add_argument("--max-power", type=int, default=8, help="largest N_t = 2^k")
    args = ap.parse_args()
    print(f"{'N_t':>6} {'dt':>8} {'a tau^2':>11} {'a tau':>11}")
    for k in range(4, args.max_power + 1):
        g = GridSpec(args.L, 2 ** k, 16)
        e2 = weyl_oracle_error(args.coef, 2, g)
        e1 = weyl_oracle_error(args.coef, 1, g)
        print(f"{g.N_t:>6} {g.dt:>8.4f} {e2:>11.3e} {e1:>11.3e}")


if __name__ == "__main__":
    main()

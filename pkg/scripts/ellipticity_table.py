"""Grid minimum of |p| on supp[eta (1 - a)] for the two standard models."""
import time

from kglab.ellipticity import EllipticityConstants, appendix_scan, find_T0
from kglab.model import SpacetimeModel

MODELS = {
    "flat": SpacetimeModel.flat(1.0),
    "decaying": SpacetimeModel.from_strings(mu=2.0, c02="0.2*jap(t)^(-3)"),
}


def main():
    print(f"{'model':>9} {'delta':>6} {'T0':>6} {'min|p|':>8} {'/delta':>7} {'case':>5} {'band min':>9} {'sec':>5}")
    for name, m in MODELS.items():
        for d in (0.05, 0.1, 0.2):
            t0 = time.perf_counter()
            T0 = find_T0(m, d)
            rep = appendix_scan(m, d, max(20.0, T0), res=48)
            dt = time.perf_counter() - t0
            c = EllipticityConstants(d)
            assert c.identity_exact()
            print(f"{name:>9} {d:>6.2f} {T0:>6.2f} {rep.min_gap:>8.4f} {rep.min_gap / d:>7.3f} "
                  f"{rep.extra['case_at_argmin']:>5} {rep.extra['band']['min_abs_p']:>9.2e} {dt:>5.1f}")


if __name__ == "__main__":
    main()

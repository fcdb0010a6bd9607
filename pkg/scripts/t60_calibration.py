"""How close does the image method get to the target T60 as the order grows?

Samples rooms with targets in a T60 range, simulates RIRs at several image
orders, and prints the distribution of estimated T30 / target per order.

    python3 scripts/t60_calibration.py --rooms 50 --orders 2 4 6 10 16
"""
import argparse

import numpy as np

from speechforge.room import estimate_t60, sample_room, simulate_rir
from speechforge.seeding import STAGE_RIRS, derive_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rooms", type=int, default=50)
    ap.add_argument("--orders", type=int, nargs="+", default=[2, 4, 6, 10, 16])
    ap.add_argument("--t60", type=float, nargs=2, default=[0.2, 0.4])
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    rooms = [sample_room(derive_seed(args.seed, STAGE_RIRS, i), args.t60) for i in range(args.rooms)]
    print(f"{'order':>5} {'median':>7} {'p10':>6} {'p90':>6} {'within30%':>10}")
    for order in args.orders:
        r = np.array([estimate_t60(simulate_rir(room, order).taps, 16000) / room.t60_target_s
                      for room in rooms])
        print(f"{order:>5} {np.median(r):7.3f} {np.percentile(r, 10):6.3f} {np.percentile(r, 90):6.3f} "
              f"{np.mean(np.abs(r - 1) <= 0.3):10.0%}")


if __name__ == "__main__":
    main()

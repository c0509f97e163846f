#!/usr/bin/env python3
"""Closed-form parameter count of the full-size network preset.

Conv layers use 3x3x3 kernels with a bias per filter. The backbone ends at
512 x 1 x 4 x 4, which feeds FC6. Output is the frozen regression constant
used by the network tests.
"""

KERNEL = 3 * 3 * 3
CONV = [(3, 64), (64, 128), (128, 256), (256, 256), (256, 512), (512, 512), (512, 512), (512, 512)]
FLAT = 512 * 1 * 4 * 4
FC = [(FLAT, 4096), (4096, 4096)]
N_CLASSES = 21


def main():
    total = 0
    for c_in, c_out in CONV:
        n = c_out * c_in * KERNEL + c_out
        print(f"conv {c_in:>3} -> {c_out:<3} {n:>10}")
        total += n
    for n_in, n_out in FC:
        n = n_out * n_in + n_out
        print(f"fc   {n_in:>4} -> {n_out:<4} {n:>10}")
        total += n
    heads = [("identification", 4096, N_CLASSES), ("verification", 4096, 2)]
    for name, n_in, n_out in heads:
        n = n_out * n_in + n_out
        print(f"{name:<14} {n:>10}")
        total += n
    print(f"total {total}")


if __name__ == "__main__":
    main()

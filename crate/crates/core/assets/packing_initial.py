import os
import sys

N = 26


# EVOLVE-BLOCK-START
def construct_packing():
    """Return a list of (x, y, r) circles inside the unit square."""
    circles = []
    for i in range(5):
        for j in range(5):
            circles.append((0.1 + 0.2 * i, 0.1 + 0.2 * j, 0.1))
    circles.append((0.2, 0.2, 0.1 * (2 ** 0.5 - 1)))
    return circles
# EVOLVE-BLOCK-END


def main(results_dir):
    circles = construct_packing()
    assert len(circles) == N, f"expected {N} circles, got {len(circles)}"
    os.makedirs(results_dir, exist_ok=True)
    with open(os.path.join(results_dir, "packing.txt"), "w") as f:
        for x, y, r in circles:
            f.write(f"{x!r} {y!r} {r!r}\n")


if __name__ == "__main__":
    main(sys.argv[1])

"""Which calibrated parameter rows admit long simulated paths.

    python scripts/stability_scan.py --steps 1400 --paths 200
"""

import argparse
import math

import numpy as np

from pdvgas import kernel
from pdvgas.model import ModelParams, SimulationError, StorageParams, simulate_ensemble

ROWS = {
    "01/2019-10/2019": (1.4561, 5.2536, 4.2638, 2.1268, 0.1361, 4.0786),
    "11/2019-03/2020": (0.8734, 2.2244, 4.8764, 0.7193, 0.0341, 0.1893),
    "03/2020-12/2020": (1.4555, 5.0995, 6.7183, 0.4703, 0.0331, 0.5034),
    "01/2021-06/2021": (1.0387, 3.5386, 1.4187, 0.0501, 0.0118, 1.7770),
    "06/2021-02/2022": (1.0440, 1.3144, 0.2145, 0.4443, 0.0758, 3.4641),
    "02/2022-12/2022": (1.4961, 5.5812, 0.9507, 0.0803, 0.0186, 5.2523),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1400)
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--s0", type=float, default=2.0)
    args = ap.parse_args()
    per = 0.5 + 0.1 * np.cos(2 * np.pi * np.arange(args.steps + 1) / 365)
    for name, row in ROWS.items():
        p = ModelParams(*row)
        mass = kernel.kernel_mass(args.steps, p.kernel)
        try:
            ens = simulate_ensemble(p, StorageParams.constant(0.104, -0.3616), per, math.log(args.s0), 0.0, args.steps, args.paths, seed=0)
            status = f"ok, max |log price| {np.max(np.abs(ens.log_prices)):.2f}"
        except SimulationError as exc:
            status = f"diverged ({exc})"
        print(f"{name}  alpha={p.alpha:.4f}  kernel mass at end {mass:+.2f}  {status}")


if __name__ == "__main__":
    main()

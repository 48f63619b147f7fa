"""Monte-Carlo bound for ranging error under log-normal shadowing.

Run once, output checked in as tests/fixtures/distance_bound.json. Uses numpy's
PCG64 generator and vectorised maths, independent of the package code path.

With shadowing X ~ N(0, sigma) the nominal inverse yields
d_hat = d * 10^(-X / (10 n)); the relative error |d_hat/d - 1| does not depend
on d. We simulate many batches of 1000 trials, take each batch's median
relative error, and report a high quantile of those medians as the bound.
"""

import json
import sys
from pathlib import Path

import numpy as np

SIGMA_DB = 2.0
EXPONENT = 2.7
DISTANCE_M = 200.0
TRIALS = 1000
BATCHES = 20000
QUANTILE = 0.9999


def main(out: Path) -> None:
    rng = np.random.Generator(np.random.PCG64(0x5EED))
    shadow = rng.normal(0.0, SIGMA_DB, size=(BATCHES, TRIALS))
    d_hat = DISTANCE_M * 10 ** (-shadow / (10 * EXPONENT))
    rel = np.abs(d_hat - DISTANCE_M) / DISTANCE_M
    medians = np.median(rel, axis=1)
    result = {
        "sigma_db": SIGMA_DB,
        "exponent": EXPONENT,
        "distance_m": DISTANCE_M,
        "trials": TRIALS,
        "batches": BATCHES,
        "quantile": QUANTILE,
        "median_of_medians": round(float(np.median(medians)), 6),
        "max_median": round(float(medians.max()), 6),
        "bound": round(float(np.quantile(medians, QUANTILE)), 6),
    }
    out.write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "fixtures" / "distance_bound.json")

"""Write scikit-learn's bundled Wine data to data/wine.csv (features + class)."""
import argparse
from pathlib import Path

import numpy as np
from sklearn.datasets import load_wine


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "wine.csv"))
    args = parser.parse_args()
    wine = load_wine()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(list(wine.feature_names) + ["class"])
    table = np.column_stack([wine.data, wine.target])
    fmt = ["%.10g"] * wine.data.shape[1] + ["%d"]
    np.savetxt(out, table, delimiter=",", header=header, comments="", fmt=fmt)
    print(f"wrote {out} ({table.shape[0]} rows)")


if __name__ == "__main__":
    main()

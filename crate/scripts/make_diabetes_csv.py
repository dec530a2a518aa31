#!/usr/bin/env python3
"""Build the 64-predictor diabetes design as a CSV the CLI can read.

The base data are the 442-patient diabetes measurements that ship with
scikit-learn (10 covariates, raw units). The quadratic design adds the 9
squares (sex is binary, its square is dropped) and the 45 pairwise
interactions, for 64 predictors total. Standardization is left to the
CLI's --standardize flag.
"""
import numpy as np
from sklearn.datasets import load_diabetes

def main(out_path: str) -> None:
    data = load_diabetes(scaled=False)
    x = data.data  # (442, 10)
    y = data.target
    names = list(data.feature_names)

    cols = [x[:, j] for j in range(10)]
    col_names = list(names)
    # squares, skipping the binary sex column
    for j in range(10):
        if names[j] == "sex":
            continue
        cols.append(x[:, j] ** 2)
        col_names.append(f"{names[j]}^2")
    # pairwise interactions
    for a in range(10):
        for b in range(a + 1, 10):
            cols.append(x[:, a] * x[:, b])
            col_names.append(f"{names[a]}*{names[b]}")

    design = np.column_stack(cols)
    assert design.shape == (442, 64), design.shape

    header = ",".join(["y"] + [f"x_{j+1}" for j in range(64)])
    with open(out_path, "w") as fh:
        fh.write(header + "\n")
        for i in range(442):
            row = [repr(float(y[i]))] + [repr(float(v)) for v in design[i]]
            fh.write(",".join(row) + "\n")
    print(f"wrote {out_path}: 442 rows, 64 predictors")
    print("columns:", ", ".join(col_names))

if __name__ == "__main__":
    import sys
    main(sys.argv[1] if len(sys.argv) > 1 else "data/diabetes.csv")

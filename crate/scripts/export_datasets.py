"""Export the five benchmark datasets to the CSV layout read by `fwshap`.

Iris, Wine, Breast cancer and Digits come from the copies bundled with
scikit-learn. Vehicle Silhouettes is read from the original Statlog
`xa*.dat` files (pass their directory with --vehicle-dir).
"""

import argparse
import csv
import glob
import os

from sklearn import datasets


def write_csv(path, names, rows, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + ["class"])
        for row, lab in zip(rows, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def clean(name):
    return name.strip().replace(" ", "_").replace(",", "")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--vehicle-dir", default=None)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    for name, loader in [
        ("iris", datasets.load_iris),
        ("wine", datasets.load_wine),
        ("breast_cancer", datasets.load_breast_cancer),
        ("digits", datasets.load_digits),
    ]:
        b = loader()
        write_csv(os.path.join(args.out, f"{name}.csv"),
                  [clean(n) for n in b.feature_names], b.data, b.target)

    if args.vehicle_dir:
        classes = {"bus": 0, "opel": 1, "saab": 2, "van": 3}
        rows, labels = [], []
        for part in sorted(glob.glob(os.path.join(args.vehicle_dir, "xa*.dat*"))):
            with open(part) as fh:
                for line in fh:
                    tok = line.split()
                    if not tok:
                        continue
                    rows.append([float(t) for t in tok[:-1]])
                    labels.append(classes[tok[-1]])
        names = ["COMPACTNESS", "CIRCULARITY", "DISTANCE_CIRCULARITY", "RADIUS_RATIO",
                 "PR_AXIS_ASPECT_RATIO", "MAX_LENGTH_ASPECT_RATIO", "SCATTER_RATIO",
                 "ELONGATEDNESS", "PR_AXIS_RECTANGULARITY", "MAX_LENGTH_RECTANGULARITY",
                 "SCALED_VARIANCE_MAJOR", "SCALED_VARIANCE_MINOR", "SCALED_RADIUS_OF_GYRATION",
                 "SKEWNESS_ABOUT_MAJOR", "SKEWNESS_ABOUT_MINOR", "KURTOSIS_ABOUT_MAJOR",
                 "KURTOSIS_ABOUT_MINOR", "HOLLOWS_RATIO"]
        write_csv(os.path.join(args.out, "vehicle.csv"), names, rows, labels)


if __name__ == "__main__":
    main()

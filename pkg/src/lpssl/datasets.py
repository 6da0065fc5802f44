"""Synthetic classification and attribute-prediction benchmarks.

Both generators are pure functions of their arguments (seed included) and
return a :class:`DatasetBundle` with four disjoint splits.  Classes are
balanced, and the labelled split is stratified across classes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("labelled", "unlabelled", "val", "test")


class DatasetFormatError(ValueError):
    """A dataset file does not match the expected layout."""


@dataclass
class DatasetBundle:
    task: str  # classification | attributes
    x: dict  # split -> (n, input_dim) float array
    y: dict  # split -> (n,) int array or (n, D) int array
    config: dict
    codebook: np.ndarray | None = None
    centers: np.ndarray | None = field(default=None, repr=False)

    @property
    def input_dim(self) -> int:
        return self.x["labelled"].shape[1]

    @property
    def n_outputs(self) -> int:
        if self.task == "classification":
            return int(self.config["K"])
        return int(self.config["D"])

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self.x[name], self.y[name]

    def sizes(self) -> dict:
        return {s: len(self.x[s]) for s in SPLITS}


def _split_sizes(n_total: int, n_labelled: int | None, labelled_frac: float,
                 val_frac: float, test_frac: float) -> dict:
    n_val = int(round(val_frac * n_total))
    n_test = int(round(test_frac * n_total))
    n_lab = int(round(labelled_frac * n_total)) if n_labelled is None else int(n_labelled)
    n_unl = n_total - n_val - n_test - n_lab
    if min(n_val, n_test, n_lab, n_unl) < 1:
        raise ValueError(f"split sizes infeasible for n_total={n_total}")
    if n_unl < n_lab:
        raise ValueError("unlabelled split must be at least as large as the labelled split")
    return {"labelled": n_lab, "unlabelled": n_unl, "val": n_val, "test": n_test}


def _balanced_classes(n_total: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.arange(n_total) % n_classes
    return rng.permutation(labels)


def _assign_splits(labels: np.ndarray, sizes: dict, n_classes: int,
                   rng: np.random.Generator) -> dict:
    """Return split -> example indices; the labelled split is class-stratified."""
    order = rng.permutation(len(labels))
    per_class = [order[labels[order] == c] for c in range(n_classes)]
    n_lab = sizes["labelled"]
    quota = [n_lab // n_classes + (1 if c < n_lab % n_classes else 0) for c in range(n_classes)]
    if any(q > len(p) for q, p in zip(quota, per_class)):
        raise ValueError("not enough examples per class for the labelled split")
    lab = np.concatenate([p[:q] for p, q in zip(per_class, quota)])
    lab = rng.permutation(lab)
    taken = np.zeros(len(labels), dtype=bool)
    taken[lab] = True
    rest = order[~taken[order]]
    out = {"labelled": lab}
    start = 0
    for name in ("unlabelled", "val", "test"):
        out[name] = rest[start:start + sizes[name]]
        start += sizes[name]
    return out


def _place_centers(k: int, dim: int, min_dist: float, half_width: float,
                   rng: np.random.Generator, max_tries: int = 20000) -> np.ndarray:
    centers: list[np.ndarray] = []
    for _ in range(max_tries):
        c = rng.uniform(-half_width, half_width, size=dim)
        if all(np.linalg.norm(c - o) >= min_dist for o in centers):
            centers.append(c)
            if len(centers) == k:
                return np.array(centers)
    raise ValueError(f"cannot place {k} centers {min_dist:g} apart in {dim} dimensions "
                     f"within [-{half_width:g}, {half_width:g}]")


def gen_cluster_classification(K: int = 4, input_dim: int = 2, n_total: int = 2000,
                               cluster_spread: float = 0.5, seed: int = 0,
                               n_labelled: int | None = None, labelled_frac: float = 0.05,
                               val_frac: float = 0.1, test_frac: float = 0.1,
                               box_half_width: float | None = None) -> DatasetBundle:
    """One isotropic Gaussian cluster per class; centers at least 6 spreads apart."""
    if K < 2:
        raise ValueError("need K >= 2 classes")
    if cluster_spread < 0:
        raise ValueError("cluster_spread must be non-negative")
    rng = np.random.default_rng(seed)
    min_dist = 6.0 * cluster_spread
    if box_half_width is None:
        box_half_width = max(3.0 * cluster_spread, 0.5) * max(1.0, K ** (1.0 / input_dim))
    centers = _place_centers(K, input_dim, min_dist, box_half_width, rng)
    sizes = _split_sizes(n_total, n_labelled, labelled_frac, val_frac, test_frac)
    labels = _balanced_classes(n_total, K, rng)
    x = centers[labels] + cluster_spread * rng.standard_normal((n_total, input_dim))
    idx = _assign_splits(labels, sizes, K, rng)
    config = dict(task="classification", K=K, input_dim=input_dim, n_total=n_total,
                  cluster_spread=cluster_spread, seed=seed, n_labelled=sizes["labelled"],
                  val_frac=val_frac, test_frac=test_frac, box_half_width=box_half_width)
    return DatasetBundle("classification", {s: x[i] for s, i in idx.items()},
                         {s: labels[i] for s, i in idx.items()}, config, centers=centers)


def make_codebook(n_classes: int, n_bits: int, rng: np.random.Generator,
                  min_hamming: int = 2, max_tries: int = 20000) -> np.ndarray:
    """C distinct random D-bit codewords with pairwise Hamming distance >= min_hamming."""
    words: list[np.ndarray] = []
    for _ in range(max_tries):
        w = rng.integers(0, 2, size=n_bits)
        if all(np.sum(w != o) >= min_hamming for o in words):
            words.append(w)
            if len(words) == n_classes:
                return np.array(words, dtype=int)
    raise ValueError(f"cannot place {n_classes} codewords of {n_bits} bits "
                     f"with Hamming distance >= {min_hamming}")


def gen_attribute_task(C: int = 10, D: int = 8, n_total: int = 2000, input_dim: int = 10,
                       noise: float = 0.5, seed: int = 0, n_labelled: int | None = None,
                       labelled_frac: float = 0.05, val_frac: float = 0.1,
                       test_frac: float = 0.1) -> DatasetBundle:
    """Inputs are a random Gaussian class embedding plus noise; labels are the class codeword."""
    if C < 2 or D < 1:
        raise ValueError("need C >= 2 classes and D >= 1 attributes")
    rng = np.random.default_rng(seed)
    codebook = make_codebook(C, D, rng)
    embeddings = rng.standard_normal((C, input_dim))
    sizes = _split_sizes(n_total, n_labelled, labelled_frac, val_frac, test_frac)
    classes = _balanced_classes(n_total, C, rng)
    x = embeddings[classes] + noise * rng.standard_normal((n_total, input_dim))
    y = codebook[classes]
    idx = _assign_splits(classes, sizes, C, rng)
    config = dict(task="attributes", C=C, D=D, input_dim=input_dim, n_total=n_total,
                  noise=noise, seed=seed, n_labelled=sizes["labelled"],
                  val_frac=val_frac, test_frac=test_frac)
    return DatasetBundle("attributes", {s: x[i] for s, i in idx.items()},
                         {s: y[i] for s, i in idx.items()}, config, codebook=codebook,
                         centers=embeddings)


# -- persistence -----------------------------------------------------------

def _header(task: str, input_dim: int, n_out: int, with_y: bool = True) -> list[str]:
    cols = [f"x{i}" for i in range(input_dim)]
    if with_y:
        cols += ["y"] if task == "classification" else [f"y{i}" for i in range(n_out)]
    return cols


def _fmt(v: float) -> str:
    return "%.17g" % v


def _write_csv(path: Path, header: list[str], x: np.ndarray, y: np.ndarray | None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(x)):
            row = [_fmt(v) for v in x[i]]
            if y is not None:
                row += [str(int(v)) for v in np.atleast_1d(y[i])]
            w.writerow(row)


def _read_csv(path: Path, header: list[str], input_dim: int) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: line 1: empty file")
    got = rows[0]
    for col in header:
        if col not in got:
            raise DatasetFormatError(f"{path}: line 1: missing column {col!r}")
    if got != header:
        raise DatasetFormatError(f"{path}: line 1: unexpected columns {got}")
    xs, ys = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetFormatError(f"{path}: line {lineno}: expected {len(header)} fields, "
                                     f"got {len(row)}")
        try:
            xs.append([float(v) for v in row[:input_dim]])
            ys.append([int(v) for v in row[input_dim:]])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
    x = np.array(xs, dtype=np.float64).reshape(len(xs), input_dim)
    y = np.array(ys, dtype=int).reshape(len(ys), len(header) - input_dim)
    return x, y


def save_bundle(bundle: DatasetBundle, path) -> None:
    """Write one CSV per split plus ``config.json`` (and ``codebook.csv``).

    The unlabelled split is written without labels; its true labels go to
    ``unlabelled_hidden.csv`` for analysis only.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    d, n_out = bundle.input_dim, bundle.n_outputs
    header = _header(bundle.task, d, n_out)
    for split in SPLITS:
        x, y = bundle.split(split)
        if split == "unlabelled":
            _write_csv(path / "unlabelled.csv", _header(bundle.task, d, n_out, False), x, None)
            _write_csv(path / "unlabelled_hidden.csv", header, x, y)
        else:
            _write_csv(path / f"{split}.csv", header, x, y)
    if bundle.codebook is not None:
        with open(path / "codebook.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"y{i}" for i in range(bundle.codebook.shape[1])])
            w.writerows(bundle.codebook.tolist())
    with open(path / "config.json", "w") as fh:
        json.dump(bundle.config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(path, hidden: bool = True) -> DatasetBundle:
    """Inverse of :func:`save_bundle`.

    With ``hidden=False`` the unlabelled labels are not read and are filled
    with -1, which is what a trainer should see.
    """
    path = Path(path)
    try:
        with open(path / "config.json") as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path / 'config.json'}: line {exc.lineno}: {exc.msg}") from None
    task = config["task"]
    d = int(config["input_dim"])
    n_out = int(config["K"] if task == "classification" else config["D"])
    header = _header(task, d, n_out)
    xs, ys = {}, {}
    for split in SPLITS:
        if split == "unlabelled":
            if hidden:
                x, y = _read_csv(path / "unlabelled_hidden.csv", header, d)
            else:
                x, _ = _read_csv(path / "unlabelled.csv", _header(task, d, n_out, False), d)
                y = np.full((len(x), 1 if task == "classification" else n_out), -1)
        else:
            x, y = _read_csv(path / f"{split}.csv", header, d)
        xs[split] = x
        ys[split] = y[:, 0] if task == "classification" else y
    codebook = None
    if (path / "codebook.csv").exists():
        _, codebook = _read_csv(path / "codebook.csv", [f"y{i}" for i in range(n_out)], 0)
    return DatasetBundle(task, xs, ys, config, codebook=codebook)

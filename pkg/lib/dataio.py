import io
import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from lib import ConfigError, DataParseError, DataValidationError, derive_seed, get_logger, read_json, write_json

logger = get_logger(__name__)

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}
DEFAULT_FRACTIONS = (0.4, 0.2, 0.4)


@dataclass(frozen=True)
class NoiseSpec:
    rate: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class Dataset:
    name: str
    raw_features: np.ndarray
    features: np.ndarray
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    split: np.ndarray
    feature_names: list = field(default_factory=list)
    dropped_columns: list = field(default_factory=list)
    source: str = ""

    @property
    def n_nodes(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def indices(self, split):
        code = split if isinstance(split, int) else {v: k for k, v in SPLIT_NAMES.items()}[split]
        return np.flatnonzero(self.split == code)

    def split_sizes(self):
        return {name: int((self.split == code).sum()) for code, name in SPLIT_NAMES.items()}


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def resolve_dataset_path(dataset_id, data_dir=None):
    if os.path.exists(dataset_id):
        return dataset_id
    data_dir = data_dir or os.getenv("DYNGLR_DATA_DIR", "data")
    for ext in (".csv", ".dat"):
        path = os.path.join(data_dir, f"{dataset_id}{ext}")
        if os.path.exists(path):
            return path
    raise ConfigError(f"dataset {dataset_id} not found in {data_dir}")


def _read_rows(path):
    """
    Tolerant pre-pass: drops KEEL '@' lines (keeping '@attribute' names as header) and blank lines, and
    remembers the original line number of every kept row.
    """
    keel_names = []
    rows = []
    with open(path, encoding="utf-8") as f:
        for no, line in enumerate(f, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("@"):
                if text.lower().startswith("@attribute"):
                    parts = text.split()
                    if len(parts) < 2:
                        raise DataParseError("attribute without name", line=no)
                    keel_names.append(parts[1])
                continue
            rows.append((no, text))
    if not rows:
        raise DataParseError(f"no data rows in {path}")
    if keel_names:
        header = keel_names
    else:
        header = [h.strip() for h in rows[0][1].split(",")]
        rows = rows[1:]
    if len(header) < 2:
        raise DataParseError("at least one feature column and a label column are required", line=1)
    for no, text in rows:
        if len(text.split(",")) != len(header):
            raise DataParseError(f"expected {len(header)} fields, found {len(text.split(','))}", line=no)
    return header, rows


def _map_labels(raw, line_numbers, label_map=None):
    if label_map:
        mapped = raw.str.strip().map({str(k): v for k, v in label_map.items()})
    else:
        mapped = pd.to_numeric(raw, errors="coerce")
    bad = mapped.isna().to_numpy()
    if bad.any():
        raise DataParseError(f"invalid label '{raw.iloc[int(np.argmax(bad))]}'",
                             line=line_numbers[int(np.argmax(bad))])
    values = set(np.unique(mapped.to_numpy()).tolist())
    if values <= {0, 1}:
        labels = np.where(mapped.to_numpy() > 0, 1, -1)
    elif values <= {-1, 1}:
        labels = mapped.to_numpy().astype(int)
    else:
        raise DataValidationError(f"labels must be in {{0,1}} or {{-1,+1}}, found {sorted(values)}")
    return labels.astype(np.int64)


def load_csv(path, fractions=DEFAULT_FRACTIONS, seed=0, label_map=None, name=None, max_nodes=None):
    header, rows = _read_rows(path)
    line_numbers = np.array([no for no, _ in rows])
    df = pd.read_csv(io.StringIO("\n".join(text for _, text in rows)), header=None, names=header, dtype=str,
                     skipinitialspace=True, keep_default_na=False)
    feature_cols = header[:-1]
    numeric = df[feature_cols].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1).to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        raise DataParseError("non-numeric feature value", line=int(line_numbers[int(np.argmax(bad))]))
    labels = _map_labels(df[header[-1]], line_numbers, label_map)

    duplicated = numeric.duplicated(keep="first").to_numpy()
    if duplicated.any():
        logger.info("Removed duplicated rows", extra={'phase': "DATA", "source": path,
                                                      "duplicates": int(duplicated.sum())})
    numeric = numeric[~duplicated]
    labels = labels[~duplicated]
    if len(np.unique(labels)) < 2:
        raise DataValidationError(f"{path} holds a single class")

    constant = [c for c in feature_cols if numeric[c].nunique() <= 1]
    if constant:
        logger.warning("Dropped constant columns", extra={'phase': "DATA", "source": path, "columns": constant})
        numeric = numeric.drop(columns=constant)
    if numeric.shape[1] == 0:
        raise DataValidationError(f"{path} has no informative feature column")

    raw = numeric.to_numpy(dtype=float)
    ds = Dataset(name=name or os.path.splitext(os.path.basename(path))[0], raw_features=raw, features=raw.copy(),
                 clean_labels=labels, noisy_labels=labels.copy(), split=np.full(len(labels), TRAIN),
                 feature_names=list(numeric.columns), dropped_columns=constant, source=os.path.abspath(path))
    if max_nodes is not None and ds.n_nodes > max_nodes:
        ds = subsample(ds, max_nodes, seed)
    logger.info("Loaded dataset", extra={'phase': "DATA", "source": path, "N": ds.n_nodes, "n": ds.n_features})
    return stratified_split(ds, fractions, seed)


def _stratified_take(candidates, labels, size, seed):
    """Splits `candidates` into (taken, rest) with `size` taken, class proportions kept to within one node."""
    candidates = np.asarray(candidates)
    if size <= 0:
        return candidates[:0], candidates
    if size >= len(candidates):
        return np.sort(candidates), candidates[:0]
    strata = np.asarray(labels)[candidates]
    classes, counts = np.unique(strata, return_counts=True)
    stratify = strata if counts.min() >= 2 and min(size, len(candidates) - size) >= len(classes) else None
    taken, rest = train_test_split(candidates, train_size=size, stratify=stratify, random_state=seed)
    return np.sort(taken), np.sort(rest)


def stratified_choice(labels, size, seed, candidates=None):
    """
    Picks `size` node indices out of `candidates` keeping the class proportions of `labels`.
    """
    candidates = np.arange(len(labels)) if candidates is None else np.asarray(candidates)
    return _stratified_take(candidates, labels, size, seed)[0]


def subsample(ds, max_nodes, seed):
    if ds.n_nodes <= max_nodes:
        return ds
    keep = stratified_choice(ds.clean_labels, max_nodes, seed)
    logger.info("Subsampled dataset", extra={'phase': "DATA", "source": ds.name, "N": ds.n_nodes,
                                             "kept": len(keep)})
    return replace(ds, raw_features=ds.raw_features[keep], features=ds.features[keep],
                   clean_labels=ds.clean_labels[keep], noisy_labels=ds.noisy_labels[keep], split=ds.split[keep])


def standardize(ds):
    train = ds.raw_features[ds.split == TRAIN]
    if len(train) == 0:
        raise DataValidationError("standardization needs training nodes")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = std == 0
    if flat.any():
        logger.warning("Columns constant on the training split are only centred",
                       extra={'phase': "DATA", "columns": [ds.feature_names[i] for i in np.flatnonzero(flat)]})
        std = np.where(flat, 1.0, std)
    return replace(ds, features=(ds.raw_features - mean) / std)


def stratified_split(ds, fractions=DEFAULT_FRACTIONS, seed=0):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions {fractions} must be three non-negative values summing to 1")
    if len(np.unique(ds.clean_labels)) < 2:
        raise DataValidationError("both classes are required to split")
    nodes = np.arange(ds.n_nodes)
    n_train = _round_half_up(fractions[0] * ds.n_nodes)
    n_val = min(_round_half_up(fractions[1] * ds.n_nodes), ds.n_nodes - n_train)
    train, rest = _stratified_take(nodes, ds.clean_labels, n_train, seed)
    val, test = _stratified_take(rest, ds.clean_labels, n_val, derive_seed(seed, "val"))
    split = np.empty(ds.n_nodes, dtype=np.int64)
    split[train], split[val], split[test] = TRAIN, VAL, TEST
    noisy = ds.clean_labels.copy()
    noisy[split == TEST] = 0
    return standardize(replace(ds, split=split, noisy_labels=noisy))


def inject_label_noise(ds, spec):
    if not 0.0 <= spec.rate <= 1.0:
        raise ConfigError(f"noise rate {spec.rate} outside [0, 1]")
    if spec.rate > 0.25:
        logger.warning("Noise rate above the studied range", extra={'phase': "DATA", "rate": spec.rate})
    noisy = ds.noisy_labels.copy()
    for code in (TRAIN, VAL):
        idx = np.flatnonzero(ds.split == code)
        k = _round_half_up(spec.rate * len(idx))
        rng = np.random.default_rng([int(spec.seed), code])
        flip = rng.choice(idx, size=k, replace=False)
        noisy[flip] = -noisy[flip]
    noisy[ds.split == TEST] = 0
    return replace(ds, noisy_labels=noisy)


def dataset_manifest(ds, noise=None, seeds=None):
    return {
        "name": ds.name,
        "source": ds.source,
        "N": ds.n_nodes,
        "n": ds.n_features,
        "split_sizes": ds.split_sizes(),
        "class_counts": {"-1": int((ds.clean_labels == -1).sum()), "+1": int((ds.clean_labels == 1).sum())},
        "noise": {"rate": noise.rate, "seed": noise.seed} if noise is not None else None,
        "seeds": seeds or {},
        "feature_names": ds.feature_names,
        "dropped_columns": ds.dropped_columns,
    }


def save_dataset(ds, out_dir, noise=None, seeds=None):
    os.makedirs(out_dir, exist_ok=True)
    np.savez_compressed(os.path.join(out_dir, "dataset.npz"), raw_features=ds.raw_features, features=ds.features,
                        clean_labels=ds.clean_labels, noisy_labels=ds.noisy_labels, split=ds.split)
    manifest = dataset_manifest(ds, noise, seeds)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def load_dataset(out_dir):
    manifest = read_json(os.path.join(out_dir, "manifest.json"))
    with np.load(os.path.join(out_dir, "dataset.npz")) as data:
        return Dataset(name=manifest["name"], raw_features=data["raw_features"], features=data["features"],
                       clean_labels=data["clean_labels"], noisy_labels=data["noisy_labels"], split=data["split"],
                       feature_names=manifest["feature_names"], dropped_columns=manifest["dropped_columns"],
                       source=manifest["source"])

import json
import logging
import os
import zlib

import numpy as np
import pandas as pd
import yaml
from pythonjsonlogger import jsonlogger

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class DynGlrError(Exception):
    exit_code = 1


class ConfigError(DynGlrError, ValueError):
    exit_code = 2


class DataParseError(DynGlrError):
    exit_code = 3

    def __init__(self, message, line=None):
        super().__init__(f"{message} (line {line})" if line is not None else message)
        self.line = line


class DataValidationError(DynGlrError):
    exit_code = 3


class SignalError(DataValidationError):
    pass


class ShapeError(DynGlrError, ValueError):
    exit_code = 4


class SamplingError(DynGlrError):
    exit_code = 5


class TrainingError(DynGlrError):
    exit_code = 6

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(f"{message} (epoch={epoch}, batch={batch})")
        self.epoch = epoch
        self.batch = batch


class GraphSizeError(DynGlrError):
    exit_code = 7


class UsageError(DynGlrError):
    exit_code = 8


def get_logger(name):
    logger = logging.getLogger(name)
    if not logger.handlers:
        logger.setLevel(os.getenv("DYNGLR_LOG_LEVEL", "INFO"))
        logHandler = logging.StreamHandler()
        formatter = jsonlogger.JsonFormatter('%(asctime)s - %(levelname)s - %(name)s: %(message)s')
        logHandler.setFormatter(formatter)
        logger.addHandler(logHandler)
    return logger


def read_config(path=None):
    path = path or os.getenv("DYNGLR_CONFIG") or os.path.join(ROOT_DIR, "config.yaml")
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} not found")
    with open(path) as f:
        config = yaml.safe_load(f) or {}
    if not isinstance(config, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return config


def merge_dicts(base, override):
    out = dict(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_dicts(out[k], v)
        else:
            out[k] = v
    return out


def derive_seed(*keys):
    """
    Folds a tuple of ints/strings/floats into a 32 bit seed. Same keys give the same seed on every platform.
    """
    entropy = []
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode("utf-8")))
        elif isinstance(k, float):
            entropy.append(int(round(k * 1_000_000)))
        else:
            entropy.append(int(k))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def write_json(path, data):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, default=_json_default)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def append_rows(path, rows, columns=None):
    """
    Appends rows to a csv file, writing the header only when the file does not exist yet. Rows are sent in chunks
    of 500.
    """
    if not rows:
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    for i in range(0, len(rows), 500):
        df = pd.DataFrame(rows[i:i + 500], columns=columns)
        df.to_csv(path, mode="a", header=not os.path.exists(path), index=False)

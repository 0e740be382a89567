# Shared helpers: seeds, confidence intervals, logging setup and output writers.
# Copyright (c) 2026 The convex-ou-lab authors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

import os
import json
import zlib
import hashlib
import logging

import numpy as np
import pandas as pd
from scipy import stats


logger = logging.getLogger(__name__)

SEEDS = [20230701, 1234, 5678, 42, 777]
N_BATCHES = 30
Z_95 = float(stats.norm.ppf(0.975))
Z_95_ONE_SIDED = float(stats.norm.ppf(0.95))
SCHEMA_VERSION = 1
_MASK64 = (1 << 64) - 1


## Random streams
def derive_seed(base_seed, index):
    """Sub-seed for block/worker/job `index`: base XOR a 64 bit blake2b digest of the index."""
    digest = hashlib.blake2b(str(index).encode("utf-8"), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, "little")) & _MASK64


def job_seed(base_seed, job_key):
    return derive_seed(base_seed, zlib.crc32(job_key.encode("utf-8")))


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed) & _MASK64))


def block_sizes(count, block_size):
    """Sizes of the fixed blocks a draw of `count` items is split into."""
    full, rest = divmod(int(count), int(block_size))
    sizes = [int(block_size)] * full
    if rest:
        sizes.append(rest)
    return sizes


## Confidence intervals
def batch_means_ci(values, n_batches=N_BATCHES):
    """Mean and 95% half-width from batch means (fixed contiguous batches)."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("no samples")
    mean = float(np.mean(values))
    n_batches = min(n_batches, values.size)
    if n_batches < 2:
        return mean, 0.0 if np.all(values == values[0]) else float("inf")
    means = np.array([np.mean(b) for b in np.array_split(values, n_batches)])
    halfwidth = Z_95 * float(np.std(means, ddof=1)) / np.sqrt(n_batches)
    return mean, halfwidth


def ratio_ci(values, weights, n_batches=N_BATCHES):
    """Self-normalized weighted mean sum(w g)/sum(w) with a linearized batch-means CI."""
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    total = float(np.sum(weights))
    if total <= 0.0:
        raise ValueError("weights sum to zero")
    ratio = float(np.sum(weights * values)) / total
    residuals = weights * (values - ratio) / np.mean(weights)
    _, halfwidth = batch_means_ci(residuals, n_batches)
    return ratio, halfwidth


def delta_method_ci(columns, gradient, n_batches=N_BATCHES):
    """CI half-width of F(mean of columns) given dF at the means; columns has shape (m, k)."""
    columns = np.asarray(columns, dtype=float)
    linear = columns @ np.asarray(gradient, dtype=float)
    return batch_means_ci(linear, n_batches)[1]


def effective_sample_size(weights):
    weights = np.asarray(weights, dtype=float)
    denominator = float(np.sum(weights ** 2))
    if denominator == 0.0:
        return 0.0
    return float(np.sum(weights)) ** 2 / denominator


## Logging
def setup_logging(output_dir, filename="lab.log", level=logging.DEBUG):
    os.makedirs(output_dir, exist_ok=True)
    root = logging.getLogger('')
    for handler in list(root.handlers):
        root.removeHandler(handler)
    logging.basicConfig(level=level,
                        format='%(asctime)s %(name)-12s %(levelname)-8s %(message)s',
                        datefmt='%m-%d %H:%M',
                        filename=os.path.join(output_dir, filename),
                        filemode='w')
    console = logging.StreamHandler()
    console.setLevel(logging.INFO)
    formatter = logging.Formatter('%(name)-12s: %(levelname)-8s %(message)s')
    console.setFormatter(formatter)
    root.addHandler(console)


def progress_disabled():
    return not logging.getLogger('').isEnabledFor(logging.INFO)


## Output files
def config_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def write_csv(rows, path, hash_value, columns=None):
    """One row per dict; the config hash is always the first column."""
    frame = pd.DataFrame(rows, columns=columns)
    frame.insert(0, "config_hash", hash_value)
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n", encoding="utf-8")
    logger.info("Wrote {} rows to {}".format(len(frame), path))
    return frame


def _to_builtin(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError("Object of type {} is not JSON serializable".format(type(obj).__name__))


def write_json(payload, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True, default=_to_builtin)
        fp.write("\n")
    logger.info("Wrote {}".format(path))


def read_json(path):
    with open(path, encoding="utf-8") as fp:
        return json.load(fp)

"""Bundled example datasets."""

from __future__ import annotations

import csv
from importlib import resources

import numpy as np

from ..design import GlmmData

__all__ = ["load_lsat7"]


def load_lsat7() -> GlmmData:
    """Law School Admission Test section 7 item responses.

    1,000 test takers by 5 binary items, stored as the classical
    32-pattern frequency table and expanded to long format: one row per
    subject-item pair, item dummy columns as fixed effects (no
    intercept), and a subject random intercept.
    """
    path = resources.files(__package__).joinpath("lsat7.csv")
    with path.open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    patterns = np.array(
        [[int(row[f"item{j + 1}"]) for j in range(5)] for row in rows],
        dtype=float,
    )
    freq = np.array([int(row["freq"]) for row in rows])
    responses = np.repeat(patterns, freq, axis=0)      # subjects x items
    n_subjects = responses.shape[0]
    y = responses.reshape(-1)
    x = np.tile(np.eye(5), (n_subjects, 1))
    z = np.ones((y.shape[0], 1))
    cluster = np.repeat(np.arange(n_subjects), 5)
    return GlmmData.from_arrays(
        y, x, z, cluster,
        x_names=[f"item{j + 1}" for j in range(5)],
        z_names=["(Intercept)"],
    )

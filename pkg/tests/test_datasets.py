"""Bundled dataset loader."""

import numpy as np

from glmmkit import load_lsat7


def test_lsat7_shape_and_structure():
    data = load_lsat7()
    assert data.n_obs == 5000
    assert data.n_clusters == 1000
    assert data.n_fixed == 5
    assert data.n_random == 1
    assert data.x_names == ("item1", "item2", "item3", "item4", "item5")
    # one dummy per row, cycling through the five items per subject
    np.testing.assert_allclose(data.X.sum(axis=1), 1.0)
    np.testing.assert_allclose(data.X.sum(axis=0), 1000.0)
    np.testing.assert_allclose(data.Z, 1.0)
    assert set(np.unique(data.y)) == {0.0, 1.0}


def test_lsat7_item_difficulty_ordering():
    data = load_lsat7()
    correct = data.X.T @ data.y
    # classical marginals for this table: item 1 easiest, item 3 hardest
    np.testing.assert_allclose(correct, [828.0, 658.0, 772.0, 606.0, 843.0])
    sizes = np.bincount(data.cluster_index)
    assert sizes.shape[0] == 1000
    np.testing.assert_array_equal(sizes, 5)

import numpy as np
import pytest

from textgcn.corpus import DatasetSplit, IdMaps, InteractionMatrix, ItemCatalog


def write_dataset(directory, train, val, test, titles):
    """Write the four dataset files; interaction args are lists of lines."""
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "train.txt").write_text("".join(l + "\n" for l in train), encoding="utf-8")
    (directory / "val.txt").write_text("".join(l + "\n" for l in val), encoding="utf-8")
    (directory / "test.txt").write_text("".join(l + "\n" for l in test), encoding="utf-8")
    (directory / "titles.tsv").write_text(
        "".join(f"{k}\t{v}\n" for k, v in titles.items()), encoding="utf-8")
    return directory


def make_split(train_rows, val_rows, test_rows, n_items, name="toy"):
    """Build a DatasetSplit directly from per-user item-index lists."""
    n_users = len(train_rows)
    maps = IdMaps()
    for u in range(n_users):
        maps.user_index(f"u{u}")
    for i in range(n_items):
        maps.item_index(f"i{i}")
    catalog = ItemCatalog([f"title {i}" for i in range(n_items)])
    make = lambda rows: InteractionMatrix.from_rows(n_users, n_items, rows)
    return DatasetSplit(name=name, maps=maps, train=make(train_rows),
                        val=make(val_rows), test=make(test_rows), catalog=catalog)


def random_interactions(rng, n_users, n_items, max_degree):
    rows = []
    for _ in range(n_users):
        deg = int(rng.integers(1, max_degree + 1))
        rows.append(sorted(rng.choice(n_items, size=min(deg, n_items),
                                      replace=False).tolist()))
    return InteractionMatrix.from_rows(n_users, n_items, rows)


@pytest.fixture
def rng():
    return np.random.default_rng(42)

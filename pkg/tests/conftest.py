from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_dataset, write_cub_root  # noqa: E402


@pytest.fixture
def mini_cub_root(tmp_path):
    """Two classes, four attributes (two descriptions), three images.

    Hand-written expectation (checked in tests):
      image 1 (class 1): keeps attrs 1, 3 (certainty 3/4); drops attr 2
        (certainty 2 = guessing) and attr 4 (present flag 0)
      image 2 (class 2): keeps attr 2
      image 3 (class 2): keeps nothing (all below certainty)
    Class profiles (per-description argmax, score > 0):
      class 1: attr 1 (50 beats 10), attr 3 (70)
      class 2: attr 2 (60), attr 4 (40); class 2 keeps attr 2 over attr 1
    """
    return write_cub_root(
        tmp_path / "cub",
        classes=["001.Rock_Wren", "002.Sage_Thrasher"],
        attributes=[
            "has_bill_shape::curved_(up_or_down)",
            "has_bill_shape::hooked",
            "has_wing_color::blue",
            "has_wing_color::grey",
        ],
        image_classes=[1, 2, 2],
        image_attr_rows=[
            (1, 1, 1, 4),
            (1, 2, 1, 2),
            (1, 3, 1, 3),
            (1, 4, 0, 4),
            (2, 2, 1, 3),
            (2, 1, 0, 3),
            (3, 1, 1, 2),
            (3, 3, 1, 1),
        ],
        class_matrix=[
            [50.0, 10.0, 70.0, 0.0],
            [5.0, 60.0, 0.0, 40.0],
        ],
    )


@pytest.fixture
def tiny_dataset():
    """Three classes, five flat attributes, per-image annotations."""
    return make_dataset(
        labels=["antelope", "collie", "zebra"],
        attributes=[(n, "") for n in ["group", "active", "walks", "stripes", "fast"]],
        images=[
            (0, (0, 1, 2)),
            (0, (0, 2)),
            (1, (1, 3)),
            (2, (3, 4, 0)),
        ],
        profiles=[(0, 1, 2), (1, 3), (3, 4)],
        name="tiny",
    )

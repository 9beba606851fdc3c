import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def toy_tree(tmp_path_factory):
    """Five-image MVTec-style class directory with two masked defect images."""
    rng = np.random.default_rng(0)
    root = tmp_path_factory.mktemp("mvtec")
    base = root / "widget"

    def save_rgb(path, size=(64, 48)):
        path.parent.mkdir(parents=True, exist_ok=True)
        arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(arr, mode="RGB").save(path)

    for i in range(4):
        save_rgb(base / "train" / "good" / f"{i:03d}.png")
    # one grayscale training image (replicated to three channels on load)
    gray = rng.integers(0, 256, size=(48, 64), dtype=np.uint8)
    (base / "train" / "good").mkdir(parents=True, exist_ok=True)
    Image.fromarray(gray, mode="L").save(base / "train" / "good" / "004.png")

    save_rgb(base / "test" / "good" / "000.png")
    for i in range(2):
        save_rgb(base / "test" / "scratch" / f"{i:03d}.png")
        mask = np.zeros((48, 64), dtype=np.uint8)
        mask[10 + i : 20 + i, 15:30] = 255
        path = base / "ground_truth" / "scratch" / f"{i:03d}_mask.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(mask, mode="L").save(path)
    return root

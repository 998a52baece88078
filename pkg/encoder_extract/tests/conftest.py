from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from ecvlroute.rsd import save_rsd
from ecvlroute.synthgen import SynthSpec, generate

from encoder_extract.tinymodels import (
    make_tiny_image_encoder,
    make_tiny_text_encoder,
)


@pytest.fixture(scope="session")
def text_encoder_dir(tmp_path_factory):
    return make_tiny_text_encoder(
        str(tmp_path_factory.mktemp("enc") / "text"), seed=0)


@pytest.fixture(scope="session")
def image_encoder_dir(tmp_path_factory):
    return make_tiny_image_encoder(
        str(tmp_path_factory.mktemp("enc") / "image"), seed=0)


@pytest.fixture(scope="session")
def rsd_with_images(tmp_path_factory):
    """20 records; one missing image file, one corrupt, one metadata-only."""
    root = tmp_path_factory.mktemp("rsd")
    records, _, _ = generate(SynthSpec(n_records=20, seed=2))
    rng = np.random.default_rng(0)
    out = []
    for i, r in enumerate(records):
        path = str(root / f"{r.query_id}.png")
        if i == 0:
            out.append(r)                          # image metadata, no path
        elif i == 1:
            with open(path, "wb") as f:
                f.write(b"not a png")              # unreadable file
            out.append(replace(r, image=replace(r.image, path=path)))
        else:
            Image.fromarray(rng.integers(0, 256, (24, 32, 3),
                                         dtype=np.uint8)).save(path)
            out.append(replace(r, image=replace(r.image, path=path)))
    rsd_path = str(root / "rsd.jsonl")
    save_rsd(out, rsd_path)
    return rsd_path

"""Rewrite the frozen preprocessing goldens.

Run only after an intentional change to a preprocessing method, then review
the image diffs before committing:  python tests/golden/regenerate.py
"""
from pathlib import Path

import numpy as np

from exprbench import preprocess
from exprbench.data import read_image, write_pgm
from exprbench.synthetic import face

HERE = Path(__file__).parent

if __name__ == "__main__":
    src = HERE / "face.pgm"
    if not src.exists():
        write_pgm(src, face(3, np.random.default_rng(2024)))
    img = read_image(src)
    for method in preprocess.METHODS:
        write_pgm(HERE / f"{method}.pgm", preprocess.apply(method, img))
        print("wrote", method)

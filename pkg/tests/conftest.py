import numpy as np
import pytest

from warpdiff import compile_warp, corpus_dir

CORPUS = sorted(corpus_dir().glob("*.warp"))


def load_warp(name):
    return compile_warp((corpus_dir() / f"{name}.warp").read_text())


@pytest.fixture(params=[p.stem for p in CORPUS])
def corpus_warp(request):
    return request.param, load_warp(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

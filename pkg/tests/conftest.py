import re

import numpy as np
import pytest

from mlrq import _fallback
from mlrq.codec import train_image_model
from mlrq.corpus import face_corpus
from mlrq.trainer import TrainConfig, parse_layer_sizes

try:
    from mlrq import _kernels
except ImportError:  # extension not built
    _kernels = None

IMPLS = [_fallback] + ([_kernels] if _kernels is not None else [])


@pytest.fixture(params=IMPLS, ids=lambda m: m.name)
def impl(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


FACE_SIZES = parse_layer_sizes("256x5,128x5,32x5,16x5")


@pytest.fixture(scope="session")
def face_split():
    """240 face-like images, 80/20 train/test."""
    imgs = face_corpus(240, seed=7)
    order = np.random.default_rng(0).permutation(len(imgs))
    train = [imgs[i] for i in order[:192]]
    test = [imgs[i] for i in order[192:]]
    return train, test


@pytest.fixture(scope="session")
def face_model(face_split):
    """20-layer stack with the 256/128/32/16 x5 sizes, trained on the face corpus."""
    train, test = face_split
    cfg = TrainConfig(layer_sizes=FACE_SIZES, seed=3)
    return train_image_model(train, test, cfg, block=8)


@pytest.fixture(scope="session")
def small_model(face_split):
    train, test = face_split
    cfg = TrainConfig(layer_sizes=(16, 8, 8, 4), seed=1, restarts=1)
    model, _ = train_image_model(train[:40], test[:10], cfg, block=4)
    return model


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_RESULTS: dict = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    """Remember one acceptance outcome for the end-of-run summary."""
    ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: (int(re.match(r"\d+", s).group()), s)):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

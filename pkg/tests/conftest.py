import json
import math
from pathlib import Path

import numpy as np
import pytest

from acmix import ModelParams, NoiseSpec, SpectralConfig

ORACLES = Path(__file__).parent / "oracles" / "frozen.json"


@pytest.fixture(scope="session")
def frozen():
    return json.loads(ORACLES.read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def cfg16():
    return SpectralConfig(M=16, N_noise=8)


@pytest.fixture(scope="session")
def cfg32():
    return SpectralConfig(M=32, N_noise=16)


@pytest.fixture(scope="session")
def noise16():
    return NoiseSpec.power_law(16)


@pytest.fixture(scope="session")
def p_std():
    return ModelParams(nu=1.0, lam=2.5)


def unit(M, k=0):
    e = np.zeros(M)
    e[k] = 1.0
    return e


def window_length(cfg):
    return cfg.b - cfg.a


PI = math.pi


# acceptance criteria outcomes, printed once at the end of the session
ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}")

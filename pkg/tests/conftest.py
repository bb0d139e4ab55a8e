"""Shared gait fixtures, built once per session (the coefficient search is slow)."""

import pathlib

import numpy as np
import pytest

from gaitroa.dynamics import RobotParams
from gaitroa.gaits import (
    GaitLibrary,
    find_limit_cycle,
    generate_gait,
    tube_distance,
)

LIB_PATH = pathlib.Path(__file__).resolve().parents[1] / "configs" / "gait_library.json"


@pytest.fixture(scope="session")
def robot():
    return RobotParams()


def _make(beta, p):
    vc = generate_gait(beta, p)
    return vc, find_limit_cycle(vc, p)


@pytest.fixture(scope="session")
def gait_shallow(robot):
    # library lower edge
    return _make(0.072, robot)


@pytest.fixture(scope="session")
def gait_mid(robot):
    return _make(0.13, robot)


@pytest.fixture(scope="session")
def gait_steep(robot):
    # library upper edge
    return _make(0.145, robot)


@pytest.fixture(scope="session")
def library():
    return GaitLibrary.load(LIB_PATH)


def draw_tube_state(rng, lc, scales=(0.05, 0.05, 0.16, 0.16), radius=0.05):
    """One random physically reachable state inside the weighted cycle tube.

    Rejects draws that put the swing foot below the nominal mid-swing scuff
    depth, and draws past the touchdown guard (foot below ground after
    mid-stance): from either the reset would already have fired, and flowing
    them vaults the leg through the floor.
    """
    sig_nom = 2.0 * lc.samples[:, 0] + lc.samples[:, 1]
    sig_floor = min(0.0, float(sig_nom.min()))
    scales = np.asarray(scales)
    while True:
        i = rng.integers(0, len(lc.samples))
        x = lc.samples[i] + rng.normal(size=4) * scales
        if tube_distance(x, lc.samples) > radius:
            continue
        sig = 2.0 * x[0] + x[1]
        if sig < sig_floor or (sig < 0.0 and x[0] < 0.0):
            continue
        return x

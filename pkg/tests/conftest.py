import numpy as np
import pytest

from momentgrid.netio import find_fixture, load_case, set_parameter
from momentgrid.opf import build_opf_qcqp
from momentgrid.pop import read_pop


def have_fixture(name, suffix=".m"):
    try:
        find_fixture(name, suffix)
        return True
    except FileNotFoundError:
        return False


def needs(name):
    return pytest.mark.skipif(not have_fixture(name), reason=f"fixture {name} not available")


def opf(name, target=None, value=None, **kw):
    case = load_case(name)
    if target is not None:
        case = set_parameter(case, target, value)
    return build_opf_qcqp(case, **kw)


def pop(name):
    return read_pop(find_fixture(name, ".pop"))


def same_up_to_phase(a, b):
    """max |a - e^{it} b| over the best global phase t."""
    a, b = np.asarray(a, complex), np.asarray(b, complex)
    s = np.vdot(b, a)
    rot = s / abs(s) if abs(s) > 0 else 1.0
    return float(np.max(np.abs(a - rot * b)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

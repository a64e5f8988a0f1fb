import numpy as np
import pytest

from momentgrid.cpoly import EQ, GE, CPolynomial
from momentgrid.errors import PopSyntaxError
from momentgrid.pop import parse_pop

from conftest import pop


def test_example_71_lifted():
    pr = pop("ex71")
    assert pr.n_vars == 2 and len(pr.constraints) == 1
    z1 = CPolynomial.modulus_sq(0, 2)
    want = 1 - 4 / 3 * z1 + 7 / 18 * z1 * z1
    assert pr.objective == want
    assert pr.constraints[0].sense == EQ
    assert pr.constraints[0].label == "g"


def test_example_72_raw_constraint():
    pr = pop("ex72_raw")
    g = pr.constraints[0].poly
    z = np.sqrt(2) + 0j
    assert abs(g.evaluate(np.array([z]))) < 1e-12
    assert pr.objective.evaluate(np.array([z])).real == pytest.approx(1.0)


def test_inequalities_are_normalized():
    pr = parse_pop("vars z\nminimize |z|^2\nlo: |z|^2 >= 1\nhi: |z|^2 <= 4\n")
    assert [c.sense for c in pr.constraints] == [GE, GE]
    zz = CPolynomial.modulus_sq(0, 1)
    assert pr.constraints[0].poly == zz - 1
    assert pr.constraints[1].poly == 4 - zz


def test_complex_coefficients_and_comments():
    text = """
    # comment line
    vars z1 z2   # trailing comment
    minimize (1+j)*conj(z1)*z2 + (1-j)*conj(z2)*z1
    |z1|^2 <= 1
    |z2|^2 <= 1
    """
    pr = parse_pop(text)
    assert pr.objective.is_hermitian()
    assert len(pr.constraints) == 2


@pytest.mark.parametrize("text", [
    "",
    "minimize 1\n",
    "vars z\n",
    "vars z\nvars w\nminimize 1\n",
    "vars z z\nminimize 1\n",
    "vars z\nminimize |z|\n",
    "vars z\nminimize |z|^3\n",
    "vars z\nminimize z\n",
    "vars z\nminimize |z|^2\nc: z >= 0\n",
    "vars z\nminimize |z|^2\n|z|^2 > 1\n",
    "vars z\nminimize |z|^2 / z\n",
    "vars z\nminimize |z|^2\nminimize 1\n",
    "vars z\nminimize w\n",
    "vars z\nminimize z**0.5\n",
    "vars z\nminimize __import__('os')\n",
    "vars z\nparam a = z\nminimize |z|^2\n",
])
def test_syntax_errors(text):
    with pytest.raises(PopSyntaxError):
        parse_pop(text)


def test_error_reports_line_number():
    with pytest.raises(PopSyntaxError, match="line 3"):
        parse_pop("vars z\nminimize |z|^2\n|z|^2 >= (\n")

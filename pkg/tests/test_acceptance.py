"""End-to-end acceptance criteria. The full suite runs once per session (about
two and a half minutes, including the determinism rerun); each test prints its
criterion line and asserts the stated tolerance."""

import pytest

from smlab import acceptance

NUMBERS = [n for n, _, _ in acceptance.CRITERIA] + [13]


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    return {r.number: r for r in acceptance.run_check(out, echo=print, repeat=True)}


@pytest.mark.parametrize("number", NUMBERS)
def test_criterion(results, number, capsys):
    r = results[number]
    with capsys.disabled():
        print("\n" + r.line())
    if not r.passed:
        pytest.fail(r.line(), pytrace=False)

import pytest

from ryushi.config import dumps, encode_value, loads, parse_override
from ryushi.config.env import DEBUG
from ryushi.experiment import Algorithm

SOURCE = """\
# comment lines and blank lines are skipped

model = nonlinear   # trailing comment
T = 511
tau = 5.0
N = 1e4
alpha_f = .95
algorithm = tps-es
oracle_range = (-30, 30.5)
label = "two words # not a comment"
ess_threshold = none
verbose = true
"""

EXPECTED = {
    "model": "nonlinear",
    "T": 511,
    "tau": 5.0,
    "N": 10000.0,
    "alpha_f": 0.95,
    "algorithm": "tps-es",
    "oracle_range": (-30, 30.5),
    "label": "two words # not a comment",
    "ess_threshold": None,
    "verbose": True,
}


def test_loads():
    data = loads(SOURCE)
    assert data == EXPECTED
    assert isinstance(data["T"], int)
    assert isinstance(data["N"], float)


def test_debug_parser():
    token = DEBUG.set(True)
    try:
        assert loads(SOURCE) == EXPECTED
    finally:
        DEBUG.reset(token)


def test_empty():
    assert loads("") == {}
    assert loads("# nothing\n\n") == {}
    assert loads("N = 3") == {"N": 3}


def test_duplicate_key():
    with pytest.raises(Exception, match="more than once"):
        loads("N = 1\nN = 2\n")


@pytest.mark.parametrize("src", ["N 10", "N = ", "= 3", "N = (1, 2, 3)", "N = 1 2"])
def test_malformed(src: str):
    with pytest.raises(Exception):  # noqa: B017
        loads(src)


def test_parse_override():
    assert parse_override("N=500") == ("N", 500)
    assert parse_override("algorithm = tps-l") == ("algorithm", "tps-l")
    assert parse_override("oracle_range=(-40,40)") == ("oracle_range", (-40, 40))
    with pytest.raises(ValueError):
        parse_override("")


def test_encode_value():
    assert encode_value(Algorithm.TPSEF) == "tps-ef"
    assert encode_value(None) == "none"
    assert encode_value(False) == "false"
    assert encode_value(0.1) == "0.1"
    assert encode_value((-15.0, 15.0)) == "(-15.0, 15.0)"
    assert encode_value("none") == '"none"'
    assert encode_value('say "hi"') == '"say \\"hi\\""'
    with pytest.raises(ValueError):
        encode_value((1, 2, 3))
    with pytest.raises(TypeError):
        encode_value({"a": 1})


def test_dumps():
    data = {"model": "linear", "seed": 7, "bandwidth": None, "label": "a b", "range": (-1.5, 2)}
    text = dumps(data)
    assert text.splitlines()[0] == "model = linear"
    assert loads(text) == data

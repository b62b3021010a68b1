import pytest

from instance_tools import CHAIN2_A_NESTED, CHAIN2_A_NONCLASSICAL, make_chain2


@pytest.fixture(scope="session")
def chain2_nonclassical():
    return make_chain2(CHAIN2_A_NONCLASSICAL)


@pytest.fixture(scope="session")
def chain2_nested():
    return make_chain2(CHAIN2_A_NESTED)


@pytest.fixture(scope="session")
def chain2_synthesis(chain2_nonclassical):
    from agsynth.contract_sdp import synthesize

    result = synthesize(chain2_nonclassical)
    assert result.status == "optimal"
    return result

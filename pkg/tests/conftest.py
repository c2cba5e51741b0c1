import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import make_sentence  # noqa: E402

from jointdep.corpus import Corpus  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "RESULT_LINES", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_vocab():
    return ("DET", "NOUN", "VERB")


@pytest.fixture
def toy_corpus(toy_vocab):
    sents = [
        make_sentence(["DET", "NOUN", "VERB"]),
        make_sentence(["NOUN", "VERB"]),
        make_sentence(["NOUN", "VERB", "DET", "NOUN"]),
        make_sentence(["VERB"]),
        make_sentence(["DET", "NOUN", "VERB", "NOUN"]),
    ]
    return Corpus(tuple(sents), toy_vocab)


CONLLU_SAMPLE = """\
# sent_id = 1
1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_
2\tdog\tdog\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\tbarks\tbark\tVERB\t_\t_\t0\troot\t_\t_
4\t.\t.\tPUNCT\t_\t_\t3\tpunct\t_\t_

1-2\tcannot\t_\t_\t_\t_\t_\t_\t_\t_
1\tcan\tcan\tAUX\t_\t_\t2\taux\t_\t_
2\tnot\tnot\tPART\t_\t_\t0\troot\t_\t_
2.1\tghost\t_\t_\t_\t_\t_\t_\t_\t_
"""


@pytest.fixture
def conllu_sample():
    return CONLLU_SAMPLE

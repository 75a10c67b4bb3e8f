import csv
import json
from importlib import resources

import pytest

from ragtopics.embedding import EmbedderConfig

EXAMPLE_LABELS = [
    "Risk-Benefit Analysis",
    "Vaccine Safety",
    "Long-Term Effects",
    "Natural Immunity",
    "Political Motivation",
    "Vaccine Efficacy",
    "Vaccine Side Effects",
    "Vaccine Misinformation",
    "Vaccine Trust",
    "Vaccine Mandates",
]

SYNTHETIC_TWEETS = [
    "Worried about vaccine safety after reading about blood clots.",
    "The side effects knocked me out for two days, sore arm and fever.",
    "I do not trust the government to tell the truth about the vaccine.",
    "Politicians pushing the jab for votes, pure political motivation.",
    "Nobody knows the long-term effects of an mRNA vaccine yet.",
    "Does the vaccine even work against the new variant? Efficacy doubts.",
    "Risk of covid for me is tiny, risk of the shot is unknown.",
    "Mandatory vaccination for workers is an attack on freedom.",
    "Big pharma made billions, follow the money.",
    "Natural immunity after infection should count as protection.",
    "My employer mandate says get vaccinated or get fired.",
    "Vaccine misinformation spreads faster than facts online.",
    "Heard the shot changes your DNA, is that true?",
    "Side effects were mild, just tired for a day.",
    "Trials were rushed, the development speed worries me.",
    "Trust in health agencies is at an all time low.",
    "Clinical data on vaccine efficacy looks solid to me.",
    "Long term safety data simply does not exist yet.",
    "Government control and vaccine passports are the real concern.",
    "Already had covid, my natural immunity is enough.",
]


@pytest.fixture
def det_embedder():
    return EmbedderConfig(backend="deterministic_test", model_name="hash-trigram-v1", dim=256, seed=0)


@pytest.fixture
def example_script():
    raw = resources.files("ragtopics.data").joinpath("react_example_script.json").read_text(encoding="utf-8")
    return json.loads(raw)["responses"]


def write_csv(path, rows, header=("id", "text")):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def tweets_csv(tmp_path):
    return write_csv(tmp_path / "tweets.csv", [(i, t) for i, t in enumerate(SYNTHETIC_TWEETS)])


FRUIT = ["apple", "banana", "cherry", "grape", "lemon", "mango"]
METAL = ["cobalt", "copper", "iron", "nickel", "silver", "zinc"]


def disjoint_corpus(n_docs=40, doc_len=20, seed=2024):
    """Half the docs draw only from FRUIT, the other half only from METAL.

    The default seed sits outside the Gibbs seeds the tests use: with equal
    seeds the sampler's initial assignments replay the word draws.
    """
    import numpy as np

    rng = np.random.default_rng(seed)
    half = n_docs // 2
    return [" ".join(rng.choice(FRUIT if d < half else METAL, doc_len)) for d in range(n_docs)]


# --- acceptance reporting -----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (report.when == "call" or report.skipped or report.failed):
        return
    number, title = marker.args
    if report.skipped:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        status = f"SKIP ({reason.removeprefix('Skipped: ')})"
    elif report.failed:
        status = "FAIL"
    else:
        status = "PASS"
    details = "; ".join(v for k, v in item.user_properties if k == "detail")
    item.config.stash[_ACCEPTANCE][number] = f"criterion {number} [{title}]: {status}" + (
        f" - {details}" if details and not report.skipped else "")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])

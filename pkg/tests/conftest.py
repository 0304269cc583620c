import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def toy_kg():
    from tkgqa.toy import generate_toy_kg
    return generate_toy_kg(7)


@pytest.fixture(scope="session")
def small_kg():
    from tkgqa.toy import generate_toy_kg
    return generate_toy_kg(3, n_entities=100, n_relations=5, year_range=(1990, 2010), n_facts=600)


@pytest.fixture(scope="session")
def toy_dataset(toy_kg):
    from tkgqa.qgen import SplitSpec, builtin_templates, generate_dataset
    return generate_dataset(toy_kg, builtin_templates(), SplitSpec(seed=1), 20000)


@pytest.fixture(scope="session")
def small_dataset(small_kg):
    from tkgqa.qgen import SplitSpec, builtin_templates, generate_dataset
    return generate_dataset(small_kg, builtin_templates(), SplitSpec(seed=0), 2000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rand_c(rng, *shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# -- acceptance criteria reporting --------------------------------------------

_CRITERIA = pytest.StashKey[dict]()
_NOTES = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion exercised by the test")
    config.stash[_CRITERIA] = {}


@pytest.fixture
def note(request):
    """Append a short measurement to the test's acceptance summary line."""
    notes = request.node.stash.setdefault(_NOTES, [])
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    entry = item.config.stash[_CRITERIA].setdefault(marker.args[0], {"ok": True, "notes": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["notes"] += item.stash.get(_NOTES, [])
    if rep.failed:
        entry["notes"].append(f"{item.name} failed in {rep.when}")


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results):
        r = results[name]
        terminalreporter.write_line(f"{name} {'PASS' if r['ok'] else 'FAIL'}: {'; '.join(r['notes'])}")

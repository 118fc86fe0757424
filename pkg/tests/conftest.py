"""Shared fixtures: desk-scale scenario runs and the acceptance report.

Desk runs are slow (minutes to most of an hour), so each profile runs at
most once per session and only when a test asks for it.
"""

import pytest

from spinfilter.experiment_runner import build_config, load_profile, run

_REPORT = {}


def record_criterion(number, title, ok, detail):
    """Remember one acceptance outcome for the end-of-session report."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    _REPORT[number] = line
    print(line)
    return ok


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    cache = {}

    def get(profile, **overrides):
        key = (profile, tuple(sorted(overrides.items())))
        if key not in cache:
            out = tmp_path_factory.mktemp(profile) / f"{profile}.csv"
            config = build_config(load_profile(profile), {"output_path": str(out), "workers": 1, **overrides},
                                  env={})
            cache[key] = run(config)
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_REPORT):
        terminalreporter.write_line(_REPORT[n])

import numpy as np
import pytest
from hypothesis import settings

from krompc.dictionary import build_dictionary
from krompc.edmd import SnapshotSet, edmd_fit
from krompc.krom import SwitchedBank
from krompc.plant import LinearTestPlant

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")


def exact_linear_bank(plant, controls, degree=1, n_pairs=40, seed=0):
    """Switched bank fitted on random one-step pairs of a linear test plant."""
    rng = np.random.default_rng(seed)
    d = build_dictionary(plant.obs_dim, degree)
    models = []
    for u in controls:
        Z = rng.uniform(-1.0, 1.0, (plant.obs_dim, n_pairs))
        Zt = plant.step(Z.T, u, plant.sample_time).T
        models.append(edmd_fit(SnapshotSet(Z, Zt, plant.sample_time, u), d))
    return SwitchedBank(tuple(models))


@pytest.fixture
def linear_plant():
    return LinearTestPlant.random(2, np.random.default_rng(11), 0.9, 0.1)


@pytest.fixture
def linear_bank(linear_plant):
    return exact_linear_bank(linear_plant, [-1.0, 0.0, 1.0])


@pytest.fixture(scope="session")
def acceptance(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    lines = []
    request.config._acceptance_lines = lines

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

import sys

import numpy as np
import pytest

from subrecomb.cohort import CohortManifest, CohortVolumes, PatientRecord
from subrecomb.phantom import PhantomSpec, generate_cohort
from subrecomb.runtime import retain_freed_memory

retain_freed_memory()


def make_manifest(labels):
    """Manifest from a list of (ica_left, ica_right, mca_left, mca_right) tuples; no volumes."""
    recs = [
        PatientRecord(f"P{i:04d}", dict(zip(("ica_left", "ica_right", "mca_left", "mca_right"), map(int, lab))), "")
        for i, lab in enumerate(labels)
    ]
    return CohortManifest(recs, seed=0)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    """Eight phantom patients written to disk: (manifest, volumes, directory)."""
    out = tmp_path_factory.mktemp("cohort8")
    manifest, volumes = generate_cohort(PhantomSpec(patients=8, seed=3), out)
    return manifest, volumes, out


@pytest.fixture(scope="session")
def small_source(small_cohort):
    manifest, volumes, _ = small_cohort
    return CohortVolumes(manifest, volumes=volumes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from roofgen.geometry import Mesh, QuantizedMesh, quantize

_CRITERION_RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Stores an acceptance-criterion outcome for the terminal summary."""
    _CRITERION_RESULTS[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_CRITERION_RESULTS):
        passed, detail = _CRITERION_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status} | {detail}")


def random_lattice_mesh(rng, max_vertices=12, max_faces=20) -> QuantizedMesh:
    """Random canonical lattice mesh for round-trip style tests."""
    n = rng.integers(3, max_vertices + 1)
    while True:
        verts = rng.integers(0, 256, size=(n, 3))
        if len({tuple(v) for v in verts}) == n:
            break
    order = np.lexsort((verts[:, 0], verts[:, 1], verts[:, 2]))
    verts = verts[order]
    n_faces = int(rng.integers(1, max_faces + 1))
    faces = []
    for _ in range(n_faces):
        tri = rng.choice(n, size=3, replace=False)
        faces.append(tri)
    return QuantizedMesh(verts, np.array(faces))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_cube_mesh() -> Mesh:
    verts = np.array(
        [[x, y, z] for z in (0.0, 1.0) for y in (0.0, 1.0) for x in (0.0, 1.0)]
    )
    faces = np.array([
        [0, 1, 2], [1, 3, 2],  # bottom
        [4, 6, 5], [5, 6, 7],  # top
        [0, 4, 1], [1, 4, 5],
        [2, 3, 6], [3, 7, 6],
        [0, 2, 4], [2, 6, 4],
        [1, 5, 3], [3, 5, 7],
    ])
    return Mesh(verts, faces)

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fsirom.config import config_from_mapping, parse_config_text  # noqa: E402
from fsirom.mesh import Mesh, Region, Tag, generate_benchmark_mesh  # noqa: E402

# Coarse benchmark used by the acceptance gate and the slower invariant tests.
BENCHMARK_CONFIG = """\
mesh.resolution = 0.03
fom.dt = 0.01
fom.t_end = 15
schedule.t_start = 2
schedule.segment_width = 0.1
basis.rule = paper
basis.scale = 0.1
perturb.u_hat_max = 1.48, 1.52
perturb.mu_s = 480000, 520000
threads = 1
"""

ACCEPTANCE = []


def record(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)


def square_mesh(region=Region.FLUID):
    """Unit square cut into four triangles around its centre.

    Left edge inlet, right edge outlet, top and bottom walls.
    """
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], float)
    c = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    e = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    t = np.array([Tag.WALLS, Tag.OUTLET, Tag.WALLS, Tag.INLET])
    return Mesh(v, c, np.full(4, int(region)), e, t).validate()


def strip_mesh(n=4, region=Region.FLUID):
    """``[0, n] x [0, 1]`` strip of ``2n`` right triangles."""
    xs = np.arange(n + 1, dtype=float)
    v = np.vstack([np.column_stack([xs, np.zeros_like(xs)]), np.column_stack([xs, np.ones_like(xs)])])
    cells = []
    for i in range(n):
        a, b, c, d = i, i + 1, n + 2 + i, n + 1 + i
        cells += [[a, b, c], [a, c, d]]
    edges, tags = [], []
    for i in range(n):
        edges += [[i, i + 1], [n + 1 + i, n + 2 + i]]
        tags += [Tag.WALLS, Tag.WALLS]
    edges += [[0, n + 1], [n, 2 * n + 1]]
    tags += [Tag.INLET, Tag.OUTLET]
    return Mesh(v, np.array(cells), np.full(2 * n, int(region)), np.array(edges), np.array(tags)).validate()


@pytest.fixture(scope="session")
def coarse_mesh():
    return generate_benchmark_mesh(0.05)


@pytest.fixture(scope="session")
def benchmark_config():
    return config_from_mapping(parse_config_text(BENCHMARK_CONFIG))


class BenchmarkRun:
    """Outputs of the file pipeline on the coarse benchmark, produced once."""

    def __init__(self, cfg, out):
        from fsirom import workflow

        self.cfg = cfg
        self.out = Path(out)
        self.wall = {}
        cached = (self.out / workflow.ERRORS).exists()
        stages = [("mesh", workflow.make_mesh), ("fom", workflow.full_order), ("pod", workflow.offline),
                  ("rom", workflow.reduced), ("compare", workflow.compare), ("report", workflow.report)]
        for name, fn in stages:
            if cached:
                break
            t0 = time.perf_counter()
            fn(cfg, self.out)
            self.wall[name] = time.perf_counter() - t0


@pytest.fixture(scope="session")
def benchmark(benchmark_config, tmp_path_factory):
    """Coarse benchmark pipeline. ``FSIROM_BENCHMARK_DIR`` reuses an earlier
    output directory instead of recomputing (development only)."""
    reuse = os.environ.get("FSIROM_BENCHMARK_DIR")
    out = Path(reuse) if reuse else tmp_path_factory.mktemp("benchmark")
    out.mkdir(parents=True, exist_ok=True)
    (out / "benchmark.cfg").write_text(BENCHMARK_CONFIG)
    return BenchmarkRun(benchmark_config, out)

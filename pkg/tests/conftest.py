import json
import sys

import pytest

from rbox.kernels import KernelSpec, launch, shutdown

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}")


def calc_argv():
    return [sys.executable, "-m", "rbox.loopback", "{connection_file}"]


@pytest.fixture
def calc_spec():
    return KernelSpec(name="calc", display_name="Calc (loopback)",
                      language="calc", argv=calc_argv())


@pytest.fixture
def kernel_dir(tmp_path):
    """Kernelspec tree with one 'calc' entry wired to this interpreter."""
    d = tmp_path / "kernels" / "calc"
    d.mkdir(parents=True)
    (d / "kernel.json").write_text(json.dumps({
        "display_name": "Calc (loopback)",
        "language": "calc",
        "argv": calc_argv(),
    }))
    return str(tmp_path / "kernels")


@pytest.fixture
def calc_kernel(calc_spec):
    handle = launch(calc_spec)
    yield handle
    shutdown(handle, restart=False)

import pytest


@pytest.fixture(autouse=True)
def _output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("VOLTERRA_BSVIE_OUTPUT_ROOT", str(tmp_path / "runs"))

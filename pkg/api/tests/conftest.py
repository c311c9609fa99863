import json

import pytest

from api.src.services.coding import make_code
from api.src.structures.schemas import CodeVariant, SystemParams

REFERENCE_SCENARIO = {
    "code": {"variant": "MBR", "n": 50, "k": 10, "d": 20, "B_gigabytes": 10.0},
    "rates": {"mu_per_s": 0.001, "zeta_per_s": 10.0, "throughput_gbit_per_s": 1.0},
    "costs": {"c1_dollars": 10.0, "c2_dollars_per_gigabyte": 0.0},
    "horizon_s": 3.5,
    "failed_servers": 11,
}


@pytest.fixture
def mbr_code():
    """MBR (50, 10, 20) code storing 10 GB"""
    return make_code(CodeVariant.MBR, 50, 10, 20, 10.0)


@pytest.fixture
def reference(mbr_code):
    """Factory for the 11-failure reference instance with overridable fields"""
    lam = 1.0 / (8.0 * mbr_code.beta)  # 1 Gbit/s throughput

    def make(**changes) -> SystemParams:
        fields = dict(mu=0.001, lam=lam, zeta=10.0, c1=10.0, c2=0.0, T=3.5, x_d0=39.0)
        fields.update(changes)
        return SystemParams(**fields)

    return make


@pytest.fixture
def small_code():
    return make_code(CodeVariant.MBR, 10, 2, 4, 1.0)


@pytest.fixture
def late_params():
    """Long horizon and fast transfers: the optimal activation starts after t = 0"""
    return SystemParams(mu=0.05, lam=2.0, zeta=5.0, c1=1.0, c2=0.0, T=10.0, x_d0=8.0)


@pytest.fixture
def scenario_file(tmp_path):
    """Write the reference scenario (optionally modified) and return its path"""

    def write(**sections) -> str:
        data = json.loads(json.dumps(REFERENCE_SCENARIO))
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(data))
        return str(path)

    return write

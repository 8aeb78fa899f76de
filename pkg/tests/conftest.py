import json
import os

import pytest

from rfkac import mean_field as mf

# criterion id -> (passed, detail); filled by the acceptance suite
_CRITERIA: dict = {}


@pytest.fixture(scope="session")
def phys():
    """(m_beta, F*, V) at beta = 2, theta = 0.2."""
    mb = mf.equilibrium_magnetization(2.0, 0.2)
    return mb, mf.surface_tension(2.0, 0.2), mf.field_strength_V(2.0, 0.2, mb)


@pytest.fixture(scope="session")
def record_criterion():
    def record(cid: int, passed: bool, detail: str) -> bool:
        _CRITERIA[cid] = (bool(passed), detail)
        print(f"CRITERION {cid:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        ok, detail = _CRITERIA[cid]
        tr.write_line(f"CRITERION {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    out = os.environ.get("RFKAC_ACCEPTANCE_OUT")
    if out:
        # same layout as an experiment run, so `rfkac report` can merge it
        os.makedirs(out, exist_ok=True)
        checks = [{"name": f"acceptance criterion {cid}", "passed": ok, "criterion": cid,
                   "level": "criterion", "detail": detail} for cid, (ok, detail) in sorted(_CRITERIA.items())]
        with open(os.path.join(out, "checks.json"), "w") as fh:
            json.dump({"kind": "acceptance", "checks": checks}, fh, indent=2, sort_keys=True)

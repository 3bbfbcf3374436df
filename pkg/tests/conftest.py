import numpy as np
import pytest

AORTA_A0 = 5.7e-4
AORTA_E = 0.25e6
AORTA_H = 1.5e-3
RCR = {"Z": 7.7e6, "R": 1.3e8, "C": 1.2e-8, "p_out": 0.0}


def single_vessel_spec(
    length=0.2,
    n_elems=12,
    A0=AORTA_A0,
    E=AORTA_E,
    h=AORTA_H,
    gamma=0.0,
    mode="prescribed_flow",
    rcr=None,
):
    rcr = dict(RCR if rcr is None else rcr)
    rcr["segment"] = "ao"
    return {
        "segments": [
            {
                "id": "ao",
                "length_m": length,
                "n_elems": n_elems,
                "A0_m2": A0,
                "E_Pa": E,
                "h_m": h,
                "gamma_wall": gamma,
                "p_ext_Pa": 0.0,
            }
        ],
        "terminals": [rcr],
        "inlet": {
            "segment": "ao",
            "mode": mode,
            "waveform": [[0.0, 0.0], [1000.0, 0.0]],
        },
    }


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def coarse_lv_mesh():
    from cardiowave.fem import generate_idealized_lv

    return generate_idealized_lv(n_lat=6, n_azi=10, n_trans=1)


@pytest.fixture(scope="session")
def coarse_lv_mesh2():
    from cardiowave.fem import generate_idealized_lv

    return generate_idealized_lv(n_lat=6, n_azi=10, n_trans=2)

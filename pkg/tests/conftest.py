import numpy as np
import pytest

import fastexit as fx

N_MODES = 16


@pytest.fixture(scope="session")
def ref_op():
    return fx.build_neumann_laplacian_1d(N_MODES)


def build_model(
    op,
    f_spec=None,
    g_spec=None,
    sigma_spec=None,
    q_spec=None,
    b_spec=None,
    rho_bar=1.0,
    delta0=1.0,
):
    """Assemble (model, cs, spec_q, spec_b) from catalog specs with defaults."""
    f_spec = f_spec or {"kind": "linear", "slope": -1.0}
    g_spec = g_spec or {"kind": "constant", "value": 1.0}
    sigma_spec = sigma_spec or {"kind": "constant", "value": 1.0}
    q_spec = q_spec or {"kind": "flat", "value": 1.0}
    b_spec = b_spec or {"kind": "list", "values": [1.0, 1.0]}
    cs = fx.make_coefficient_set(f_spec, g_spec, sigma_spec)
    spec_q = fx.make_q_spectrum(q_spec, op.n_modes)
    spec_b = fx.make_b_spectrum(b_spec)
    model = fx.AveragedModel(
        op=op, coeffs=cs, q_lambdas=spec_q.lambdas, b_thetas=spec_b.thetas,
        rho_bar=rho_bar, delta0=delta0,
    )
    return model, cs, spec_q, spec_b


@pytest.fixture(scope="session")
def exit_reference(ref_op):
    """Additive reference system with H = 1: f = -r, g = 1, sigma = 1,
    lambda_k = sqrt(2), theta = (1, 1), rho_bar = 1."""
    return build_model(ref_op, q_spec={"kind": "flat", "value": np.sqrt(2.0)})

"""Smoke test for the pysplitmcmc extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/pysplitmcmc-*.whl
"""

import math

import pysplitmcmc as sm


def main() -> None:
    ok, checks = sm.validate()
    assert ok, [c for c in checks if not c[2]]
    print(f"validate: {len(checks)} checks pass")

    d = 200
    target = sm.GaussianTarget.diagonal([1.0] * d)
    h = 1.6504**2 * d ** (-1 / 3)
    prop = sm.Proposal.mala(target, h)
    mu, sigma2, predicted = sm.predict_acceptance(target, prop)
    chain = sm.run_chain(target, prop, 20000, seed=3, coordinates=[0, d - 1])
    print(f"MALA d={d}: predicted {predicted:.4f}, empirical {chain.acceptance_rate:.4f}")
    assert abs(chain.acceptance_rate - predicted) < 0.02

    esjd, bound = sm.predict_jump(target, prop, 0)
    print(f"mode 0 ESJD: predicted {esjd:.4f} ± {bound:.4f}, empirical {chain.esjd[0]:.4f}")
    assert abs(chain.esjd[0] - esjd) < bound + 0.05

    limit = sm.asymptotic_acceptance("mala", 1.6504)
    assert abs(limit - 0.574) < 1e-3, limit

    cn = sm.Proposal.theta_langevin(target, 0.7, 0.5)
    assert sm.predict_acceptance(target, cn)[2] == 1.0
    assert sm.run_chain(target, cn, 500).acceptance_rate == 1.0

    dense = sm.GaussianTarget.dense([[2.0, 0.5], [0.5, 1.0]], [1.0, 0.0])
    hmc = sm.Proposal.hmc(dense, 0.3, 4)
    assert math.isfinite(sm.predict_acceptance(dense, hmc)[2])
    print("smoke test passed")


if __name__ == "__main__":
    main()

"""One end-to-end replica at a small gamma: chi walk -> predicted u*_gamma,
Gibbs sample near its first jump, block spins, eta, interface check.

    python demos/pipeline_demo.py [--gamma-exp 14] [--seed 1]
"""
import argparse
import json
import tempfile

from rfkac import experiments as ex


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gamma-exp", type=int, default=14, help="gamma = 2^-k")
    ap.add_argument("--block-sites", type=int, default=128)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()

    with tempfile.TemporaryDirectory() as out:
        cfg = ex.ExperimentConfig("pipeline", a.seed, n_paths=1, gamma=2.0**-a.gamma_exp, out=out,
                                  options={"block_sites": a.block_sites})
        res = ex.run_experiment(cfg)
        with open(f"{res.out_dir}/membership_000.json") as fh:
            m = json.load(fh)
        with open(f"{res.out_dir}/pipeline.json") as fh:
            doc = json.load(fh)
    print("schedule used:", json.dumps(doc["schedule_used"]))
    for k in sorted(m):
        print(f"  {k}: {m[k]}")
    for c in res.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")


if __name__ == "__main__":
    main()

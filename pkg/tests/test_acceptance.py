"""Acceptance criteria, one test per criterion.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers;
the lines are repeated in the terminal summary.  The thresholds are the
stated ones and are asserted as-is.

Run alone with ``pytest tests/test_acceptance.py``; ``-k criterion_5`` picks one.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from lpssl import cli, losses
from lpssl.analysis import (class_vertex, kl_flow_vs_analytic, latent_scale, slice_density,
                            typical_set_stats)
from lpssl.datasets import gen_attribute_task, gen_cluster_classification
from lpssl.flow import FlowModel
from lpssl.nn.tensor import Tensor, no_grad
from lpssl.relaxation import RelaxConfig, dirichlet_relax, sample_beta, sample_dirichlet
from lpssl.trainer import MixedBatch, TrainConfig, Trainer, fit_flow, train_bundle

from conftest import numeric_grad
from graphs import Graph, max_relative_error

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)


def test_criterion_1_autodiff_matches_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        g = Graph(rng, int(rng.integers(1, 5)))
        x, y = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
        tx, ty = Tensor(x, requires_grad=True), Tensor(y, requires_grad=True)
        g(tx, ty).backward()
        nx = numeric_grad(lambda v: float(g(Tensor(v), Tensor(y)).data), x, 1e-5)
        ny = numeric_grad(lambda v: float(g(Tensor(x), Tensor(v)).data), y, 1e-5)
        worst = max(worst, max_relative_error(tx.grad, nx), max_relative_error(ty.grad, ny))
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 30
    report(1, ok, f"100 graphs, max relative error {worst:.2e} (< 1e-4), {secs:.1f}s (< 30s)")
    assert ok


def test_criterion_2_flow_invertibility_and_jacobian():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_rt = 0.0
    for d in (2, 3, 5):
        flow = FlowModel(d, rng=rng, init_scale=1.0)
        x = rng.uniform(-3, 3, (1000, d))
        with no_grad():
            z = flow.forward(x)[0].data
        worst_rt = max(worst_rt, float(np.max(np.abs(flow.inverse(z) - x))))

    flow = FlowModel(2, rng=rng, init_scale=1.0)
    x = rng.uniform(-2.9, 2.9, (1000, 2))
    h = 1e-6

    def fwd(v):
        with no_grad():
            return flow.forward(v)[0].data

    cols = [(fwd(x + h * e) - fwd(x - h * e)) / (2 * h) for e in np.eye(2)]
    det = np.abs(cols[0][:, 0] * cols[1][:, 1] - cols[1][:, 0] * cols[0][:, 1])
    with no_grad():
        logdet = flow.forward(x)[1].data
    worst_jac = float(np.max(np.abs(np.exp(logdet) - det) / det))
    secs = time.perf_counter() - t0
    ok = worst_rt < 1e-6 and worst_jac < 1e-3 and secs < 30
    report(2, ok, f"round trip {worst_rt:.1e} (< 1e-6), |det J| rel error {worst_jac:.1e} "
                  f"(< 1e-3), {secs:.1f}s (< 30s)")
    assert ok


def test_criterion_3_trained_flow_normalizes():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 4000
    comp = rng.integers(0, 2, n)
    means = np.array([[-1.0, -0.5], [1.0, 0.8]])
    data = means[comp] + 0.35 * rng.standard_normal((n, 2))
    flow = FlowModel(2, rng=rng)
    fit_flow(flow, data, epochs=50, batch_size=256, rng=rng)
    g = np.linspace(-3, 3, 400)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    with no_grad():
        p = np.exp(flow.log_prob(np.c_[xx.ravel(), yy.ravel()]).data).reshape(xx.shape)
    mass = float(np.trapezoid(np.trapezoid(p, g, axis=1), g))
    secs = time.perf_counter() - t0
    ok = abs(mass - 1.0) <= 0.02 and secs < 120
    report(3, ok, f"mass on [-3,3]^2 = {mass:.4f} (1 +- 0.02), {secs:.1f}s (< 120s)")
    assert ok


def test_criterion_4_closed_form_losses():
    t0 = time.perf_counter()
    uniform = Tensor(np.full((3, 10), 0.1))
    errs = {
        "min_ent": abs(losses.min_ent(uniform).item() - np.log(10)),
        "mut_exc": abs(losses.mut_exc(uniform).item() - 9 * np.log(10 / 9)),
        "one_hot": abs(losses.mut_exc(Tensor(np.eye(10))).item()),
    }
    rng = np.random.default_rng(0)
    sem = 0.0
    for k in (2, 3, 5, 10):
        theta = Tensor(rng.dirichlet(np.ones(k), 20))
        for i in range(20):
            row = Tensor(theta.data[i:i + 1])
            sem = max(sem, abs(losses.semantic(row, np.eye(k)).item() - losses.mut_exc(row).item()))
    secs = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-9 and sem <= 1e-12 and secs < 1
    report(4, ok, ", ".join(f"{k} err {v:.1e}" for k, v in errs.items())
           + f", semantic vs mut_exc {sem:.1e} (<= 1e-12), {secs:.2f}s (< 1s)")
    assert ok


def test_criterion_5_learned_prior_matches_analytic():
    t0 = time.perf_counter()
    K, seed = 3, 0
    rng = np.random.default_rng(seed)
    cfg = RelaxConfig()
    labels = rng.integers(0, K, 10_000)
    data = dirichlet_relax(labels, K, cfg, rng)
    flow = FlowModel(K, rng=np.random.default_rng(seed + 1))
    fit_flow(flow, data, epochs=100, batch_size=256, rng=rng)
    i, j = (int(v) for v in rng.choice(K, 2, replace=False))
    sl = slice_density(flow, class_vertex(i, K), class_vertex(j, K), 101)
    mid = len(sl.t) // 2
    gap = float(min(sl.logp_flow[0], sl.logp_flow[-1]) - sl.logp_flow[mid])
    corr = sl.correlation()
    corr_density = float(np.corrcoef(np.exp(sl.logp_flow), np.exp(sl.logp_analytic))[0, 1])
    kl = kl_flow_vs_analytic(flow, K, n_samples=10_000, rng=np.random.default_rng(seed + 2),
                             jitter=cfg.jitter)
    secs = time.perf_counter() - t0
    ok = gap >= 2 and corr >= 0.9 and kl <= 0.5 and secs < 180
    report(5, ok, f"slice {i}->{j}: endpoint-midpoint gap {gap:.1f} nats (>= 2), "
                  f"log-density correlation {corr:.3f} (>= 0.9; density-space {corr_density:.3f}), "
                  f"KL {kl:.3f} nats (<= 0.5), {secs:.0f}s (< 180s)")
    assert ok


def _mean_test_acc(make_bundle, cfg_kwargs, seeds=range(5)):
    accs = []
    for s in seeds:
        accs.append(train_bundle(TrainConfig(seed=s, **cfg_kwargs), make_bundle(s)).final.acc_test)
    return 100 * float(np.mean(accs))


def test_criterion_6_classification_gains():
    t0 = time.perf_counter()

    def bundle(s):
        return gen_cluster_classification(K=4, input_dim=2, n_total=2000, n_labelled=40, seed=s)

    sup = _mean_test_acc(bundle, dict(prior="none", lam=0.0))
    lp = _mean_test_acc(bundle, dict(prior="lp", lam=0.01))
    ment = _mean_test_acc(bundle, dict(prior="minent", lam=0.01))
    secs = time.perf_counter() - t0
    ok = lp > sup and lp - sup >= 2 and abs(lp - ment) <= 3 and secs < 600
    report(6, ok, f"supervised {sup:.2f}, LP {lp:.2f}, MinEnt {ment:.2f}; LP - sup "
                  f"{lp - sup:+.2f} (>= 2), |LP - MinEnt| {abs(lp - ment):.2f} (<= 3), "
                  f"{secs:.0f}s (< 600s)")
    assert ok


def test_criterion_7_attribute_gains():
    t0 = time.perf_counter()

    def bundle(s):
        return gen_attribute_task(C=10, D=8, n_total=2000, n_labelled=100, seed=s)

    base = dict(task="attributes")
    sup = _mean_test_acc(bundle, dict(base, prior="none", lam=0.0))
    lp = _mean_test_acc(bundle, dict(base, prior="lp", lam=0.01))
    sem = _mean_test_acc(bundle, dict(base, prior="semantic", lam=0.01))
    secs = time.perf_counter() - t0
    ok = lp > sup and sem >= lp - 3 and secs < 600
    report(7, ok, f"supervised {sup:.2f}, LP {lp:.2f}, semantic {sem:.2f}; LP > sup, "
                  f"semantic >= LP - 3, {secs:.0f}s (< 600s)")
    assert ok


def test_criterion_8_optimization_split(monkeypatch):
    t0 = time.perf_counter()
    b = gen_cluster_classification(K=3, n_total=300, n_labelled=24, seed=0)
    tr = Trainer.create(TrainConfig(prior="lp", lam=0.5, batch_size=16), b.input_dim, 3)
    base_p, flow_p = tr.base.parameters(), tr.flow.parameters()
    leaks = {"phi_from_lu": 0.0, "omega_from_nll": 0.0}
    moved = {"omega_from_lu": 0.0, "phi_from_nll": 0.0}
    orig_lp, orig_nll = losses.lp_unlabelled, losses.flow_nll

    def spy_lp(flow, theta):
        out = orig_lp(flow, theta)
        out.value.backward()
        leaks["phi_from_lu"] = max(leaks["phi_from_lu"], max(np.abs(p.grad).max() for p in flow_p))
        moved["omega_from_lu"] = max(moved["omega_from_lu"],
                                     max(np.abs(p.grad).max() for p in base_p))
        for p in base_p:
            p.zero_grad()
        return out

    def spy_nll(flow, x):
        out = orig_nll(flow, x)
        out.value.backward()
        leaks["omega_from_nll"] = max(leaks["omega_from_nll"],
                                      max(np.abs(p.grad).max() for p in base_p))
        moved["phi_from_nll"] = max(moved["phi_from_nll"], max(np.abs(p.grad).max() for p in flow_p))
        for p in flow_p:
            p.zero_grad()
        return orig_nll(flow, x)

    monkeypatch.setattr(losses, "lp_unlabelled", spy_lp)
    monkeypatch.setattr(losses, "flow_nll", spy_nll)
    x_l, y_l = b.split("labelled")
    tr.train_step(MixedBatch(x_l[:8], y_l[:8], b.x["unlabelled"][:8]))
    secs = time.perf_counter() - t0
    ok = all(v == 0.0 for v in leaks.values()) and all(v > 0 for v in moved.values()) and secs < 1
    report(8, ok, f"max |dl_u/dphi| = {leaks['phi_from_lu']}, max |d flow_nll/domega| = "
                  f"{leaks['omega_from_nll']} (exact zeros), {secs:.2f}s (< 1s)")
    assert ok


def test_criterion_9_typical_set():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    parts, ok = [], True
    for d in (16, 64):
        flow = FlowModel(d, rng=rng)
        st = typical_set_stats(flow, 10_000, rng)
        rel = abs(st.mean_norm - np.sqrt(d)) / np.sqrt(d)
        probe = latent_scale(flow, rng.dirichlet(np.ones(d)), np.linspace(0, 3, 301))
        dec = bool(np.all(np.diff(probe.logp_base[1:]) < 0) and probe.logp_base[1] < probe.logp_base[0])
        ok &= rel < 0.05 and dec
        parts.append(f"d={d}: mean |z| {st.mean_norm:.3f} vs sqrt(d) {np.sqrt(d):.3f} "
                     f"({100 * rel:.1f}% < 5%), log p strictly decreasing on (0,3]: {dec}")
    secs = time.perf_counter() - t0
    ok &= secs < 30
    report(9, ok, "; ".join(parts) + f", {secs:.1f}s (< 30s)")
    assert ok


def test_criterion_10_sampler_means():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    n = 100_000
    alpha = np.full(10, 1.1)
    alpha[0] = 120.0
    hot = sample_dirichlet(np.tile(alpha, (n, 1)), rng)[:, 0]
    z_dir = (hot.mean() - 120 / 129.9) / (hot.std(ddof=1) / np.sqrt(n))
    b = sample_beta(np.full(n, 120.0), np.full(n, 1.1), rng)
    z_beta = (b.mean() - 120 / 121.1) / (b.std(ddof=1) / np.sqrt(n))
    secs = time.perf_counter() - t0
    ok = abs(z_dir) < 3 and abs(z_beta) < 3 and secs < 30
    report(10, ok, f"Dirichlet hot mean {hot.mean():.5f} ({z_dir:+.2f} SE), Beta mean "
                   f"{b.mean():.5f} ({z_beta:+.2f} SE) (|z| < 3), {secs:.1f}s (< 30s)")
    assert ok


def _csv_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_criterion_11_determinism(tmp_path):
    outputs = []
    for rep in ("a", "b"):
        root = tmp_path / rep
        root.mkdir()
        cfg = {"dataset": {"generator": "cluster", "K": 3, "n_total": 400, "n_labelled": 24,
                           "seed": 5},
               "data_dir": "data", "output_dir": "runs",
               "train": {"epochs": 3, "batch_size": 8, "hidden": [16]}}
        (root / "run.json").write_text(json.dumps(cfg))
        conf = str(root / "run.json")
        codes = [cli.main(["gen-data", conf]),
                 cli.main(["train", conf, "--prior", "lp", "--seed", "7"]),
                 cli.main(["sweep", conf, "--priors", "none,lp", "--seeds", "2"])]
        flow = str(root / "runs" / "lp-lambda0.01-seed7" / "flow.lpsw")
        for name, mode in [("slice", ["--slice", "0", "2"]), ("interp", ["--latent-interp"]),
                           ("scale", ["--latent-scale"]), ("kl", ["--kl", "--n-samples", "2000"]),
                           ("typical", ["--typical"])]:
            codes.append(cli.main(["analyze", *mode, "--flow", flow,
                                   "--out", str(root / f"{name}.csv")]))
        assert codes == [0] * len(codes)
        outputs.append(_csv_bytes(root))
    same = outputs[0].keys() == outputs[1].keys() and all(
        outputs[0][k] == outputs[1][k] for k in outputs[0])
    report(11, same, f"{len(outputs[0])} CSV files from gen-data, train, sweep and analyze "
                     f"byte-identical across repeats: {same}")
    assert same


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))

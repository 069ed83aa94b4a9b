"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``. Each test prints its verdict
straight to the terminal (bypassing capture) before asserting it. Criteria
5 to 7 train networks and take several minutes.
"""

import itertools
import json
import math
import time

import numpy as np
import yaml

from deepmvc import tensor as T
from deepmvc.cli import EXIT_FORMAT, EXIT_OK, main
from deepmvc.clustering import ddc_loss, kernel_bandwidth
from deepmvc.datasets import GeneratorSpec, decode_mvd, encode_mvd, generate
from deepmvc.errors import FormatError
from deepmvc.evaluation import RunRecord, accuracy, bootstrap_std, hungarian, nmi, zscores
from deepmvc.instances import INSTANCE_COMPONENTS, ablate, evaluate_protocol, make_spec, run_once, views_sweep
from deepmvc.losses import (
    LossWeights,
    contrastive_loss,
    mi_entropy_loss,
    mi_loss_all_pairs,
    reconstruction_loss,
    total_loss,
)
from deepmvc.tensor import grad_check
from deepmvc.theory import exact_expected_min, expected_min_sequence, simulate_min

from .oracles import (
    brute_accuracy,
    brute_assignment,
    contrastive_loop,
    ddc_loop,
    enumerated_expectation,
    plogp_nmi,
)

# blobs with two informative views followed by six Uniform[0, 1] views
SWEEP_DATA = GeneratorSpec(kind="uninformative_view", n=300, V=2, k=3, dims=8, cluster_sigma=0.1, seed=0,
                           n_uninformative=6, uninformative_dim=64)
# noisy-pairing variant: view 2 is a different same-class row plus N(0, 0.2^2)
PAIRING_DATA = GeneratorSpec(kind="random_pairing", n=300, k=3, dims=8, cluster_sigma=0.3, noise_sigma=0.2, seed=0)
BLOBS_DATA = GeneratorSpec(kind="blobs", n=300, V=2, k=3, dims=8, cluster_sigma=0.05, seed=0)


def verdict(capsys, cid, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {cid} ({title}): {detail}"
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert ok, line


def softmax_rows(r, n, k):
    e = np.exp(r.normal(size=(n, k)))
    return e / e.sum(axis=1, keepdims=True)


# -- 1 -------------------------------------------------------------------------------


def test_criterion_1_gradients(capsys):
    start = time.time()
    eps = 1e-5
    worst = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for seed in range(20):
        r = np.random.default_rng(seed)
        V, n, d = 3, 5, 4
        x = [r.random((n, d)) for _ in range(V)]
        x_hat = [r.random((n, d)) for _ in range(V)]
        z = [r.normal(size=(n, d)) for _ in range(V)]
        logits = [r.normal(size=(n, 3)) for _ in range(V)]
        a_logits, h = r.normal(size=(6, 3)), r.normal(size=(6, 4))

        record("reconstruction", grad_check(lambda t: reconstruction_loss(x, t), x_hat, eps))
        record("contrastive", grad_check(lambda t: contrastive_loss(t, 0.1), z, eps))
        record("mi", grad_check(lambda t: mi_loss_all_pairs([T.softmax(v, axis=1) for v in t], 10.0), logits, eps))
        sigma = kernel_bandwidth(h)
        for term in ("l1", "l2", "l3"):
            # at the data-driven bandwidth most kernel entries are ~e^-22, so
            # the hidden-space gradient is additionally checked at sigma = 1
            record(f"ddc_{term}", grad_check(
                lambda t: getattr(ddc_loss(T.softmax(t, axis=1), h, sigma=sigma), term), a_logits, eps))
            record(f"ddc_{term}", grad_check(
                lambda t: getattr(ddc_loss(T.softmax(t[0], axis=1), t[1], sigma=1.0), term), [a_logits, h], eps))

        def total(t):
            xh, zz, al, hh = t[:V], t[V:2 * V], t[2 * V], t[2 * V + 1]
            return total_loss(LossWeights(1.0, 0.5, 2.0), reconstruction_loss(x, xh), contrastive_loss(zz, 0.1),
                              ddc_loss(T.softmax(al, axis=1), hh, sigma=1.0).total)

        record("total", grad_check(total, x_hat + z + [a_logits, h], eps))
    elapsed = time.time() - start
    max_err = max(worst.values())
    ok = max_err < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    verdict(capsys, 1, "gradient suite", ok, f"max rel err {max_err:.2e} over 20 seeds [{detail}] in {elapsed:.1f}s")


# -- 2 -------------------------------------------------------------------------------


def test_criterion_2_loss_oracles(capsys):
    con_err = 0.0
    for seed in range(30):
        r = np.random.default_rng(seed)
        n, V = int(r.integers(2, 7)), int(r.integers(2, 5))
        z = [r.normal(size=(n, 3)) for _ in range(V)]
        con_err = max(con_err, abs(contrastive_loss(z, 0.1).item() - contrastive_loop(z, 0.1)))
    ddc_err = 0.0
    for seed in range(30):
        r = np.random.default_rng(100 + seed)
        n, k = int(r.integers(3, 8)), int(r.integers(2, 5))
        alpha, h = softmax_rows(r, n, k), r.normal(size=(n, 3))
        sigma = float(r.uniform(0.5, 2.0))
        out = ddc_loss(alpha, h, sigma=sigma)
        ref = ddc_loop(alpha, h, sigma)
        ddc_err = max(ddc_err, *(abs(a.item() - b) for a, b in zip((out.l1, out.l2, out.l3), ref)))
    lam = 10.0
    corr = mi_entropy_loss(np.eye(2) / 2.0, lam).item()
    mi_err = abs(corr - (-(2 * lam - 1) * math.log(2)))
    for D in (2, 3, 5):
        indep = mi_entropy_loss(np.full((D, D), 1.0 / D**2), lam).item()
        mi_err = max(mi_err, abs(indep - (-(lam - 1) * 2 * math.log(D))))
    ok = con_err < 1e-10 and ddc_err < 1e-10 and mi_err < 1e-9
    verdict(capsys, 2, "loss oracles", ok,
            f"contrastive {con_err:.1e} (<1e-10), DDC terms {ddc_err:.1e} (<1e-10), MI closed forms {mi_err:.1e} (<1e-9)")


# -- 3 -------------------------------------------------------------------------------


def test_criterion_3_metric_oracles(capsys):
    r = np.random.default_rng(7)
    acc_mismatch = 0
    for _ in range(200):
        k = int(r.integers(1, 6))
        n = int(r.integers(1, 30))
        pred, truth = r.integers(0, k, n), r.integers(0, k, n)
        if abs(accuracy(pred, truth, k) - brute_accuracy(pred.tolist(), truth.tolist(), k)) > 1e-12:
            acc_mismatch += 1
    nmi_err = 0.0
    for _ in range(200):
        n = int(r.integers(2, 60))
        pred, truth = r.integers(0, int(r.integers(2, 6)), n), r.integers(0, int(r.integers(2, 6)), n)
        if len(set(pred.tolist())) < 2 or len(set(truth.tolist())) < 2:
            continue
        nmi_err = max(nmi_err, abs(nmi(pred, truth) - plogp_nmi(pred.tolist(), truth.tolist())))
    hung_mismatch = 0
    for _ in range(120):
        k = int(r.integers(1, 7))
        cost = r.integers(0, 5, size=(k, k)).astype(float)
        if list(hungarian(cost)) != brute_assignment(cost.tolist()):
            hung_mismatch += 1
    ok = acc_mismatch == 0 and nmi_err < 1e-12 and hung_mismatch == 0
    verdict(capsys, 3, "metric oracles", ok,
            f"accuracy mismatches {acc_mismatch}/200, NMI max err {nmi_err:.1e} (<1e-12), "
            f"Hungarian mismatches {hung_mismatch}/120 (k<=6, tie-heavy integer costs)")


# -- 4 -------------------------------------------------------------------------------


def test_criterion_4_theory(capsys):
    start = time.time()
    v23 = exact_expected_min([1 / 3] * 3, 2)
    r = np.random.default_rng(3)
    increases = 0
    enum_err = 0.0
    pmfs = []
    for _ in range(100):
        k = int(r.integers(1, 8))
        p = r.random(k) * (r.random(k) < 0.8)
        if p.sum() == 0:
            p[0] = 1.0
        p = p / p.sum()
        pmfs.append(p)
        seq = expected_min_sequence(p, 10)
        increases += sum(b > a for a, b in zip(seq, seq[1:]))
        enum_err = max(enum_err, max(abs(seq[V - 1] - enumerated_expectation(p.tolist(), V)) for V in (1, 5, 10)))
    outside, violations = 0, 0
    checks = [([1 / 3] * 3, 6), ([0.1, 0.2, 0.3, 0.4], 5), ([0.5, 0.0, 0.5], 4)] + [(p, 4) for p in pmfs[:5]]
    for i, (p, V_max) in enumerate(checks):
        for V in range(1, V_max + 1):
            stat = simulate_min(p, V, 100_000, seed=i)
            if abs(stat.empirical_mean - stat.exact) > 3 * stat.std_error + 1e-12:
                outside += 1
        violations += simulate_min(p, V_max, 100_000, seed=100 + i).nesting_violations
    elapsed = time.time() - start
    ok = abs(v23 - 14 / 9) <= 1e-12 and increases == 0 and outside == 0 and violations == 0 and elapsed < 60
    verdict(capsys, 4, "theory", ok,
            f"E(M_2) uniform{{1,2,3}} err {abs(v23 - 14 / 9):.1e}; increases over 100 pmfs {increases}; "
            f"enumeration err {enum_err:.1e}; MC points outside 3 SE {outside}; nesting violations {violations}; "
            f"{elapsed:.1f}s")


# -- 5 -------------------------------------------------------------------------------


def test_criterion_5_clusterability(capsys):
    start = time.time()
    ds = generate(BLOBS_DATA)
    accs = {name: evaluate_protocol(make_spec(name), ds, runs=5, seed=0).acc for name in ("AE-KM", "AE-DDC", "CAE-DDC")}
    elapsed = time.time() - start
    ok = all(a >= 0.95 for a in accs.values()) and elapsed < 600
    detail = ", ".join(f"{k} {v:.3f}" for k, v in accs.items())
    verdict(capsys, 5, "end-to-end clusterability", ok, f"selected ACC {detail} (>=0.95) in {elapsed:.0f}s (<600s)")


# -- 6 -------------------------------------------------------------------------------


def test_criterion_6_views_sweep(capsys):
    start = time.time()
    ds = generate(SWEEP_DATA)
    assert ds.n_views == 8
    counts = [2, 4, 6, 8]
    curves = {}
    for name in ("CAE-DDC", "AE-DDC", "InfoDDC"):
        curves[name] = {p.V: p.acc for p in views_sweep(ds, make_spec(name), counts, runs_per_point=5, seed=0)}
    elapsed = time.time() - start
    cae, ae, info = curves["CAE-DDC"], curves["AE-DDC"], curves["InfoDDC"]
    clauses = {
        "CAE-DDC drop >= 0.10": cae[2] - cae[8] >= 0.10,
        "AE-DDC > CAE-DDC at V=8": ae[8] > cae[8],
        "InfoDDC |V8-V2| <= 0.05": abs(info[8] - info[2]) <= 0.05,
        "runtime < 30 min": elapsed < 1800,
    }
    curve_txt = "; ".join(f"{m} " + " ".join(f"{c[v]:.3f}" for v in counts) for m, c in curves.items())
    clause_txt = ", ".join(f"{k}: {'ok' if v else 'NO'}" for k, v in clauses.items())
    verdict(capsys, 6, "views sweep, V=2,4,6,8", all(clauses.values()),
            f"{curve_txt} | {clause_txt} | {elapsed:.0f}s")


# -- 7 -------------------------------------------------------------------------------


def ablation_grid():
    """One full w/-vs-w/o SSL grid plus fusion and CM swaps for every instance."""
    grid = []
    for name, (sv, mv, fusion, cm) in INSTANCE_COMPONENTS.items():
        base = make_spec(name, epochs=3)
        mv_on = mv if mv != "none" else "contrastive"
        for sv_v, mv_v in itertools.product(("none", "reconstruction"), ("none", mv_on)):
            grid.append(ablate(ablate(base, "sv_ssl", sv_v), "mv_ssl", mv_v))
        for f in ("concat", "weighted_sum"):
            grid.append(ablate(base, "fusion", f))
        for c in ("kmeans", "ddc"):
            grid.append(ablate(base, "cm", c))
    return grid


def test_criterion_7_ablations(capsys):
    start = time.time()
    blobs = generate(BLOBS_DATA)
    errors, valid = [], 0
    for spec in ablation_grid():
        try:
            out = run_once(spec, blobs)
            labels = out.labels
            valid += int(labels.shape == (blobs.n,) and labels.min() >= 0 and labels.max() < blobs.k)
        except Exception as exc:  # noqa: BLE001 - any failure counts against the criterion
            errors.append(f"{spec.name}{list(spec.ablations)}: {type(exc).__name__}")
    n_grid = len(ablation_grid())
    pairing = generate(PAIRING_DATA)
    full = make_spec("CAE-DDC")
    bare = ablate(ablate(full, "sv_ssl", "none"), "mv_ssl", "none")
    acc_full = evaluate_protocol(full, pairing, runs=5, seed=0).acc
    acc_bare = evaluate_protocol(bare, pairing, runs=5, seed=0).acc
    margin = acc_full - acc_bare
    elapsed = time.time() - start
    ok = not errors and valid == n_grid and margin > 0
    verdict(capsys, 7, "ablation mechanics", ok,
            f"grid {valid}/{n_grid} valid, errors {errors or 'none'}; noisy pairing CAE-DDC {acc_full:.3f} vs "
            f"bare DDC {acc_bare:.3f}, margin {margin:+.3f} (>0) in {elapsed:.0f}s")


# -- 8 -------------------------------------------------------------------------------


def test_criterion_8_protocol_statistics(capsys):
    runs = [RunRecord(0, 1.0, 1.0, 1.0), RunRecord(1, 2.0, 0.0, 0.0)]
    bern = bootstrap_std(runs, 100_000, 0)["acc"].std_hat
    bern_err = abs(bern - math.sqrt(0.75 * 0.25))
    same = bootstrap_std([RunRecord(s, 1.0, 0.7, 0.4) for s in range(5)], 1000, 0)
    zero = same["acc"].std_hat == 0.0 and same["nmi"].std_hat == 0.0
    r = np.random.default_rng(11)
    moment_err = 0.0
    for _ in range(50):
        models = [f"m{i}" for i in range(int(r.integers(2, 8)))]
        res = {m: {d: {"acc": float(r.random()), "nmi": float(r.random())} for d in ("a", "b")} for m in models}
        z = zscores(res)
        for cell in itertools.product(("a", "b"), ("acc", "nmi")):
            vals = np.array([z[m][cell] for m in models])
            moment_err = max(moment_err, abs(vals.mean()), abs(math.sqrt((vals**2).mean()) - 1.0))
    two = zscores({"x": {"d": {"acc": 0.3}}, "y": {"d": {"acc": 0.8}}})
    pm_one = abs(two["x"][("d", "acc")] + 1.0) < 1e-12 and abs(two["y"][("d", "acc")] - 1.0) < 1e-12
    ok = bern_err <= 0.01 and zero and moment_err < 1e-9 and pm_one
    verdict(capsys, 8, "protocol statistics", ok,
            f"R=2 Bernoulli sigma_hat {bern:.4f} vs 0.4330 (err {bern_err:.4f} <= 0.01); identical runs zero: {zero}; "
            f"Z moment err {moment_err:.1e} (<1e-9); two-model +-1: {pm_one}")


# -- 9 -------------------------------------------------------------------------------


def test_criterion_9_determinism_formats(capsys, tmp_path):
    dataset = {"kind": "blobs", "n": 90, "V": 2, "k": 3, "dims": 5, "name": "acc9"}
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"dataset": dataset, "runs": 2,
                                   "instances": [{"name": "AE-DDC", "epochs": 5}, {"name": "CAE-KM", "epochs": 5}]}))
    codes = []
    for tag in ("a", "b"):
        codes.append(main(["generate", "--config", str(cfg), "--out", str(tmp_path / tag)]))
        codes.append(main(["train", "--config", str(cfg), "--out", str(tmp_path / tag)]))
    same_mvd = (tmp_path / "a" / "acc9.mvd").read_bytes() == (tmp_path / "b" / "acc9.mvd").read_bytes()
    same_runs = (tmp_path / "a" / "runs.jsonl").read_bytes() == (tmp_path / "b" / "runs.jsonl").read_bytes()
    sidecars = [json.loads((tmp_path / t / "acc9.json").read_text()) for t in ("a", "b")]
    for s in sidecars:
        s.pop("created")
    same_sidecar = sidecars[0] == sidecars[1]

    roundtrip = True
    for seed in range(5):
        ds = generate(GeneratorSpec(kind="blobs", n=40, V=3, k=4, dims=3, seed=seed))
        back = decode_mvd(encode_mvd(ds))
        roundtrip &= all(np.array_equal(a.astype(np.float32), b) for a, b in zip(ds.views, back.views))
        roundtrip &= np.array_equal(ds.labels, back.labels) and back.k == ds.k
        roundtrip &= encode_mvd(back) == encode_mvd(ds)

    good = (tmp_path / "a" / "acc9.mvd").read_bytes()
    damaged = [b"XXXX" + good[4:], good[:-3], good + b"\0", good[:4] + b"\x02" + good[5:], good[:10]]
    rejected = 0
    for blob in damaged:
        try:
            decode_mvd(blob)
        except FormatError:
            rejected += 1
    bad = tmp_path / "bad.mvd"
    bad.write_bytes(damaged[0])
    train_bad = tmp_path / "bad.yaml"
    train_bad.write_text(yaml.safe_dump({"dataset": {"path": str(bad)}, "instances": ["AE-KM"], "runs": 1}))
    cli_code = main(["train", "--config", str(train_bad), "--out", str(tmp_path / "c")])
    ok = (codes == [EXIT_OK] * 4 and same_mvd and same_runs and same_sidecar and roundtrip
          and rejected == len(damaged) and cli_code == EXIT_FORMAT and not (tmp_path / "c" / "runs.jsonl").exists())
    verdict(capsys, 9, "determinism and formats", ok,
            f"generate/train byte-identical: mvd {same_mvd}, runs.jsonl {same_runs}, sidecar {same_sidecar}; "
            f"round trip bit-exact {roundtrip}; corrupted rejected {rejected}/{len(damaged)}; CLI exit {cli_code}")

"""Acceptance criteria 1-7. Each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import itertools
import math
import time

import numpy as np
import pytest

from hypergroup import io
from hypergroup import lorentz as lz
from hypergroup.bench import mean_seconds, random_descriptor_graph, relative_gaps, run_benchmark, summarize
from hypergroup.evaluation import (
    THRESHOLDS,
    completeness_levelwise,
    completeness_viewwise,
    ctr,
    generate_candidates,
    group_recall,
    tangent_affinity_score,
    threshold_mask,
)
from hypergroup.hierarchy.dasgupta import dasgupta_cost, exact_sparsest_cut_tree
from hypergroup.hierarchy.spectral import recursive_spectral_tree
from hypergroup.synthetic import SceneSpec, gen_scene
from hypergroup.training import (
    Batch,
    LossConfig,
    Schedule,
    TrainableEmbedding,
    compute_leaf_prototypes,
    enumerate_lca_triplets,
    nearest_prototype_accuracy,
    train,
)

from helpers import gradient_errors, random_configuration

_RUNS: dict[str, list[str]] = {}  # criterion -> CSV texts, one per run


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")

    return emit


def _record(key, text):
    _RUNS.setdefault(key, []).append(text)
    return text


# ---------------------------------------------------------------- 1. manifold


def test_criterion_1_manifold(report):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_res = worst_klein = worst_mid = 0.0
    for c in (0.25, 1.0, 4.0):
        for dim in (2, 5, 16):
            n = 10_000 // 9 + 1
            u = rng.normal(0.0, 1.0, (n, dim)) * rng.uniform(0.0, 3.0, (n, 1))
            x = lz.project_to_hyperboloid(u, c)
            worst_res = max(worst_res, float(np.max(lz.manifold_residual(x, c))))
            back = lz.klein_inverse(lz.klein_map(x), c)
            worst_klein = max(worst_klein, float(np.max(np.abs(back - x) / np.maximum(1.0, np.abs(x)))))
            for i in range(0, n, 37):
                dup = np.repeat(x[i : i + 1], int(rng.integers(2, 6)), axis=0)
                mid = lz.einstein_midpoint(dup, c)
                worst_mid = max(worst_mid, float(np.max(np.abs(mid - x[i]) / np.maximum(1.0, np.abs(x[i])))))
    elapsed = time.perf_counter() - start
    ok = worst_res < 1e-9 and worst_klein < 1e-9 and worst_mid < 1e-9 and elapsed < 5.0
    report(1, ok, f"residual {worst_res:.1e}, klein round trip {worst_klein:.1e}, duplicate midpoint {worst_mid:.1e}, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 2. gradients


def test_criterion_2_gradients(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst: dict[str, float] = {}
    for _ in range(100):
        batches, U, cfg = random_configuration(rng)
        for term, err in gradient_errors(batches, U, cfg).items():
            worst[term] = max(worst.get(term, 0.0), err)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 30.0
    detail = ", ".join(f"{t} {e:.1e}" for t, e in worst.items())
    report(2, ok, f"worst relative error {detail}; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3. Dasgupta


def _pair_index(n):
    return {p: i for i, p in enumerate(itertools.combinations(range(n), 2))}


def _all_tree_lca_sizes(n):
    """Matrix with one row per rooted binary tree on ``n`` leaves holding the
    LCA leaf count of every leaf pair, built by explicit enumeration."""
    pidx = _pair_index(n)
    memo = {}

    def rows(leaves):
        if leaves in memo:
            return memo[leaves]
        out = np.zeros((1, len(pidx)))
        if len(leaves) > 1:
            first, rest = leaves[0], leaves[1:]
            parts = []
            for r in range(len(rest)):  # left side keeps ``first`` so each tree appears once
                for extra in itertools.combinations(rest, r):
                    a = (first,) + extra
                    b = tuple(x for x in rest if x not in extra)
                    cross = np.zeros(len(pidx))
                    for i in a:
                        for j in b:
                            cross[pidx[(min(i, j), max(i, j))]] = len(leaves)
                    ra, rb = rows(a), rows(b)
                    parts.append((ra[:, None, :] + rb[None, :, :]).reshape(-1, len(pidx)) + cross)
            out = np.concatenate(parts)
        memo[leaves] = out
        return out

    return rows(tuple(range(n)))


def _brute_force_cost(tree, w):
    n = w.shape[0]
    return math.fsum(w[a, b] * tree.leaf_count(tree.lca(a, b)) for a, b in itertools.combinations(range(n), 2))


def _criterion_3(seed):
    """Returns (records CSV, summary CSV, stats)."""
    start = time.perf_counter()
    exact_mismatch = 0
    below_optimum = 0
    for n in range(4, 9):
        sizes = _all_tree_lca_sizes(n)
        assert sizes.shape[0] == math.prod(range(1, 2 * n - 2, 2))  # (2n-3)!!
        rng = np.random.default_rng([seed, n, 1])
        iu = np.triu_indices(n, 1)
        for _ in range(50):
            w = random_descriptor_graph(n, rng)
            optimum = float(np.min(sizes @ w[iu]))
            for build in (exact_sparsest_cut_tree, recursive_spectral_tree):
                tree = build(w)
                cost = dasgupta_cost(tree, w)
                exact_mismatch += cost != _brute_force_cost(tree, w)
                below_optimum += cost < optimum * (1 - 1e-12)
    records = run_benchmark(range(6, 13), trials=50, seed=seed)
    gaps = relative_gaps(records)
    secs = mean_seconds(records)
    ratio6 = secs[(6, "exact")] / secs[(6, "spectral")]
    ratio12 = secs[(12, "exact")] / secs[(12, "spectral")]
    records_csv = io.csv_text(
        ("n", "trial", "method", "cost", "normalized_cost"),
        [(r.n, r.trial, r.method, r.cost, r.normalized_cost) for r in records],
    )
    summary_csv = io.csv_text(("n", "mean_gap", "median_gap", "max_abs_gap"), summarize(records))
    stats = {
        "mismatch": exact_mismatch,
        "below": below_optimum,
        "mean_gaps": {n: float(np.mean(g)) for n, g in gaps.items()},
        "ratio6": ratio6,
        "ratio12": ratio12,
        "seconds": time.perf_counter() - start,
    }
    return records_csv, summary_csv, stats


def test_criterion_3_dasgupta(report):
    records_csv, summary_csv, s = _criterion_3(seed=0)
    _record("3", records_csv + summary_csv)
    worst_gap = max(abs(g) for g in s["mean_gaps"].values())
    ok = (
        s["mismatch"] == 0
        and s["below"] == 0
        and worst_gap <= 0.02
        and s["ratio12"] > s["ratio6"]
        and s["seconds"] < 300
    )
    gaps = " ".join(f"n={n}:{g:+.4f}" for n, g in s["mean_gaps"].items())
    report(
        3,
        ok,
        f"cost mismatches {s['mismatch']}, below optimum {s['below']}; mean gaps {gaps}; "
        f"exact/spectral time ratio n=6 {s['ratio6']:.1f}, n=12 {s['ratio12']:.1f}; {s['seconds']:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- 4. end to end

# The LCA-ordering weight is raised from its library default for this run; see
# the decisions log for the measurements behind it.
E2E_LOSS = {"lca_weight": 0.5}
E2E_SPEC = SceneSpec(height=32, width=32, branching=(4, 2, 2), d_feat=64, sigma=0.05, n_views=3, seed=0)


def _criterion_4(seed):
    start = time.perf_counter()
    scene = gen_scene(E2E_SPEC)
    images = scene.training_images()
    emb = TrainableEmbedding.initialize(scene.n_rays, 16, seed=seed)
    result = train(emb, images, Schedule(steps=2000), LossConfig(**E2E_LOSS), rng_seed=seed)
    trained = result.embedding
    accuracy = min(nearest_prototype_accuracy(trained, im) for im in images)
    ordered = []
    for im in images:
        protos = compute_leaf_prototypes(Batch(im.ray_ids, im.leaf_labels, im.forest), trained)
        for i, j, k in enumerate_lca_triplets(im.forest):
            d = lambda a, b: float(lz.lca_depth_surrogate(protos[a], protos[b]))  # noqa: E731
            ordered.append(d(i, j) > max(d(i, k), d(j, k)))
    bundle = scene.bundle(trained)
    viewwise = completeness_viewwise(bundle)
    levelwise, thresholds = completeness_levelwise(bundle)
    rows = [(h["step"], h["total"], *(h[t] for t in ("leaf", "root", "comp", "lca", "norm"))) for h in result.history]
    csv = io.csv_text(("step", "total", "leaf", "root", "comp", "lca", "norm"), rows)
    csv += io.csv_text(("metric", "value"), [("accuracy", accuracy), ("triplets", float(np.mean(ordered)))])
    csv += io.csv_text(("level", "viewwise", "levelwise"), [(lv, viewwise[lv], levelwise[lv]) for lv in bundle.levels])
    stats = {
        "accuracy": accuracy,
        "triplets": float(np.mean(ordered)),
        "n_triplets": len(ordered),
        "viewwise": viewwise,
        "seconds": time.perf_counter() - start,
    }
    return csv, stats, scene, trained


@pytest.fixture(scope="module")
def trained_scene():
    return _criterion_4(seed=0)


def test_criterion_4_end_to_end(trained_scene, report):
    csv, s, _, _ = trained_scene
    _record("4", csv)
    ok = s["accuracy"] == 1.0 and s["triplets"] >= 0.95 and min(s["viewwise"].values()) >= 0.95 and s["seconds"] < 180
    vw = ", ".join(f"{k} {v:.3f}" for k, v in s["viewwise"].items())
    report(
        4,
        ok,
        f"accuracy {s['accuracy']:.3f}, triplets ordered {s['triplets']:.3f} of {s['n_triplets']}, "
        f"view-wise completeness {vw}; {s['seconds']:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- 5. protocol invariants


def _protocol_scenes(scene, trained):
    """The trained scene plus two untrained ones with random features."""
    out = [(scene, trained)]
    for seed in (1, 2):
        sc = gen_scene(SceneSpec(height=24, width=24, branching=(2, 2, 2), d_feat=16, sigma=0.1, seed=seed))
        out.append((sc, TrainableEmbedding.initialize(sc.n_rays, 8, seed=seed, std=0.5)))
    return out


def _criterion_5(scene, trained):
    start = time.perf_counter()
    failures = []
    vws, lws, rows = [], [], []
    for s_idx, (sc, emb) in enumerate(_protocol_scenes(scene, trained)):
        bundle = sc.bundle(emb)
        vw = completeness_viewwise(bundle)
        lw, _ = completeness_levelwise(bundle)
        vws.append(vw)
        lws.append(lw)
        for level in bundle.levels:
            rows.append((s_idx, level, "viewwise", vw[level]))
            rows.append((s_idx, level, "levelwise", lw[level]))
            if lw[level] > vw[level]:
                failures.append(f"scene {s_idx} {level}: level-wise above view-wise")
        per_level, overall = ctr([vw], [lw])
        if overall > 1 + 1e-9:
            failures.append(f"scene {s_idx}: CTR {overall}")
        for view in bundle.views:
            score = tangent_affinity_score(view.features, view.query, bundle.curvature)
            masks = np.stack([threshold_mask(score, t) for t in THRESHOLDS])
            if not np.all(masks[1:] <= masks[:-1]):
                failures.append(f"scene {s_idx}: threshold masks not nested")

        feats = emb.points(sc.views[0].index_map)
        pool = generate_candidates(feats, emb.curvature).masks
        gt = [m for node, m in sc.view_masks(0).items() if sc.parent[node] is not None]
        budgets = sorted({1, 2, 5, 10, 20, 50, len(pool), len(pool) + 10})
        rep = group_recall(pool, gt, budgets, seeds=20, base_seed=s_idx)
        for m in ("miou", "r50", "r75"):
            if np.any(np.diff(rep.mean[m]) < 0):
                failures.append(f"scene {s_idx}: {m} not monotone in K")
        if np.any(np.array(rep.mean["r75"]) > np.array(rep.mean["r50"])):
            failures.append(f"scene {s_idx}: R@0.75 above R@0.50")
        for b, k in enumerate(rep.budgets):
            if k >= len(pool) and any(rep.mean[m][b] != rep.native[m] for m in rep.native):
                failures.append(f"scene {s_idx}: K={k} differs from native")
        rows.extend((s_idx, f"K={k}", m, val) for k, m, val, _ in rep.rows())
    per_level, overall = ctr(vws, lws)
    rows.extend(("all", level, "ctr", v) for level, v in per_level.items())
    if overall > 1 + 1e-9:
        failures.append(f"overall CTR {overall}")
    csv = io.csv_text(("scene", "key", "mode", "value"), rows)
    return csv, failures, overall, time.perf_counter() - start


def test_criterion_5_protocol(trained_scene, report):
    _, _, scene, trained = trained_scene
    csv, failures, overall, seconds = _criterion_5(scene, trained)
    _record("5", csv)
    ok = not failures and seconds < 60
    report(5, ok, f"{len(failures)} violations over 3 scenes, CTR {overall:.4f}; {seconds:.1f}s" + (f" ({failures[0]})" if failures else ""))
    assert ok


# ---------------------------------------------------------------- 6. recall expectation


def _criterion_6(base_seed):
    start = time.perf_counter()
    gt = np.zeros(20, bool)
    gt[:10] = True
    a = np.zeros(20, bool)
    a[:6] = True  # IoU 0.6
    b = np.zeros(20, bool)
    b[:2] = True  # IoU 0.2
    rep = group_recall([a, b], [gt], budgets=(1,), seeds=100, base_seed=base_seed)
    mean = rep.mean["miou"][0]
    se = 0.2 / math.sqrt(100)  # a fair pick between 0.6 and 0.2 has standard deviation 0.2
    return io.csv_text(("budget", "metric", "mean", "std"), rep.rows()), mean, se, time.perf_counter() - start


def test_criterion_6_recall_expectation(report):
    csv, mean, se, seconds = _criterion_6(base_seed=0)
    _record("6", csv)
    ok = abs(mean - 0.4) <= 3 * se and seconds < 5
    report(6, ok, f"100-seed mean mIoU {mean:.3f}, |mean - 0.4| = {abs(mean - 0.4):.3f} vs 3 SE = {3 * se:.3f}; {seconds:.2f}s")
    assert ok


# ---------------------------------------------------------------- 7. determinism


def test_criterion_7_determinism(report):
    assert set(_RUNS) >= {"3", "4", "5", "6"}, "criteria 3-6 must run first"
    records_csv, summary_csv, _ = _criterion_3(seed=0)
    csv4, _, scene, trained = _criterion_4(seed=0)
    csv5, _, _, _ = _criterion_5(scene, trained)
    csv6, _, _, _ = _criterion_6(base_seed=0)
    again = {"3": records_csv + summary_csv, "4": csv4, "5": csv5, "6": csv6}
    same = {k: again[k].encode() == _RUNS[k][0].encode() for k in sorted(again)}
    ok = all(same.values())
    report(7, ok, "byte-identical CSV reruns: " + ", ".join(f"criterion {k} {'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok

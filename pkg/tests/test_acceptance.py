"""Acceptance gate: the headline guarantees, each at its stated tolerance.

Every test prints exactly one [PASS]/[FAIL] line (run pytest with -s to
see them on success) and enforces the runtime budget it quotes.
"""

import math
import time

import numpy as np

from oracles import (fuse_reference, iou_reference, rank_bruteforce,
                     softmax_reference)
from roadfusion.engine import EngineConfig, RunContext, run_eval, sweep_ell
from roadfusion.errors import NoEligibleReferencesError
from roadfusion.evaluation import class_iou
from roadfusion.fusion import (FusionConfig, fuse, gt_to_pseudologits,
                               posterior_update)
from roadfusion.manifest import load_manifest
from roadfusion.prior import ClassStats, CoverageVector, TemplatePrior
from roadfusion.retrieval import (DescriptorIndex, GeoExclusion, haversine_m,
                                  retrieve_similar)
from roadfusion.tensorio import Descriptor, LabelGrid, LogitMap
from roadfusion.cli import main as cli_main

UNDEF = 255


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def simplex(rng, n):
    v = rng.uniform(0.05, 1.0, size=n)
    return CoverageVector(coverage=v / v.sum())


def haversine_oracle(a, b):
    lat1, lon1 = (math.radians(v) for v in a)
    lat2, lon2 = (math.radians(v) for v in b)
    s = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2.0 * 6_371_000.0 * math.asin(math.sqrt(s))


def test_fusion_matches_scalar_reference():
    """200 random 8x8x4 cases, both posterior modes, <= 1e-9 relative."""
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    masks_ok = True
    for i in range(200):
        mode = ("as_published", "conjugate")[i % 2]
        scope = ("road_candidates", "all_pixels")[i % 3 == 0]
        query = LogitMap(rng.normal(0, 3, (8, 8, 4)).astype(np.float32))
        template = TemplatePrior(
            mean_logits=LogitMap(rng.normal(0, 3, (8, 8, 4)).astype(np.float32)),
            source_ids=("a", "b"))
        stats_q = ClassStats(sigma=rng.uniform(0.05, 3.0, 4),
                             support=np.full(4, 5, dtype=np.int64))
        stats_s = ClassStats(sigma=rng.uniform(0.05, 3.0, 4),
                             support=np.full(4, 5, dtype=np.int64))
        c_q, c_k, c_ell = (simplex(rng, 4) for _ in range(3))
        road = int(rng.integers(0, 4))
        cfg = FusionConfig(road_class=road, k=2, ell=4, posterior_mode=mode,
                           update_scope=scope)
        result = fuse(query, template, stats_q, stats_s, c_q, c_k, c_ell, cfg)

        expected, mask = fuse_reference(
            query.values.tolist(), template.mean_logits.values.tolist(),
            stats_q.sigma, stats_s.sigma, c_q.coverage, c_k.coverage,
            c_ell.coverage, road_class=road, mode=mode, lo=1e-3, hi=1e3,
            all_pixels=(scope == "all_pixels"))
        expected32 = np.asarray(expected, dtype=np.float64).astype(np.float32)
        masks_ok &= bool(np.array_equal(result.candidate_mask,
                                        np.asarray(mask, dtype=bool)))
        a = result.fused_logits.values.astype(np.float64)
        b = expected32.astype(np.float64)
        rel = np.abs(a - b) / np.maximum(np.abs(b), 1e-12)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    report("fusion-oracle",
           worst <= 1e-9 and masks_ok and elapsed < 5.0,
           f"max rel err {worst:.2e} over 200 cases, both modes, "
           f"masks exact={masks_ok}, {elapsed:.2f}s (budget 5s)")


def test_conjugate_limits_and_mode_agreement():
    """Clamp-bound limits within 1e-3 abs; mode agreement at the unit
    point of sigma_q = omega sigma_s within 1e-12."""
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    worst_limit = 0.0
    for _ in range(200):
        x_q, x_s = rng.normal(0, 5, size=2)
        hi_mean, _ = posterior_update(x_q, 1.0, x_s, 1.0, 1e3, "conjugate")
        lo_mean, _ = posterior_update(x_q, 1.0, x_s, 1.0, 1e-3, "conjugate")
        worst_limit = max(worst_limit, abs(hi_mean - x_q), abs(lo_mean - x_s))

    worst_agree = 0.0
    for _ in range(200):
        x_q, x_s = rng.normal(0, 5, size=2)
        omega = float(10.0 ** rng.uniform(-3, 3))
        sigma_s = 1.0 / omega  # sigma_q = omega * sigma_s = 1
        pub = posterior_update(x_q, 1.0, x_s, sigma_s, omega, "as_published")
        conj = posterior_update(x_q, 1.0, x_s, sigma_s, omega, "conjugate")
        worst_agree = max(worst_agree, abs(pub[0] - conj[0]),
                          abs(pub[1] - conj[1]))
    elapsed = time.perf_counter() - t0
    report("conjugate-limits",
           worst_limit <= 1e-3 and worst_agree <= 1e-12 and elapsed < 1.0,
           f"limit err {worst_limit:.2e} (<=1e-3), "
           f"mode agreement err {worst_agree:.2e} (<=1e-12), "
           f"{elapsed:.2f}s (budget 1s)")


def test_retrieval_matches_bruteforce():
    """100 random indices (<=1000 entries, 64 dims): exact ranking with
    ties, plus geo-exclusion soundness on boundary fixtures."""
    rng = np.random.default_rng(31)
    t0 = time.perf_counter()
    mismatches = 0
    for case in range(100):
        n = int(rng.integers(5, 1001))
        base = rng.normal(size=(n, 64))
        if case % 2 == 0 and n >= 10:
            # Bit-identical duplicates force ties broken by id.
            dup = rng.choice(n, size=max(2, n // 5), replace=False)
            base[dup] = base[dup[0]]
        order = rng.permutation(n)
        ids = [f"img-{order[i]:04d}" for i in range(n)]

        geotags = [None] * n
        qgeo = None
        if case % 3 == 0:
            qgeo = (47.0, 8.0)
            for i in range(n):
                if rng.random() < 0.2:
                    geotags[i] = (47.0, 8.0 + rng.uniform(0.00005, 0.0003))
                elif rng.random() < 0.5:
                    geotags[i] = (47.0, 8.0 + rng.uniform(0.01, 0.2))

        unit = base / np.linalg.norm(base, axis=1, keepdims=True)
        index = DescriptorIndex(ids=ids, matrix=unit, geotags=geotags)
        query32 = rng.normal(size=64).astype(np.float32)
        m = int(rng.integers(1, n + 1))

        excluded = set()
        if qgeo is not None:
            excluded = {ids[i] for i in range(n) if geotags[i] is not None
                        and haversine_oracle(qgeo, geotags[i]) <= 50.0}
        expected = rank_bruteforce(ids, base.tolist(),
                                   query32.astype(np.float64).tolist(),
                                   excluded)[:m]
        got = retrieve_similar(index, Descriptor(query32), m,
                               GeoExclusion(query_geotag=qgeo, radius_m=50.0))
        if [rid for rid, _ in got.ranked] != [rid for rid, _ in expected]:
            mismatches += 1
        elif any(abs(gd - ed) > 1e-9 for (_, gd), (_, ed)
                 in zip(got.ranked, expected)):
            mismatches += 1

    # Boundary fixtures: at the radius is out, one step past it is in,
    # missing geotags never exclude, a fully excluded index errors.
    radius = haversine_m(0.0, 0.0, 0.0, 0.0004)
    rule = GeoExclusion(query_geotag=(0.0, 0.0), radius_m=radius)
    sound = (rule.excludes((0.0, 0.0004))
             and not rule.excludes((0.0, 0.00041))
             and not rule.excludes(None)
             and not GeoExclusion(query_geotag=None).excludes((0.0, 0.0)))
    lone = DescriptorIndex(ids=["only"], matrix=np.ones((1, 4)) / 2.0,
                           geotags=[(0.0, 0.0)])
    try:
        retrieve_similar(lone, Descriptor(np.ones(4, dtype=np.float32)), 1,
                         GeoExclusion(query_geotag=(0.0, 0.0), radius_m=50.0))
        sound = False
    except NoEligibleReferencesError:
        pass
    elapsed = time.perf_counter() - t0
    report("retrieval-oracle",
           mismatches == 0 and sound and elapsed < 10.0,
           f"{100 - mismatches}/100 indices exact (ties included), "
           f"geo boundary fixtures sound={sound}, {elapsed:.2f}s (budget 10s)")


def test_iou_matches_pixel_counting():
    """500 random 16x16 prediction/truth pairs with undefined regions."""
    rng = np.random.default_rng(59)
    t0 = time.perf_counter()
    exact = 0
    none_seen = 0
    for case in range(500):
        target = int(rng.integers(0, 4))
        if case % 17 == 0:
            # No target pixels anywhere: the no-road sentinel path.
            pool = [c for c in range(4) if c != target]
            pred = rng.choice(pool, size=(16, 16)).astype(np.uint8)
            gt = rng.choice(pool, size=(16, 16)).astype(np.uint8)
        else:
            pred = rng.integers(0, 4, size=(16, 16)).astype(np.uint8)
            gt = rng.integers(0, 4, size=(16, 16)).astype(np.uint8)
        if case % 23 == 0:
            gt[:, :] = UNDEF
        else:
            gt[rng.random(size=(16, 16)) < rng.uniform(0, 0.4)] = UNDEF
        got = class_iou(pred, gt, target, UNDEF)
        want = iou_reference(pred.tolist(), gt.tolist(), target, UNDEF)
        if got == want and (got is None) == (want is None):
            exact += 1
        if want is None:
            none_seen += 1
    elapsed = time.perf_counter() - t0
    report("iou-oracle",
           exact == 500 and none_seen > 0 and elapsed < 5.0,
           f"{exact}/500 exact matches ({none_seen} sentinel frames), "
           f"{elapsed:.2f}s (budget 5s)")


def test_synthetic_end_to_end_improvement(synth_suite):
    """Pinned seed-7 suite: fusion beats the corrupted query baseline by
    >= 10 IoU points; retrieval beats the dataset-average prior."""
    t0 = time.perf_counter()
    manifest = load_manifest(synth_suite)
    cfg = EngineConfig(fusion=FusionConfig(road_class=manifest.schema.road_index))
    ctx = RunContext(manifest, cfg)
    result, failures = run_eval(ctx)
    q = result.all_average["query"]
    pq = result.all_average["prior_query"]
    po = result.all_average["prior_only"]
    da = result.all_average["dataset_avg"]
    elapsed = time.perf_counter() - t0
    report("synthetic-end-to-end",
           not failures and pq >= q + 0.10 and po > da and elapsed < 60.0,
           f"prior_query {pq:.4f} vs query {q:.4f} (gap {pq - q:+.4f}, "
           f"need >= +0.10); prior_only {po:.4f} > dataset_avg {da:.4f}; "
           f"{elapsed:.1f}s (budget 60s)")


def test_ell_insensitivity(synth_suite):
    """Sweeping the coverage-set size barely moves the fused score."""
    t0 = time.perf_counter()
    manifest = load_manifest(synth_suite)
    cfg = EngineConfig(fusion=FusionConfig(road_class=manifest.schema.road_index))
    ctx = RunContext(manifest, cfg)
    rows, failures = sweep_ell(ctx, [6, 8, 10, 15, 20])
    values = [v for _, v in rows]
    spread = max(values) - min(values)
    elapsed = time.perf_counter() - t0
    report("ell-sweep",
           not failures and len(values) == 5 and spread <= 0.02
           and elapsed < 300.0,
           f"mean IoU range [{min(values):.4f}, {max(values):.4f}], "
           f"spread {spread:.4f} (<=0.02), {elapsed:.1f}s (budget 300s)")


def test_byte_identical_reruns(synth_suite, tmp_path):
    """Fuse + eval rerun byte-for-byte, serial or with a worker pool."""
    t0 = time.perf_counter()
    runs = {}
    for name, workers in (("a", "1"), ("b", "1"), ("c", "4")):
        fuse_out = tmp_path / name / "fuse"
        eval_out = tmp_path / name / "eval"
        code = cli_main(["fuse", str(synth_suite), "--out", str(fuse_out),
                         "--workers", workers])
        code |= cli_main(["eval", str(synth_suite), "--out", str(eval_out),
                          "--workers", workers])
        assert code == 0
        files = {}
        for path in sorted((tmp_path / name).rglob("*")):
            if path.is_file():
                files[str(path.relative_to(tmp_path / name))] = path.read_bytes()
        runs[name] = files

    same_inventory = set(runs["a"]) == set(runs["b"]) == set(runs["c"])
    identical = same_inventory and all(
        runs["a"][f] == runs["b"][f] == runs["c"][f] for f in runs["a"])
    elapsed = time.perf_counter() - t0
    report("determinism",
           identical,
           f"{len(runs['a'])} artifacts byte-identical across a rerun and "
           f"workers 1 vs 4, {elapsed:.1f}s")


def test_pseudologit_softmax_inversion():
    """100 random (class count, confidence) pairs invert within 1e-9."""
    rng = np.random.default_rng(97)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 21))
        p = float(rng.uniform(0.001, 0.999))
        target = int(rng.integers(0, n))
        labels = LabelGrid(np.array([[target]], dtype=np.uint8))
        out = gt_to_pseudologits(labels, [p] * n)
        probs = softmax_reference([float(v) for v in out.values[0, 0]])
        worst = max(worst, abs(probs[target] - p))
    elapsed = time.perf_counter() - t0
    report("pseudologit-inversion",
           worst <= 1e-9,
           f"max |softmax - confidence| {worst:.2e} (<=1e-9) over 100 draws, "
           f"{elapsed:.2f}s")

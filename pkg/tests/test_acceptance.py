"""Acceptance gate: eight end-to-end checks with pinned tolerances and budgets.

Each test covers one release criterion and prints a single PASS line with the
measured numbers. Criteria 5-7 exercise the full pipeline at the default
(pinned) seed; the expected trend values hard-coded below come from a
reference run of exactly that configuration.
"""

import dataclasses
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from cbr.cascade import CascadeConfig, Detection, detect, nms, refine_proposals
from cbr.cli import main
from cbr.features import PoolingConfig, UnitFeatureTable
from cbr.intervals import CoordSystem, Interval, VideoMeta, interval_to_units, tiou
from cbr.metrics import (
    average_precision,
    average_recall_at_an,
    average_recall_at_f,
    mean_average_precision,
)
from cbr.network import ModelShape, StageModel, backward, forward, init_params, loss
from cbr.offsets import OffsetScheme, decode_offsets, encode_offsets
from cbr.pipeline import ExperimentConfig, run_inference, train_stage
from cbr.sampling import Annotation, Stage, WindowScale, assign_labels, generate_windows
from cbr.synthetic import generate_dataset


# ---------------------------------------------------------------------------
# 1. offset codec round trip


def test_01_offset_round_trip():
    t0 = time.time()
    rng = np.random.default_rng(101)
    n = 10_000
    worst = 0.0
    for scheme, system in (
        (OffsetScheme.PARAMETERIZED, CoordSystem.SECONDS),
        (OffsetScheme.BOUNDARY_FRAME, CoordSystem.FRAMES),
    ):
        for _ in range(n):
            s1, s2 = rng.uniform(0.0, 500.0, 2)
            clip = Interval(s1, s1 + rng.uniform(0.5, 100.0), system)
            gt = Interval(s2, s2 + rng.uniform(0.5, 100.0), system)
            dec = decode_offsets(clip, encode_offsets(clip, gt, scheme))
            worst = max(worst, abs(dec.start - gt.start), abs(dec.end - gt.end))
    # the unit scheme works on the rounded grid, where it must be lossless
    for _ in range(n):
        cs, gs = rng.integers(0, 200, 2)
        clip = Interval(float(cs), float(cs + rng.integers(1, 40)), CoordSystem.UNITS)
        gt = Interval(float(gs), float(gs + rng.integers(1, 40)), CoordSystem.UNITS)
        dec = decode_offsets(clip, encode_offsets(clip, gt, OffsetScheme.BOUNDARY_UNIT))
        assert dec.start == gt.start and dec.end == gt.end
    dt = time.time() - t0
    assert worst < 1e-9
    assert dt < 5.0
    print(f"[1/8] offset round-trip PASS: max err {worst:.3e} over 3x{n} pairs, {dt:.2f}s")


# ---------------------------------------------------------------------------
# 2. analytic gradients vs central differences


def test_02_gradient_check():
    t0 = time.time()
    rng = np.random.default_rng(202)
    h, worst, n_models = 1e-5, 0.0, 100
    for trial in range(n_models):
        stage = Stage.PROPOSAL if trial % 2 == 0 else Stage.DETECTION
        n_classes = 1 if stage is Stage.PROPOSAL else int(rng.integers(2, 5))
        shape = ModelShape(
            int(rng.integers(2, 9)), (int(rng.integers(2, 9)),), n_classes, stage
        )
        params = init_params(shape, rng)
        b = int(rng.integers(2, 5))
        x = rng.normal(size=(b, shape.input_dim))
        labels = rng.integers(0, n_classes + 1, size=b)
        labels[0] = n_classes  # keep at least one positive so L_reg is live
        targets = np.zeros((b, 2))
        targets[labels > 0] = rng.normal(size=(int((labels > 0).sum()), 2))

        _, grads = backward(params, shape, x, labels, targets, lam=2.0)
        for key, grad in grads.items():
            flat_p = params[key].reshape(-1)
            flat_g = grad.reshape(-1)
            for idx in range(flat_p.size):
                orig = flat_p[idx]
                flat_p[idx] = orig + h
                up = loss(forward(params, shape, x), labels, targets, 2.0)[0]
                flat_p[idx] = orig - h
                down = loss(forward(params, shape, x), labels, targets, 2.0)[0]
                flat_p[idx] = orig
                fd = (up - down) / (2 * h)
                rel = abs(flat_g[idx] - fd) / max(abs(flat_g[idx]), abs(fd), 1e-5)
                worst = max(worst, rel)
    dt = time.time() - t0
    assert worst < 1e-4
    assert dt < 60.0
    print(f"[2/8] gradient check PASS: max rel err {worst:.3e} over {n_models} models, {dt:.2f}s")


# ---------------------------------------------------------------------------
# 3. metric implementations vs brute-force oracles
#
# The oracles below re-derive everything from scratch: overlaps in exact
# rational arithmetic, rounding and rank walks in plain Python. Endpoints
# sit on a quarter grid and scores on a tenth grid so ties actually occur.


def frac_tiou(a: Interval, b: Interval) -> Fraction:
    s1, e1 = Fraction(a.start), Fraction(a.end)
    s2, e2 = Fraction(b.start), Fraction(b.end)
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0:
        return Fraction(0)
    return inter / ((e1 - s1) + (e2 - s2) - inter)


def oracle_round_units(x_seconds: float, meta: VideoMeta) -> int:
    u = math.floor(x_seconds * meta.fps / meta.unit_frames + 0.5)
    return min(max(u, 0), meta.num_units)


def oracle_assign(windows, anns, meta, pos_tiou=Fraction(1, 2)):
    views = [
        Interval(
            float(oracle_round_units(a.interval.start, meta)),
            float(oracle_round_units(a.interval.end, meta)),
            CoordSystem.UNITS,
        )
        for a in anns
    ]
    m = [[frac_tiou(w, v) for v in views] for w in windows]
    forced = set()
    for j in range(len(anns)):
        col = [m[i][j] for i in range(len(windows))]
        if not col or max(col) == 0:
            continue
        best = max(col)
        winner = min(
            (i for i in range(len(windows)) if col[i] == best),
            key=lambda i: (windows[i].start, windows[i].end - windows[i].start, i),
        )
        forced.add(winner)
    out = {}
    for i, w in enumerate(windows):
        row = m[i]
        best = max(row) if row else Fraction(0)
        if best > pos_tiou or i in forced:
            j = min(
                (j for j in range(len(anns)) if row[j] == best),
                key=lambda j: (views[j].start, j),
            )
            out[(w.start, w.end)] = anns[j].label
        elif best == 0:
            out[(w.start, w.end)] = 0
    return out


def oracle_greedy_match(ranked, anns, threshold):
    taken = [False] * len(anns)
    matched = 0
    for det in ranked:
        best, best_key = -1, None
        for j, ann in enumerate(anns):
            if taken[j]:
                continue
            ov = frac_tiou(det.interval, ann.interval)
            if ov < Fraction(threshold):
                continue
            key = (ov, -ann.interval.start, -j)
            if best_key is None or key > best_key:
                best, best_key = j, key
        if best >= 0:
            taken[best] = True
            matched += 1
    return matched


def oracle_rank(dets):
    return sorted(dets, key=lambda d: (-d.score, d.interval.start, d.interval.end, d.label))


def oracle_recall(props_by_vid, anns_by_vid, budget_of, threshold):
    total = sum(len(v) for v in anns_by_vid.values())
    matched = 0
    for vid, anns in anns_by_vid.items():
        if not anns:
            continue
        ranked = oracle_rank(props_by_vid.get(vid, []))[: max(budget_of(vid), 0)]
        matched += oracle_greedy_match(ranked, anns, threshold)
    return matched / total


def oracle_ap(dets_by_vid, anns_by_vid, label, threshold):
    n_pos = sum(1 for anns in anns_by_vid.values() for a in anns if a.label == label)
    pool = [
        (vid, d) for vid, dets in dets_by_vid.items() for d in dets if d.label == label
    ]
    pool.sort(key=lambda r: (-r[1].score, r[0], r[1].interval.start, r[1].interval.end))
    taken = {vid: [False] * len(anns) for vid, anns in anns_by_vid.items()}
    flags = []
    for vid, det in pool:
        anns = anns_by_vid.get(vid, [])
        best, best_key = -1, None
        for j, ann in enumerate(anns):
            if ann.label != label or taken[vid][j]:
                continue
            ov = frac_tiou(det.interval, ann.interval)
            if ov < Fraction(threshold):
                continue
            key = (ov, -ann.interval.start, -j)
            if best_key is None or key > best_key:
                best, best_key = j, key
        if best >= 0:
            taken[vid][best] = True
        flags.append(best >= 0)
    # all-point interpolation == mean over positives of the best precision
    # reached at or beyond that positive's recall step
    total = 0.0
    for i in range(1, n_pos + 1):
        want = Fraction(i, n_pos)
        best_prec = 0.0
        tp = 0
        for k, flag in enumerate(flags):
            tp += flag
            if Fraction(tp, n_pos) >= want:
                best_prec = max(best_prec, tp / (k + 1))
        total += best_prec
    return total / n_pos


def quarter(rng, low, high):
    return float(rng.integers(int(low * 4), int(high * 4))) / 4.0


def random_detections(rng, horizon, n, labels=(1,)):
    out = []
    for _ in range(n):
        s = quarter(rng, 0, horizon - 1)
        out.append(
            Detection(
                Interval(s, s + quarter(rng, 0.5, 6.0) + 0.25, CoordSystem.SECONDS),
                int(rng.choice(labels)),
                float(rng.integers(1, 11)) / 10.0,
            )
        )
    return out


def random_annotations(rng, horizon, n, labels=(1,)):
    out = []
    for _ in range(n):
        s = quarter(rng, 0, horizon - 2)
        out.append(
            Annotation(
                Interval(s, s + quarter(rng, 1.0, 5.0) + 0.25, CoordSystem.SECONDS),
                int(rng.choice(labels)),
            )
        )
    return out


def test_03_metric_oracles():
    t0 = time.time()
    rng = np.random.default_rng(303)
    n_inst = 200

    for _ in range(n_inst):  # tiou
        a = Interval(quarter(rng, 0, 20), quarter(rng, 20, 40), CoordSystem.SECONDS)
        b = Interval(quarter(rng, 0, 30), quarter(rng, 30, 40), CoordSystem.SECONDS)
        assert abs(tiou(a, b) - float(frac_tiou(a, b))) <= 1e-9

    for _ in range(n_inst):  # label assignment
        nu = int(rng.integers(8, 21))
        meta = VideoMeta("v", 30.0, nu * 16, 16)
        bounds = set()
        while len(bounds) < int(rng.integers(2, 6)):
            s = int(rng.integers(0, nu - 1))
            bounds.add((s, s + int(rng.integers(1, min(7, nu - s + 1)))))
        windows = [Interval(float(s), float(e), CoordSystem.UNITS) for s, e in sorted(bounds)]
        unit_sec = meta.unit_frames / meta.fps
        anns = [
            Annotation(
                Interval(s := rng.uniform(0, (nu - 7) * unit_sec),
                         s + rng.uniform(1.2, 6.0) * unit_sec, CoordSystem.SECONDS),
                int(rng.integers(1, 4)),
            )
            for _ in range(int(rng.integers(1, 4)))
        ]
        got = {(lw.window.start, lw.window.end): lw.label
               for lw in assign_labels(windows, anns, meta)}
        assert got == oracle_assign(windows, anns, meta)

    for _ in range(n_inst):  # AP, with a second class present as a distractor
        anns, dets = {}, {}
        for vid in ("a", "b")[: int(rng.integers(1, 3))]:
            anns[vid] = random_annotations(rng, 30, int(rng.integers(0, 4)), labels=(1, 2))
            dets[vid] = random_detections(rng, 30, int(rng.integers(0, 6)), labels=(1, 2))
        if not any(a.label == 1 for v in anns.values() for a in v):
            anns.setdefault("a", []).append(
                Annotation(Interval(1.0, 3.0, CoordSystem.SECONDS), 1)
            )
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        assert abs(average_precision(dets, anns, 1, thr) - oracle_ap(dets, anns, 1, thr)) <= 1e-9

    for _ in range(n_inst):  # AR at a proposal count and at a per-second budget
        metas, anns, props = {}, {}, {}
        for vid in ("a", "b"):
            metas[vid] = VideoMeta(vid, 30.0, int(rng.integers(10, 31)) * 16, 16)
            horizon = metas[vid].duration_seconds
            anns[vid] = random_annotations(rng, horizon, int(rng.integers(1, 4)))
            props[vid] = random_detections(rng, horizon, int(rng.integers(0, 6)))
        an = int(rng.integers(1, 6))
        got = average_recall_at_an(props, anns, an, 0.5)
        want = oracle_recall(props, anns, lambda _: an, 0.5)
        assert abs(got - want) <= 1e-9
        freq = float(rng.choice([0.2, 0.5, 1.0]))
        got = average_recall_at_f(props, anns, metas, freq, 0.5)
        want = oracle_recall(
            props, anns,
            lambda vid: math.floor(freq * metas[vid].duration_seconds + 0.5),
            0.5,
        )
        assert abs(got - want) <= 1e-9

    dt = time.time() - t0
    assert dt < 30.0
    print(f"[3/8] metric oracles PASS: {n_inst} instances each for "
          f"tiou/labels/AP/AR, {dt:.2f}s")


# ---------------------------------------------------------------------------
# 4. cascade score algebra, zero-offset fixed points, NMS idempotence


def random_stage_models(rng, dim, scheme):
    pshape = ModelShape(3 * dim, (6,), 1, Stage.PROPOSAL)
    dshape = ModelShape(3 * dim, (6,), 3, Stage.DETECTION)
    return (
        StageModel(init_params(pshape, rng), pshape, scheme),
        StageModel(init_params(dshape, rng), dshape, scheme),
    )


def test_04_cascade_algebra_and_nms():
    t0 = time.time()
    rng = np.random.default_rng(404)
    schemes = list(OffsetScheme)
    pooling = PoolingConfig(2)
    cfg = CascadeConfig(k_proposal=3, k_detection=2, theta=0.0)

    checked = 0
    for trial in range(18):
        meta = VideoMeta(f"v{trial}", 30.0, 16 * int(rng.integers(24, 48)), 16)
        table = UnitFeatureTable(meta, rng.normal(size=(meta.num_units, 8)).astype("<f4"))
        pmodel, dmodel = random_stage_models(rng, 8, schemes[trial % 3])
        windows = generate_windows(meta, [WindowScale(64, 32), WindowScale(128, 64)])

        props, traces = refine_proposals(table, windows, pmodel, cfg, pooling,
                                         collect_trace=True)
        for d, tr in zip(props, traces):
            assert len(tr) == cfg.k_proposal
            assert abs(d.score - math.prod(tr)) <= 1e-12
        dets, dtraces = detect(table, props, dmodel, cfg, pooling, collect_trace=True)
        for d, tr in zip(dets, dtraces):
            assert len(tr) == cfg.k_detection
            assert abs(d.score - math.prod(tr)) <= 1e-12
        checked += len(props) + len(dets)

        # a zeroed regression head must leave boundaries exactly where they began
        for model in (pmodel, dmodel):
            model.params["reg_w"][:] = 0.0
            model.params["reg_b"][:] = 0.0
        fixed = refine_proposals(table, windows, pmodel, cfg, pooling)
        bounds = {(w.start, w.end) for w in windows}
        assert len(fixed) == len(windows)
        assert all((d.interval.start, d.interval.end) in bounds for d in fixed)
        for d in detect(table, fixed, dmodel, cfg, pooling):
            assert (d.interval.start, d.interval.end) in bounds
    assert checked > 500

    n_sets = 1000
    for _ in range(n_sets):
        dets = random_detections(rng, 12, int(rng.integers(0, 12)), labels=(0, 1, 2))
        thr = float(rng.choice([0.0, 0.3, 0.5, 0.7, 1.0]))
        once = nms(dets, thr)
        assert nms(once, thr) == once

    dt = time.time() - t0
    assert dt < 10.0
    print(f"[4/8] cascade algebra PASS: {checked} scores == step products, "
          f"NMS idempotent on {n_sets} sets, {dt:.2f}s")


# ---------------------------------------------------------------------------
# 5 + 6. trend checks on the pinned default run
#
# Reference values for the default configuration (seed 0), recorded from the
# run this gate was frozen against:
#   mAP@0.5 full pipeline   1.0000      AR@F=1.0 any k_proposal   1.0000
#   mAP@0.5 zeroed offsets  0.1959      mAP@0.5 at k_detection=1  0.9434


@pytest.fixture(scope="module")
def pinned_run():
    t0 = time.time()
    cfg = ExperimentConfig()
    data = generate_dataset(cfg.synth)
    metas = {vid: t.meta for vid, t in data.tables.items()}
    pm = train_stage(cfg, Stage.PROPOSAL, data.tables, data.annotations)
    dm = train_stage(cfg, Stage.DETECTION, data.tables, data.annotations)

    def eval_at(**cascade_overrides):
        c = dataclasses.replace(
            cfg, cascade=dataclasses.replace(cfg.cascade, **cascade_overrides)
        )
        props, dets = run_inference(c, data.tables, pm, dm)
        arf = average_recall_at_f(props, data.annotations, metas, 1.0, 0.5)
        map05, _ = mean_average_precision(dets, data.annotations, 0.5)
        return arf, map05

    return {"eval_at": eval_at, "setup_seconds": time.time() - t0}


def test_05_regression_improves_detection(pinned_run):
    t0 = time.time()
    _, with_reg = pinned_run["eval_at"]()
    _, without = pinned_run["eval_at"](zero_offsets=True)
    margin = with_reg - without
    dt = pinned_run["setup_seconds"] + time.time() - t0
    assert margin > 0.0
    assert margin > 0.4  # reference run: 1.0000 - 0.1959; allow drift, not collapse
    assert dt < 600.0
    print(f"[5/8] regression trend PASS: mAP@0.5 {with_reg:.4f} with offsets vs "
          f"{without:.4f} without (margin {margin:.4f}), {dt:.1f}s")


def test_06_cascading_improves(pinned_run):
    t0 = time.time()
    map_at = {kd: pinned_run["eval_at"](k_detection=kd)[1] for kd in (1, 2)}
    ar_at = {kp: pinned_run["eval_at"](k_proposal=kp)[0] for kp in (1, 2, 3)}
    dt = pinned_run["setup_seconds"] + time.time() - t0
    assert map_at[2] >= map_at[1]
    assert ar_at[2] >= ar_at[1] and ar_at[3] >= ar_at[1]
    assert dt < 900.0
    print(f"[6/8] cascade-depth trend PASS: mAP@0.5 k_d=1..2 "
          f"{map_at[1]:.4f}->{map_at[2]:.4f}; AR@F k_p=1..3 "
          f"{ar_at[1]:.4f}/{ar_at[2]:.4f}/{ar_at[3]:.4f}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# 7. end-to-end byte determinism


def test_07_end_to_end_determinism(tmp_path):
    t0 = time.time()
    outs = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        for argv in (
            ["gen-data"],
            ["train", "--stage", "proposal"],
            ["train", "--stage", "detection"],
            ["infer"],
            ["eval"],
        ):
            assert main(argv + ["--out", str(out)]) == 0
        outs.append(out)
    a, b = outs
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "detections.json").read_bytes() == (b / "detections.json").read_bytes()
    assert (a / "proposal.ckpt").read_bytes() == (b / "proposal.ckpt").read_bytes()
    dt = time.time() - t0
    assert dt < 900.0
    print(f"[7/8] determinism PASS: two full runs byte-identical "
          f"(metrics.csv, detections.json, proposal.ckpt), {dt:.1f}s")


# ---------------------------------------------------------------------------
# 8. label-assignment guarantees


SCALE_MENU = [(32, 16), (48, 16), (64, 32), (96, 32), (128, 64)]


def test_08_label_guarantees():
    t0 = time.time()
    rng = np.random.default_rng(808)
    n_layouts = 1000
    positives = 0
    for _ in range(n_layouts):
        nu = int(rng.integers(20, 61))
        meta = VideoMeta("v", 30.0, nu * 16, 16)
        picks = rng.choice(len(SCALE_MENU), size=int(rng.integers(1, 4)), replace=False)
        windows = generate_windows(meta, [WindowScale(*SCALE_MENU[i]) for i in sorted(picks)])
        unit_sec = meta.unit_frames / meta.fps
        anns = [
            Annotation(
                Interval(s := rng.uniform(0, (nu - 7) * unit_sec),
                         s + rng.uniform(1.2, 6.0) * unit_sec, CoordSystem.SECONDS),
                int(rng.integers(1, 4)),
            )
            for _ in range(int(rng.integers(1, 4)))
        ]
        labeled = assign_labels(windows, anns, meta)
        views = [interval_to_units(a.interval, meta) for a in anns]
        pos_windows = [lw.window for lw in labeled if lw.label > 0]
        positives += len(pos_windows)
        for view in views:
            if any(frac_tiou(w, view) > 0 for w in windows):
                assert any(frac_tiou(w, view) > 0 for w in pos_windows)
        for lw in labeled:
            if lw.label == 0:
                assert all(frac_tiou(lw.window, view) == 0 for view in views)
    dt = time.time() - t0
    assert dt < 10.0
    print(f"[8/8] label guarantees PASS: {n_layouts} layouts, "
          f"{positives} positives audited, {dt:.2f}s")

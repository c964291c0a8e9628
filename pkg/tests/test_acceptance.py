"""Acceptance gates, one test per numbered criterion.

Each test checks its stated tolerance, enforces its runtime budget, and
prints one PASS line (visible with -s; under plain pytest the test name
itself is the pass/fail line).
"""

import json
import os
import random
import time
from decimal import Decimal

import numpy as np
import pytest

from kfra.bench.dataset import load_dataset
from kfra.bench.evaluate import AblationRow, EvalRuntime, ablation_grid, evaluate
from kfra.bench.report import Report, fmt2, improvement, render_ablation
from kfra.bench.synth import synth_generate
from kfra.config import load_config
from kfra.evidence import (
    DIMENSIONS,
    DiscriminativeCue,
    GroundedCue,
    ImageRef,
    Mask,
    Query,
)
from kfra.loop import LoopConfig, replay_query, run_query
from kfra.pixels import from_blob, load_image, save_image, to_blob
from kfra.stages.grounding import (
    Stage2Config,
    enhance_if_needed,
    expand_cells,
    focus_global,
    focus_local,
)
from kfra.stages.hypothesis import Stage1Config
from kfra.toggles import Toggles
from kfra.tools.cache import ResponseCache
from kfra.tools.canonical import digest_value
from kfra.tools.client import ToolClient
from kfra.tools.protocol import ToolBudget
from kfra.tools.transport import FixtureTransport, FunctionTransport, write_fixture_bundle

FULL_ROW = (74.88, 74.49, 77.55, 71.33, 75.33, 75.29)


class Budgeted:
    """Context manager that fails the test when the wall-clock budget blows."""

    def __init__(self, limit_s):
        self.limit_s = limit_s
        self.elapsed = 0.0

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.elapsed = time.perf_counter() - self._t0
        if exc_type is None:
            assert self.elapsed < self.limit_s, (
                f"runtime budget exceeded: {self.elapsed:.2f}s >= {self.limit_s}s"
            )
        return False


def records_with_accuracy(dimension, percent, n=10000):
    correct = round(percent * n / 100)
    return [
        {"id": f"{dimension}-{i}", "dimension": dimension, "correct": i < correct}
        for i in range(n)
    ]


def report_with_macro(percent, toggles):
    return Report.from_items(
        records_with_accuracy("object", percent), toggles.to_dict(), "fixed"
    )


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("acceptance-world"))
    return synth_generate(seed=7, out_dir=out, items_per_dimension=10)


def test_criterion_1_macro_average_arithmetic():
    with Budgeted(1.0) as b:
        records = []
        for dim, acc in zip(DIMENSIONS, FULL_ROW):
            records.extend(records_with_accuracy(dim, acc))
        report = Report.from_items(records, Toggles().to_dict(), "fixed")
        for dim, acc in zip(DIMENSIONS, FULL_ROW):
            assert abs(report.per_dimension[dim]["accuracy"] - acc) < 1e-9
        assert abs(report.macro_avg - 74.81) < 0.005
        assert fmt2(report.macro_avg) == "74.81"
    print(f"\nacceptance 1 PASS  macro_avg={report.macro_avg:.4f} (74.81 +/- 0.005)  [{b.elapsed:.2f}s]")


def test_criterion_2_improvement_arithmetic():
    with Budgeted(1.0) as b:
        baseline = report_with_macro(48.64, Toggles.all_off())
        full = report_with_macro(67.78, Toggles())
        assert fmt2(baseline.macro_avg) == "48.64"
        assert fmt2(full.macro_avg) == "67.78"
        delta = improvement(full.macro_avg, baseline.macro_avg)
        assert delta == Decimal("19.14")
        rows = [
            AblationRow(Toggles.all_off().to_dict(), baseline, Decimal("0.00")),
            AblationRow(Toggles().to_dict(), full, delta),
        ]
        text = render_ablation(rows)
        assert text.splitlines()[2].split()[-2:] == ["67.78", "+19.14"]
    print(f"\nacceptance 2 PASS  improvement=+{delta} (exactly +19.14)  [{b.elapsed:.2f}s]")


def test_criterion_3_microworld_end_to_end(tmp_path):
    with Budgeted(30.0) as b:
        result = synth_generate(seed=7, out_dir=str(tmp_path / "world"), items_per_dimension=10)
        items = load_dataset(result.dataset_path)
        assert len(items) >= 60
        assert {i.dimension for i in items} == set(DIMENSIONS)

        cfg = load_config(result.config_path)
        rows = ablation_grid(items, cfg.runtime(image_root=result.out_dir, jobs=1))

        all_on, all_off = rows[-1], rows[0]
        assert fmt2(all_on.report.macro_avg) == "100.00"
        for row in rows[1:-1]:
            assert row.report.macro_avg < all_on.report.macro_avg
            assert row.report.macro_avg >= all_off.report.macro_avg

        lines = render_ablation(rows).splitlines()
        assert len(lines) == 8
        assert lines[0].split() == ["KR", "VS", "OD", "GF", "SR", "macro", "imp"]
        assert lines[1].split()[:5] == ["-"] * 5
        assert lines[7].split()[:5] == ["x"] * 5
        for i in range(5):
            marks = lines[2 + i].split()[:5]
            assert marks == ["x"] * i + ["-"] + ["x"] * (4 - i)
    macros = [fmt2(r.report.macro_avg) for r in rows]
    print(f"\nacceptance 3 PASS  grid={macros}  [{b.elapsed:.2f}s]")


def constant_embed_body(body):
    rows, cols = body["grid"]["rows"], body["grid"]["cols"]
    vec = [1.0, 0.0, 0.0, 0.0]
    return {"text_vecs": [vec], "patch_vecs": [[vec] * cols for _ in range(rows)]}


def upscale_body(body):
    pixels = from_blob(body["image_crop"])
    scale = body["scale"]
    big = np.repeat(np.repeat(pixels, scale, axis=0), scale, axis=1)
    return {"image_crop": to_blob(big)}


def test_criterion_4_gate_and_best_cue_selection():
    calls = {"enhance": 0}
    last_enhance_body = {}

    def handler(request):
        if request.kind == "embed":
            return constant_embed_body(request.body)
        assert request.kind == "enhance"
        calls["enhance"] += 1
        last_enhance_body.clear()
        last_enhance_body.update(request.body)
        return upscale_body(request.body)

    client = ToolClient(FunctionTransport(handler), ToolBudget())
    crop = np.linspace(0.0, 1.0, 64, dtype=np.float64).reshape(8, 8, 1)
    rng = random.Random(40)
    violations = 0

    with Budgeted(5.0) as b:
        for _ in range(1000):
            n = rng.randint(1, 4)
            scores = [rng.random() for _ in range(n)]
            if n >= 2 and rng.random() < 0.3:
                scores[rng.randrange(n)] = max(scores)  # force a tie sometimes
            tau = rng.uniform(0.05, 1.0)
            sr_on = rng.random() < 0.5

            grounded = []
            for i in range(n):
                grid = np.zeros((1, n))
                grid[0, i] = 1.0
                grounded.append(GroundedCue(
                    cue=DiscriminativeCue(index=i, phrase=f"cue {i}", kind="colour"),
                    mask=Mask(grid, "coarse", (0.0, 0.0, 1.0, 1.0)),
                    score=scores[i],
                ))

            cfg = Stage2Config(coarse_grid=(2, 2), fine_grid=(4, 4), tau=tau, enhance_scale=2)
            toggles = Toggles() if sr_on else Toggles().without("sr")
            before = calls["enhance"]
            _, _, invoked = enhance_if_needed(
                client, crop, (0.0, 0.0, 1.0, 1.0), grounded, cfg, toggles
            )

            expected = sr_on and max(scores) < tau
            if invoked != expected or calls["enhance"] - before != int(expected):
                violations += 1
                continue
            if expected:
                star = scores.index(max(scores))
                if last_enhance_body["mask"] != grounded[star].mask.to_dict():
                    violations += 1

        assert violations == 0
    print(f"\nacceptance 4 PASS  1000 trials, {calls['enhance']} enhancements, 0 violations  [{b.elapsed:.2f}s]")


def dilate_cells(support, radius):
    h, w = support.shape
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            if support[r, c]:
                out[max(0, r - radius):r + radius + 1, max(0, c - radius):c + radius + 1] = True
    return out


def test_criterion_5_focusing_geometry():
    vec_rng = np.random.default_rng(51)

    def handler(request):
        if request.kind == "embed":
            rows, cols = request.body["grid"]["rows"], request.body["grid"]["cols"]
            raw = vec_rng.normal(size=(1 + rows * cols, 6))
            unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
            patches = unit[1:].reshape(rows, cols, 6)
            return {
                "text_vecs": [unit[0].tolist()],
                "patch_vecs": [[patches[r, c].tolist() for c in range(cols)] for r in range(rows)],
            }
        return upscale_body(request.body)

    client = ToolClient(FunctionTransport(handler), ToolBudget())
    rng = random.Random(50)
    origin = (0.0, 0.0, 1.0, 1.0)

    with Budgeted(10.0) as b:
        for trial in range(500):
            coarse_grid = (rng.randint(2, 4), rng.randint(2, 4))
            cfg = Stage2Config(
                coarse_grid=coarse_grid,
                fine_grid=(coarse_grid[0] + rng.randint(1, 4), coarse_grid[1] + rng.randint(1, 4)),
                support_level=rng.uniform(0.3, 0.9),
                dilation_radius=rng.randint(0, 2),
                tau=1.0,
                enhance_scale=2,
            )
            side = rng.randint(8, 16)
            crop = np.random.default_rng(trial).uniform(size=(side, side, 1))
            cue = DiscriminativeCue(index=0, phrase=f"trial cue {trial}", kind="structure")

            heat, coarse, peak = focus_global(client, crop, cue, cfg, origin)
            assert heat.grid.min() >= 0.0 and heat.grid.max() <= 1.0
            assert 0.0 <= peak <= 1.0

            g = focus_local(client, crop, coarse, cue, cfg)
            fr, fc = cfg.fine_grid
            coarse_support = coarse.grid >= cfg.support_level * float(coarse.grid.max())
            allowed = expand_cells(
                dilate_cells(coarse_support, cfg.dilation_radius).astype(np.float64), fr, fc
            ).astype(bool)
            if g.mask.provenance == "refined":
                refined = g.mask.grid.astype(bool)
                assert not (refined & ~allowed).any()
            else:
                assert g.mask.provenance == "coarse"

            before = [g.score]
            _, merged, invoked = enhance_if_needed(client, crop, origin, [g], cfg, Toggles())
            if invoked:
                for old, new in zip(before, merged):
                    assert new.score >= old
    print(f"\nacceptance 5 PASS  500 trials, geometry invariants hold  [{b.elapsed:.2f}s]")


def adversarial_bundle(bundle_dir):
    """Every tool responds, but the answer confidence is always zero."""
    vec = [1.0, 0.0, 0.0]
    embed_rules = []
    for rows, cols in ((7, 7), (14, 14)):
        embed_rules.append({
            "when": {"equals": {"grid.rows": rows, "grid.cols": cols}},
            "respond": {"text_vecs": [vec], "patch_vecs": [[vec] * cols for _ in range(rows)]},
        })
    write_fixture_bundle(
        bundle_dir,
        {},
        rules_by_kind={
            "detect": [{"respond": {"regions": [
                {"bbox": [0.25, 0.25, 0.75, 0.75], "score": 0.9}
            ]}}],
            "image_search": [{"respond": {"exemplars": [
                {
                    "image": {"source": f"ref/{i}.json", "width": 4, "height": 4},
                    "caption": f"reference {i}",
                    "source_url": f"local://ref/{i}",
                    "rank": i,
                }
                for i in (1, 2, 3)
            ]}}],
            "text_search": [{"respond": {"snippets": [
                {"category": "", "text": "inconclusive field notes", "source": "local://kb"}
            ]}}],
            "embed": embed_rules,
            "reason": [
                {"when": {"equals": {"mode": "candidates"}},
                 "respond": {"candidates": [{"category": "unknown finch", "confidence": 0.8}]}},
                {"when": {"equals": {"mode": "cues"}},
                 "respond": {"cues": [{"phrase": "mottled crown", "kind": "pattern"}]}},
                {"when": {"equals": {"mode": "answer"}},
                 "respond": {"probs": {"unknown finch": 0.0}, "rationale": "never certain"}},
            ],
        },
    )


def test_criterion_6_loop_termination_and_replay(tmp_path):
    bundle = str(tmp_path / "bundle")
    adversarial_bundle(bundle)
    image_path = str(tmp_path / "img.json")
    save_image(image_path, np.linspace(0.0, 1.0, 256, dtype=np.float64).reshape(16, 16, 1))
    pixels = load_image(image_path)
    ref = ImageRef(source=image_path, width=16, height=16)
    query = Query(question="what species is this?", choices=None, dimension="object")
    loop = LoopConfig()

    with Budgeted(5.0) as b:
        client = ToolClient(
            FixtureTransport(bundle), ToolBudget(),
            cache=ResponseCache(str(tmp_path / "cache-a")),
        )
        result = run_query(
            client, ref, pixels, query, Stage1Config(), Stage2Config(), loop, Toggles()
        )
        assert result.iterations_used == loop.max_iterations
        assert result.answer.confidence == 0.0
        outcomes = [e.outcome for e in result.trace.events]
        assert "budget_exhausted" not in outcomes
        done = [e for e in result.trace.events if e.summary.get("event") == "iteration_done"]
        assert len(done) == loop.max_iterations

        def factory(budget, cache_enabled):
            cache = ResponseCache(str(tmp_path / "cache-b")) if cache_enabled else None
            return ToolClient(FixtureTransport(bundle), budget, cache=cache)

        replayed = replay_query(result.trace, factory)
        assert digest_value(replayed.to_dict()) == digest_value(result.to_dict())
    print(f"\nacceptance 6 PASS  {result.iterations_used} iterations, replay bit-identical  [{b.elapsed:.2f}s]")


def test_criterion_7_cache_determinism(world, tmp_path):
    items = load_dataset(world.dataset_path)
    cfg = load_config(world.config_path)
    cache = ResponseCache(str(tmp_path / "cache"), ttl_s=cfg.cache_ttl_s)

    def runtime_over(transport):
        return EvalRuntime(
            client_factory=lambda: ToolClient(transport, cfg.budget, cache=cache),
            stage1=cfg.stage1,
            stage2=cfg.stage2,
            loop=cfg.loop,
            image_root=world.out_dir,
            config_digest=cfg.digest,
        )

    with Budgeted(60.0) as b:
        first_transport = FixtureTransport(world.fixture_dir)
        report_1 = evaluate(items, runtime_over(first_transport), Toggles())
        assert first_transport.send_count > 0

        second_transport = FixtureTransport(world.fixture_dir)
        report_2 = evaluate(items, runtime_over(second_transport), Toggles())

        bytes_1 = json.dumps(report_1.to_dict(), sort_keys=True).encode()
        bytes_2 = json.dumps(report_2.to_dict(), sort_keys=True).encode()
        assert bytes_1 == bytes_2
        assert second_transport.send_count == 0
    print(f"\nacceptance 7 PASS  reports byte-identical, warm run sent 0 requests  [{b.elapsed:.2f}s]")


def test_criterion_8_toggle_isolation(world):
    items = load_dataset(world.dataset_path)
    cfg = load_config(world.config_path)
    skipped_kind = {
        "kr": "text_search",
        "vs": "image_search",
        "od": "detect",
        "gf": "embed",
        "sr": "enhance",
    }
    with Budgeted(30.0) as b:
        counts = {}
        for name, kind in skipped_kind.items():
            report = evaluate(
                items, cfg.runtime(image_root=world.out_dir), Toggles().without(name)
            )
            counts[name] = sum(r["calls_by_kind"][kind] for r in report.per_item)
        assert counts == {name: 0 for name in skipped_kind}
    print(f"\nacceptance 8 PASS  every disabled tool saw 0 invocations  [{b.elapsed:.2f}s]")

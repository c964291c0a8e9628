"""Command-line front end.

Exit codes: 0 success, 2 the query ran but produced no answer, 3 bad
configuration or unusable input.
"""

import json
import os
import sys

import click

from .bench.dataset import load_dataset
from .bench.evaluate import ablation_grid, evaluate
from .bench.report import fmt2, fmt_improvement, render_ablation, render_report
from .bench.synth import synth_generate
from .config import ENV_CONFIG, load_config
from .errors import ConfigError, DatasetError, QueryFailed
from .evidence import DIMENSIONS, ImageRef, Query
from .loop import run_query
from .pixels import load_image
from .toggles import Toggles
from .tools.cache import ResponseCache
from .tools.protocol import TOOL_KINDS

TOGGLE_FLAGS = ("kr", "vs", "od", "gf", "sr")


def config_options(fn):
    fn = click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="override one config value; repeatable, dotted keys allowed",
    )(fn)
    fn = click.option(
        "--config",
        "config_path",
        envvar=ENV_CONFIG,
        metavar="PATH",
        help="config file (default: $KFRA_CONFIG, else built-in defaults)",
    )(fn)
    return fn


def toggle_options(fn):
    for name in reversed(TOGGLE_FLAGS):
        fn = click.option(
            f"--no-{name}", f"no_{name}", is_flag=True, help=f"disable the {name} tool"
        )(fn)
    return fn


def build_toggles(kwargs) -> Toggles:
    toggles = Toggles()
    for name in TOGGLE_FLAGS:
        if kwargs.pop(f"no_{name}"):
            toggles = toggles.without(name)
    return toggles


@click.group()
def cli():
    """Knowledge-augmented visual reasoning over pluggable tool endpoints."""


@cli.command("run")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("question")
@click.option("--choice", "choices", multiple=True, help="answer choice; give two or more")
@click.option("--dimension", type=click.Choice(DIMENSIONS), default=None)
@click.option("--trace-out", metavar="PATH", help="write the reasoning trace as JSON lines")
@config_options
@toggle_options
def cmd_run(image, question, choices, dimension, trace_out, config_path, overrides, **kwargs):
    """Answer one question about one image."""
    toggles = build_toggles(kwargs)
    if choices and len(choices) < 2:
        raise click.UsageError("--choice must be given at least twice or not at all")
    cfg = load_config(config_path, overrides)
    query = Query(question=question, choices=tuple(choices) or None, dimension=dimension)
    pixels = load_image(image)
    ref = ImageRef(source=image, width=pixels.shape[1], height=pixels.shape[0])
    result = run_query(
        cfg.make_client(), ref, pixels, query, cfg.stage1, cfg.stage2, cfg.loop, toggles
    )
    click.echo(f"answer      {result.answer.best}")
    click.echo(f"confidence  {result.answer.confidence:.4f}")
    click.echo(f"iterations  {result.iterations_used}")
    for ev in result.evidence:
        entity = ev.entity
        click.echo(f"entity      bbox=({entity.bbox[0]:.3f}, {entity.bbox[1]:.3f}, "
                   f"{entity.bbox[2]:.3f}, {entity.bbox[3]:.3f}) score={entity.score:.2f}")
        for cand, snippets, cues in ev.per_candidate:
            grounded = max((c.score for c in cues), default=0.0)
            click.echo(
                f"  {cand.category:<28}conf={cand.confidence:.2f}"
                f"  snippets={len(snippets)}  cues={len(cues)}  top_heat={grounded:.2f}"
            )
    if trace_out:
        result.trace.write_jsonl(trace_out)
        click.echo(f"trace       {trace_out}")


@cli.command("eval")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--image-root", metavar="DIR", default=None,
              help="directory image sources resolve against (default: the dataset's)")
@click.option("--report-out", metavar="PATH", help="also write the full report as JSON")
@click.option("--jobs", type=click.IntRange(1), default=1, show_default=True)
@config_options
@toggle_options
def cmd_eval(dataset, image_root, report_out, jobs, config_path, overrides, **kwargs):
    """Evaluate a JSON-lines dataset and print the accuracy table."""
    toggles = build_toggles(kwargs)
    cfg = load_config(config_path, overrides)
    items = load_dataset(dataset)
    if image_root is None:
        image_root = os_dirname(dataset)
    report = evaluate(items, cfg.runtime(image_root=image_root, jobs=jobs), toggles)
    click.echo(render_report(report), nl=False)
    if report_out:
        write_json(report_out, report.to_dict())


@cli.command("ablate")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--image-root", metavar="DIR", default=None,
              help="directory image sources resolve against (default: the dataset's)")
@click.option("--report-out", metavar="PATH", help="also write the grid as JSON")
@click.option("--jobs", type=click.IntRange(1), default=1, show_default=True)
@config_options
def cmd_ablate(dataset, image_root, report_out, jobs, config_path, overrides):
    """Run the seven-row toggle grid and print macro accuracy per row."""
    cfg = load_config(config_path, overrides)
    items = load_dataset(dataset)
    if image_root is None:
        image_root = os_dirname(dataset)
    rows = ablation_grid(items, cfg.runtime(image_root=image_root, jobs=jobs))
    click.echo(render_ablation(rows), nl=False)
    if report_out:
        payload = [
            {
                "toggles": row.toggles,
                "macro_avg": fmt2(row.report.macro_avg),
                "improvement": fmt_improvement(row.improvement),
                "report": row.report.to_dict(),
            }
            for row in rows
        ]
        write_json(report_out, payload)


@cli.command("synth")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--items-per-dimension", type=click.IntRange(2), default=10, show_default=True)
def cmd_synth(out_dir, seed, items_per_dimension):
    """Generate the self-contained benchmark: images, dataset, fixtures."""
    result = synth_generate(seed=seed, out_dir=out_dir, items_per_dimension=items_per_dimension)
    click.echo(f"dataset     {result.dataset_path}")
    click.echo(f"fixtures    {result.fixture_dir}")
    click.echo(f"config      {result.config_path}")
    click.echo(f"items       {len(result.items)}")


@cli.group("tools")
def cmd_tools():
    """Inspect the configured tool endpoints."""


@cmd_tools.command("check")
@config_options
def cmd_tools_check(config_path, overrides):
    """Ping every tool endpoint and report ok/degraded/down."""
    cfg = load_config(config_path, overrides)
    client = cfg.make_client()
    worst = 0
    for kind in TOOL_KINDS:
        health = client.health_check(kind)
        rtt = "-" if health["rtt_ms"] is None else f"{health['rtt_ms']:.1f}ms"
        click.echo(f"{kind:<14}{health['state']:<10}{rtt}")
        if health["state"] == "down":
            worst = 1
    if worst:
        raise SystemExit(worst)


@cli.group("cache")
def cmd_cache():
    """Maintain the on-disk response cache."""


def open_cache(config_path, overrides) -> ResponseCache:
    cfg = load_config(config_path, overrides)
    return ResponseCache(cfg.cache_dir, ttl_s=cfg.cache_ttl_s)


@cmd_cache.command("clear")
@config_options
def cmd_cache_clear(config_path, overrides):
    """Delete every cached response."""
    click.echo(f"removed {open_cache(config_path, overrides).clear()} entries")


@cmd_cache.command("gc")
@config_options
def cmd_cache_gc(config_path, overrides):
    """Delete cached responses past their time-to-live."""
    click.echo(f"expired {open_cache(config_path, overrides).gc()} entries")


@cmd_cache.command("stats")
@config_options
def cmd_cache_stats(config_path, overrides):
    """Print entry count, byte size, and hit counters as JSON."""
    stats = open_cache(config_path, overrides).stats()
    click.echo(json.dumps(stats, indent=2, sort_keys=True))


def os_dirname(path: str) -> str:
    return os.path.dirname(os.path.abspath(path))


def write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(3)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except QueryFailed as exc:
        click.echo(f"query failed: {exc}", err=True)
        sys.exit(2)
    except (ConfigError, DatasetError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    return 0


if __name__ == "__main__":
    sys.exit(main())

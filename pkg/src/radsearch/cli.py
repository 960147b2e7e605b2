"""Operator command line.

Binds the library modules into one tool: index building from JSON Lines,
ad-hoc searches, running the HTTP service with its refresh scheduler,
account provisioning, and the evaluation / latency-benchmark drivers.

Exit codes: 0 success, 1 user error (bad input, rejected records,
missing files), 2 internal error.
"""

from __future__ import annotations

import json
import os
import sys
import time as _time
from datetime import datetime, timezone

import click

from . import evaluation, ingest, service
from .config import CONFIG_ENV, AppConfig, ConfigError, load_config
from .engine import SearchEngine
from .querylang import FilterSpec, QueryError, QueryRejected
from .index import to_utc

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


class UserError(click.ClickException):
    exit_code = EXIT_USER


def _load_cfg(ctx) -> AppConfig:
    return ctx.obj["config"]


def _open_engine(cfg: AppConfig, must_exist: bool) -> SearchEngine:
    path = cfg.index_dir
    if os.path.exists(os.path.join(path, "manifest.json")):
        engine = SearchEngine.load(path, weights=cfg.weights, limits=cfg.limits)
        return engine
    if must_exist:
        raise UserError(f"no index at {path} (run `radsearch index` first)")
    return SearchEngine.with_default_schema(weights=cfg.weights, limits=cfg.limits)


@click.group()
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None,
              type=click.Path(), help="TOML configuration file.")
@click.option("--data-dir", default=None, type=click.Path(),
              help="Override the configured data directory.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def cli(ctx, config_path, data_dir, verbose):
    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError) as exc:
        raise UserError(f"configuration: {exc}") from exc
    if data_dir:
        cfg.data_dir = data_dir
    ctx.ensure_object(dict)
    ctx.obj["config"] = cfg
    ctx.obj["verbose"] = verbose


# -- index ------------------------------------------------------------------


@cli.command("index")
@click.argument("input_path", type=click.Path(exists=False))
@click.option("--allow-rejects", is_flag=True,
              help="Exit 0 even when records were rejected.")
@click.pass_context
def cmd_index(ctx, input_path, allow_rejects):
    """Ingest a JSON Lines file or directory into the index."""
    cfg = _load_cfg(ctx)
    if not os.path.exists(input_path):
        raise UserError(f"unreadable input: {input_path}")
    engine = _open_engine(cfg, must_exist=False)
    source = ingest.DirectorySource(input_path)
    files = source.files()
    if not files:
        raise UserError(f"no .jsonl files under {input_path}")

    total_rejected = 0
    click.echo(f"{'file':<40} {'read':>6} {'upserted':>9} {'rejected':>9}")
    for path in files:
        try:
            records = ingest.read_jsonl(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise UserError(f"{path}: {exc}") from exc
        batch = ingest.IngestBatch(os.path.basename(path), records,
                                   received_at=datetime.now(timezone.utc),
                                   source=path)
        stats = ingest.ingest_batch(engine, batch, cfg.canonicalize)
        total_rejected += stats.rejected
        click.echo(f"{os.path.basename(path):<40} {stats.read:>6} "
                   f"{stats.upserted:>9} {stats.rejected:>9}")
        for reason, n in sorted(stats.reject_reasons.items()):
            click.echo(f"    {reason}: {n}")
    os.makedirs(cfg.index_dir, exist_ok=True)
    engine.save(cfg.index_dir)
    click.echo(f"index saved to {cfg.index_dir} "
               f"({engine.snapshot().doc_count} documents)")
    if total_rejected and not allow_rejects:
        ctx.exit(EXIT_USER)


# -- search -----------------------------------------------------------------


def _caret_message(query: str, exc: QueryError) -> str:
    lines = [str(exc), f"  {query}"]
    if exc.position is not None:
        lines.append("  " + " " * exc.position + "^")
    return "\n".join(lines)


def search_response(engine: SearchEngine, q: str, *, page: int,
                    filters: FilterSpec, explain: bool,
                    viewer_url_template: str = "",
                    now: datetime | None = None) -> dict:
    """Same content as the HTTP /search response, for --json parity."""
    started = _time.perf_counter()
    result = engine.search(q, filters=filters, page=page, now=now)
    elapsed_ms = (_time.perf_counter() - started) * 1000.0
    snap = engine.snapshot()
    hits = []
    for hit in result.hits:
        doc = snap.get_document(hit.doc_id)
        row = {
            "doc_id": hit.doc_id,
            "score": hit.total_score,
            "fields": service._jsonable(doc.fields if doc else {}),
            "matched_terms": hit.matched_terms,
        }
        link = service.image_link(hit.doc_id, viewer_url_template)
        if link:
            row["image_link"] = link
        if explain:
            row["breakdown"] = hit.breakdown
        hits.append(row)
    return {
        "hits": hits,
        "page": result.page_number,
        "per_page": result.per_page,
        "total_hits": result.total_hits,
        "total_pages": result.total_pages,
        "elapsed_ms": elapsed_ms,
    }


@cli.command("search")
@click.argument("query")
@click.option("--page", default=1, show_default=True)
@click.option("--modality", default=None, help="Comma-separated modality filter.")
@click.option("--from", "time_from", default=None, help="Earliest study datetime.")
@click.option("--to", "time_to", default=None, help="Latest study datetime.")
@click.option("--collapse", default=None, help="Collapse results by this field.")
@click.option("--explain", is_flag=True, help="Show the score breakdown.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def cmd_search(ctx, query, page, modality, time_from, time_to, collapse,
               explain, as_json):
    """Run one query against the saved index and print a page of results."""
    cfg = _load_cfg(ctx)
    if page < 1:
        raise UserError("--page must be >= 1")
    engine = _open_engine(cfg, must_exist=True)
    try:
        filters = FilterSpec(
            modality=frozenset(m for m in (modality or "").split(",") if m) or None,
            time_from=to_utc(time_from) if time_from else None,
            time_to=to_utc(time_to) if time_to else None,
            collapse_field=collapse or None,
        )
        response = search_response(
            engine, query, page=page, filters=filters, explain=explain,
            viewer_url_template=cfg.service.viewer_url_template)
    except (QueryRejected, QueryError) as exc:
        raise UserError(_caret_message(query, exc)) from exc
    except ValueError as exc:
        raise UserError(str(exc)) from exc

    if as_json:
        click.echo(json.dumps(response, indent=2))
        return
    click.echo(f"{response['total_hits']} hits "
               f"(page {response['page']}/{response['total_pages']}, "
               f"{response['elapsed_ms']:.1f} ms)")
    for row in response["hits"]:
        fields = row["fields"]
        click.echo(f"  {row['score']:8.3f}  {row['doc_id']}  "
                   f"{fields.get('StudyDescription', '')}")
        if row["matched_terms"]:
            click.echo(f"            matched: {', '.join(row['matched_terms'])}")
        if explain:
            parts = ", ".join(f"{k}={v:.3f}" for k, v in row["breakdown"].items())
            click.echo(f"            {parts}")


# -- serve ------------------------------------------------------------------


@cli.command("serve")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@click.option("--no-schedule", is_flag=True, help="Disable the refresh scheduler.")
@click.pass_context
def cmd_serve(ctx, host, port, no_schedule):
    """Run the HTTP service (and the ingestion scheduler) until interrupted."""
    import uvicorn

    cfg = _load_cfg(ctx)
    engine = _open_engine(cfg, must_exist=False)
    scheduler = None
    if not no_schedule:
        incoming = os.path.join(cfg.data_dir, "incoming")
        os.makedirs(incoming, exist_ok=True)
        scheduler = ingest.Scheduler(engine, ingest.DirectorySource(incoming),
                                     schedule=cfg.schedule,
                                     config=cfg.canonicalize)
        scheduler.start()
    app = service.create_app(engine, cfg.service, scheduler=scheduler)
    try:
        uvicorn.run(app, host=host or cfg.host, port=port or cfg.port,
                    log_level="warning")
    except OSError as exc:
        raise UserError(f"cannot bind {host or cfg.host}:{port or cfg.port}: {exc}")
    finally:
        if scheduler is not None:
            scheduler.stop()


# -- user -------------------------------------------------------------------


@cli.group("user")
def cmd_user():
    """Account provisioning."""


@cmd_user.command("add")
@click.argument("username")
@click.option("--tier", "tiers", multiple=True, required=True,
              type=click.Choice(sorted(service.TIER_ORDER) + [service.ADMIN_TIER]))
@click.option("--password", prompt=True, hide_input=True)
@click.option("--protocol-tag", default="",
              help="IRB protocol tag (required for researcher accounts).")
@click.pass_context
def cmd_user_add(ctx, username, tiers, password, protocol_tag):
    cfg = _load_cfg(ctx)
    users_path = cfg.service.users_path or os.path.join(cfg.data_dir, "users.json")
    os.makedirs(os.path.dirname(users_path) or ".", exist_ok=True)
    store = service.UserStore(users_path)
    try:
        store.add(username, password, tuple(tiers), protocol_tag=protocol_tag)
    except service.ServiceError as exc:
        raise UserError(exc.reason) from exc
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    click.echo(f"added {username} ({', '.join(tiers)}) to {users_path}")


# -- eval -------------------------------------------------------------------


@cli.group("eval")
def cmd_eval():
    """Clinical-validation scenarios and latency benchmarks."""


@cmd_eval.command("run")
@click.option("--scenario", "scenario_file", default=None, type=click.Path(),
              help="Scenario definition JSON (default: built-in generator).")
@click.option("--seed", default=7, show_default=True)
@click.option("--out-dir", default="eval-out", show_default=True,
              type=click.Path())
@click.pass_context
def cmd_eval_run(ctx, scenario_file, seed, out_dir):
    """Run refinement scenarios; write one CSV per scenario."""
    cfg = _load_cfg(ctx)
    if scenario_file is not None:
        if not os.path.exists(scenario_file):
            raise UserError(f"missing scenario file: {scenario_file}")
        engine = _open_engine(cfg, must_exist=True)
        try:
            scenarios = evaluation.load_scenarios(scenario_file)
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise UserError(f"malformed scenario file: {exc}") from exc
    else:
        docs, scenarios = evaluation.generate_corpus(seed=seed)
        engine = SearchEngine.with_default_schema(weights=cfg.weights,
                                                  limits=cfg.limits)
        for doc in docs:
            engine.upsert(doc)
        engine.commit()

    os.makedirs(out_dir, exist_ok=True)
    all_pass = True
    final_specs = []
    for scenario in scenarios:
        try:
            points = evaluation.run_scenario(scenario, engine)
        except evaluation.ScenarioAborted as exc:
            raise UserError(str(exc)) from exc
        evaluation.write_points_csv(
            points, os.path.join(out_dir, f"{scenario.name}.csv"))
        final = points[-1]
        ok = final.sensitivity == 1.0
        all_pass = all_pass and ok
        final_specs.append(final.specificity)
        click.echo(f"{'PASS' if ok else 'FAIL'} {scenario.name}: "
                   f"final sensitivity={final.sensitivity:.3f} "
                   f"specificity={final.specificity:.3f} "
                   f"({len(points)} refinement steps)")
    mean_spec = sum(final_specs) / len(final_specs)
    spec_ok = mean_spec >= 0.95
    all_pass = all_pass and spec_ok
    click.echo(f"{'PASS' if spec_ok else 'FAIL'} mean final specificity "
               f"{mean_spec:.3f} (threshold 0.95)")
    if not all_pass:
        ctx.exit(EXIT_USER)


@cmd_eval.command("bench")
@click.option("--docs", "n_docs", default=100_000, show_default=True)
@click.option("--queries", "queries_file", default=None, type=click.Path(),
              help="Query file, one per line (default: generated workload).")
@click.option("--n-queries", default=500, show_default=True)
@click.option("--seed", default=11, show_default=True)
@click.option("--out", default="latency.csv", show_default=True,
              type=click.Path())
def cmd_eval_bench(n_docs, queries_file, n_queries, seed, out):
    """Index a synthetic corpus and measure latency vs result count."""
    if queries_file is not None:
        if not os.path.exists(queries_file):
            raise UserError(f"missing query file: {queries_file}")
        with open(queries_file, encoding="utf-8") as fh:
            queries = [line.strip() for line in fh if line.strip()]
    else:
        queries = evaluation.benchmark_queries(n_queries, seed=seed + 2)
    if not queries:
        raise UserError("empty query workload")

    click.echo(f"indexing {n_docs} synthetic documents ...")
    engine = SearchEngine.with_default_schema()
    for doc in evaluation.generate_benchmark_corpus(n_docs, seed=seed):
        engine.upsert(doc)
    engine.commit()
    click.echo(f"running {len(queries)} queries ...")
    report = evaluation.latency_benchmark(engine, queries)
    evaluation.write_latency_csv(report, out)
    ci = 1.96 * report.slope_stderr
    click.echo(f"slope {report.slope:.6f} ms/result "
               f"(95% CI {report.slope - ci:.6f}..{report.slope + ci:.6f}, "
               f"p={report.p_value:.3g})")
    click.echo(f"latency mean {report.mean_ms:.1f} +/- {report.sem_ms:.1f} ms "
               f"(SEM), median {report.p50_ms:.1f} ms")
    click.echo(f"samples written to {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USER
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code if isinstance(exc, UserError) else EXIT_USER
    except (QueryError, service.ServiceError, ConfigError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USER
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc!r}", err=True)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

"""`urba`: thin HTTP client over the orchestrator service.

Every command builds a request against the service API. By default the
app is served in-process (httpx ASGI transport), so one-shot commands work
without a running server; pass --server URL (or set URBA_SERVER) to talk
to a remote `urba serve`. Exit codes: 0 success, 1 invalid input,
2 backend failure.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

EXIT_INVALID = 1
EXIT_BACKEND = 2


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    from .service import create_app

    transport = httpx.ASGITransport(app=create_app())
    return httpx.Client(transport=transport, base_url="http://urba.local", timeout=600.0)


def _backends_spec(backends: str | None, fixture: str | None) -> dict:
    spec: dict = {"kind": "auto"}
    if backends == "mock" or fixture:
        spec["kind"] = "mock"
    elif backends:
        spec = {"kind": "http", "config": backends}
    if fixture:
        spec["fixture"] = fixture
    return spec


def _call(ctx: click.Context, method: str, path: str, payload: dict | None = None) -> dict:
    try:
        with _client(ctx.obj.get("server")) as client:
            resp = client.request(method, path, json=payload)
    except httpx.HTTPError as exc:
        click.echo(f"error: service unreachable: {exc}", err=True)
        sys.exit(EXIT_BACKEND)
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
        message = f"{body.get('code', 'error')}: {body.get('message', resp.text)}"
    except Exception:
        message = f"HTTP {resp.status_code}: {resp.text[:500]}"
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_BACKEND if resp.status_code >= 500 else EXIT_INVALID)


def _emit(data: dict) -> None:
    click.echo(json.dumps(data, ensure_ascii=False, indent=2))


@click.group()
@click.option("--server", envvar="URBA_SERVER", default=None, help="Orchestrator URL; default runs in-process.")
@click.pass_context
def main(ctx: click.Context, server: str | None):
    """Agent framework and evaluation harness for ultra-high-resolution VQA."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.argument("image")
@click.option("--chunks", default=10, show_default=True, help="Requested chunk count.")
@click.option("--out", default=None, help="Write the index JSON here.")
@click.option("--max-tokens", default=10000, show_default=True)
@click.option("--backends", default=None, help="'mock' or endpoints config path.")
@click.option("--fixture", default=None, help="Plant manifest keying the mocks.")
@click.pass_context
def abstract(ctx, image, chunks, out, max_tokens, backends, fixture):
    """Build a semantic abstraction index for IMAGE."""
    body = _call(ctx, "POST", "/v1/abstract", {
        "image": image,
        "chunks": chunks,
        "out": out,
        "budget": {"max_tokens": max_tokens},
        "backends": _backends_spec(backends, fixture),
    })
    if out:
        body = {k: v for k, v in body.items() if k != "index"}
    _emit(body)


@main.command()
@click.argument("index")
@click.option("--query", required=True)
@click.option("--topk", default=5, show_default=True)
@click.option("--backends", default=None)
@click.option("--fixture", default=None)
@click.pass_context
def retrieve(ctx, index, query, topk, backends, fixture):
    """Top-k chunks of a saved INDEX for a query."""
    body = _call(ctx, "POST", "/v1/retrieve", {
        "index": index,
        "query": query,
        "topk": topk,
        "backends": _backends_spec(backends, fixture),
    })
    click.echo(body["rendered"])


@main.command()
@click.argument("image")
@click.option("--question-file", required=True, help="JSON with question/options[/answer].")
@click.option("--mode", type=click.Choice(["agent", "e2e"]), default="agent", show_default=True)
@click.option("--backends", default=None)
@click.option("--fixture", default=None)
@click.option("--script", default=None, help="JSON file with a scripted decision-model reply list.")
@click.option("--transcript", is_flag=True, help="Include the transcript in output.")
@click.pass_context
def ask(ctx, image, question_file, mode, backends, fixture, script, transcript):
    """Run one episode on IMAGE for the question in --question-file."""
    try:
        question = json.loads(open(question_file, encoding="utf-8").read())
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: unreadable question file: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    spec = _backends_spec(backends, fixture)
    if script:
        try:
            spec["script"] = json.loads(open(script, encoding="utf-8").read())
            spec["kind"] = "mock"
        except (OSError, json.JSONDecodeError) as exc:
            click.echo(f"error: unreadable script file: {exc}", err=True)
            sys.exit(EXIT_INVALID)
    body = _call(ctx, "POST", "/v1/ask", {
        "image": image,
        "question": question,
        "mode": mode,
        "backends": spec,
    })
    if not transcript:
        body = {k: v for k, v in body.items() if k != "transcript"}
    _emit(body)


@main.command()
@click.argument("manifest")
@click.option("--mode", type=click.Choice(["agent", "e2e"]), default="agent", show_default=True)
@click.option("--out", default=None, help="Write the report JSON here.")
@click.option("--episodes-dir", default=None, help="Write per-episode artifacts here.")
@click.option("--parallelism", default=4, show_default=True)
@click.option("--backends", default=None)
@click.option("--fixture", default=None)
@click.pass_context
def eval(ctx, manifest, mode, out, episodes_dir, parallelism, backends, fixture):
    """Evaluate every question in a JSONL MANIFEST."""
    body = _call(ctx, "POST", "/v1/eval", {
        "manifest": manifest,
        "mode": mode,
        "out": out,
        "episodes_dir": episodes_dir,
        "parallelism": parallelism,
        "backends": _backends_spec(backends, fixture),
    })
    _emit(body["report"])


@main.command()
@click.argument("image")
@click.option("--tile", default=1024, show_default=True)
@click.option("--out", required=True, help="Candidate manifest JSONL path.")
@click.option("--seed", default=0, show_default=True)
@click.option("--regional", default=2, show_default=True)
@click.option("--global", "global_", default=2, show_default=True)
@click.option("--subset", default="satellite", show_default=True)
@click.option("--no-filter", is_flag=True, help="Skip the auto-filter stage.")
@click.option("--backends", default=None)
@click.option("--fixture", default=None)
@click.pass_context
def datagen(ctx, image, tile, out, seed, regional, global_, subset, no_filter, backends, fixture):
    """Run the QA data engine over IMAGE."""
    body = _call(ctx, "POST", "/v1/datagen", {
        "image": image,
        "tile": tile,
        "out": out,
        "seed": seed,
        "regional": regional,
        "global": global_,
        "subset": subset,
        "filter": not no_filter,
        "backends": _backends_spec(backends, fixture),
    })
    _emit(body)


@main.command()
@click.argument("image")
@click.option("--object-count", "object_count", is_flag=True, required=True)
@click.option("--tile", default=1024, show_default=True)
@click.option("--vocabulary", default=None, help="Comma-separated keyword list.")
@click.option("--backends", default=None)
@click.option("--fixture", default=None)
@click.pass_context
def stats(ctx, image, object_count, tile, vocabulary, backends, fixture):
    """Dataset statistics for IMAGE (currently: --object-count)."""
    body = _call(ctx, "POST", "/v1/stats/object-count", {
        "image": image,
        "tile": tile,
        "vocabulary": vocabulary.split(",") if vocabulary else None,
        "backends": _backends_spec(backends, fixture),
    })
    _emit(body)


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--size", required=True, help="WxH, e.g. 16384x16384.")
@click.option("--plants", "plants_file", required=True, help="Plant spec JSON.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--subset", default=None, help="Force one subset for all questions.")
@click.pass_context
def fixture(ctx, seed, size, plants_file, out, subset):
    """Generate a synthetic planted-needle fixture."""
    try:
        width, height = (int(v) for v in size.lower().split("x"))
        plants = json.loads(open(plants_file, encoding="utf-8").read())
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    body = _call(ctx, "POST", "/v1/fixture", {
        "seed": seed,
        "width": width,
        "height": height,
        "plants": plants,
        "out": out,
        "subset": subset,
    })
    _emit(body)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
def serve(host, port):
    """Run the orchestrator service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


@main.command("serve-mocks")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8009, show_default=True)
@click.option("--fixture", default=None, help="Plant manifest keying the mocks.")
@click.option("--script", default=None, help="JSON file with a scripted chat reply list.")
def serve_mocks(host, port, fixture, script):
    """Run the mock backend server (all five /v1/* roles)."""
    import uvicorn

    from .service import create_mock_app

    script_list = None
    if script:
        script_list = json.loads(open(script, encoding="utf-8").read())
    uvicorn.run(create_mock_app(fixture, script=script_list), host=host, port=port)


if __name__ == "__main__":
    main()

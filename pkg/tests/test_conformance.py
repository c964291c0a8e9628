"""The conformance suite must pass against a well-behaved transport and
flag a broken one."""

from support import reference_handler
from kfra.tools.conformance import (
    conformance_passed,
    golden_requests,
    render_results,
    run_conformance,
)
from kfra.tools.protocol import TOOL_KINDS, ToolResponse
from kfra.tools.schemas import validate_request
from kfra.tools.transport import FunctionTransport


def test_golden_requests_cover_every_kind_and_mode():
    reqs = golden_requests()
    kinds = {r.kind for r in reqs}
    assert kinds == set(TOOL_KINDS)
    modes = {r.body["mode"] for r in reqs if r.kind == "reason"}
    assert modes == {"candidates", "cues", "answer"}
    for req in reqs:
        validate_request(req)


def test_reference_transport_passes():
    results = run_conformance(FunctionTransport(reference_handler))
    assert conformance_passed(results), render_results(results)


def test_nondeterministic_transport_fails():
    counter = [0]

    def drifting(request):
        if request.kind == "text_search":
            counter[0] += 1
            return {
                "snippets": [
                    {"category": "", "text": f"n{counter[0]}", "source": "local://x"}
                ]
            }
        return reference_handler(request)

    results = run_conformance(FunctionTransport(drifting))
    assert not conformance_passed(results)
    bad = [r for r in results if not r.ok]
    assert any(r.check == "text_search determinism" for r in bad)


def test_schema_violation_fails_the_endpoint():
    def broken(request):
        if request.kind == "embed":
            return ToolResponse("embed", "ok", {"text_vecs": [[0.5, 0.5]]}, 0.0)
        return reference_handler(request)

    results = run_conformance(FunctionTransport(broken))
    assert not conformance_passed(results)
    assert any(not r.ok and r.check == "embed response" for r in results)


def test_render_mentions_every_check():
    results = run_conformance(FunctionTransport(reference_handler))
    text = render_results(results)
    assert "PASS canonical digest" in text
    assert "PASS ping" in text
    assert text.strip().endswith("checks passed")

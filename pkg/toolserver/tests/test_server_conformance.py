"""The server must pass the engine's schema conformance suite.

The suite is driven through an in-process transport so the checks cover
the real HTTP routing, header handling, and envelope assembly without a
network listener.
"""

import math

import numpy as np

from kfra.tools.conformance import (
    conformance_passed,
    golden_requests,
    render_results,
    run_conformance,
)
from kfra.tools.protocol import ToolRequest

from toolserver.wire import encode_blob


class TestConformanceSuite:
    def test_suite_passes(self, transport):
        results = run_conformance(transport)
        assert conformance_passed(results), "\n" + render_results(results)
        print("\nacceptance 9 PASS conformance suite green over stub backends")

    def test_every_endpoint_exercised(self, transport):
        results = run_conformance(transport)
        checks = {r.check for r in results}
        assert "canonical digest" in checks
        assert "ping" in checks
        for name in (
            "detect",
            "image_search",
            "text_search",
            "embed",
            "enhance",
            "reason/candidates",
            "reason/cues",
            "reason/answer",
        ):
            assert f"{name} response" in checks
            assert f"{name} determinism" in checks

    def test_golden_set_covers_all_kinds(self):
        kinds = {req.kind for req in golden_requests()}
        assert kinds == {"detect", "image_search", "text_search", "embed", "enhance", "reason"}


class TestEmbedNormalization:
    def test_all_vectors_unit_norm(self, transport):
        crop = np.linspace(0.0, 1.0, 6 * 6 * 3, dtype=np.float32).reshape(6, 6, 3)
        request = ToolRequest(
            kind="embed",
            body={
                "texts": ["black wingtips", "pink bill", "long neck"],
                "image_crop": encode_blob(crop),
                "grid": {"rows": 3, "cols": 2},
            },
        )
        response = transport.send(request, timeout_s=10.0)
        assert response.ok
        vectors = list(response.body["text_vecs"])
        for row in response.body["patch_vecs"]:
            vectors.extend(row)
        assert len(vectors) == 3 + 3 * 2
        for vec in vectors:
            norm = math.sqrt(sum(x * x for x in vec))
            assert abs(norm - 1.0) <= 1e-6

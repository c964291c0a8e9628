"""Canonical JSON and digest behavior.

The digest is the cache key, the fixture key, and the replay comparator,
so its byte-level behavior is frozen here.
"""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfra.errors import CanonicalizationError
from kfra.tools.canonical import canonical_json, digest_value

# Both sides of the wire must agree on this value for caching and fixtures
# to interoperate at all.
GOLDEN_REQUEST = {"kind": "detect", "version": "1", "body": {}}
GOLDEN_DIGEST = "feeafcbb1170ab495f2f2457177f70f63316878297ceddf473bb8c8d3a341afe"


def test_golden_digest_is_frozen():
    assert digest_value(GOLDEN_REQUEST) == GOLDEN_DIGEST


def test_canonical_form_is_sorted_and_compact():
    value = {"b": 1, "a": [1.5, True, None]}
    assert canonical_json(value) == '{"a":[1.5,true,null],"b":1}'


def test_key_order_does_not_matter():
    one = {"x": 1, "y": {"p": [1, 2], "q": "s"}}
    other = {"y": {"q": "s", "p": [1, 2]}, "x": 1}
    assert digest_value(one) == digest_value(other)


def test_non_ascii_is_escaped():
    assert canonical_json({"q": "café"}) == '{"q":"caf\\u00e9"}'


def test_int_and_float_digest_differently():
    assert digest_value({"v": 1}) != digest_value({"v": 1.0})


def test_tuples_serialize_as_arrays():
    assert canonical_json((1, 2)) == "[1,2]"


@pytest.mark.parametrize(
    "bad",
    [
        float("nan"),
        float("inf"),
        float("-inf"),
        {"x": float("nan")},
        [1, {"y": [float("inf")]}],
        {1: "non-string key"},
        {"x": b"bytes"},
        {"x": {1, 2}},
        {"x": object()},
    ],
)
def test_rejects_non_canonical_values(bad):
    with pytest.raises(CanonicalizationError):
        canonical_json(bad)


json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(10**9), max_value=10**9)
    | st.floats(allow_nan=False, allow_infinity=False, width=64)
    | st.text(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=10), children, max_size=4),
    max_leaves=25,
)


@settings(max_examples=200, deadline=None)
@given(json_values)
def test_roundtrip_is_stable(value):
    # Parsing the canonical form and re-canonicalizing must be a fixpoint,
    # otherwise a server that parses and re-serializes would change digests.
    first = canonical_json(value)
    assert canonical_json(json.loads(first)) == first


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.text(max_size=10), json_values, max_size=6))
def test_insertion_order_invariance(mapping):
    shuffled = dict(reversed(list(mapping.items())))
    assert digest_value(mapping) == digest_value(shuffled)

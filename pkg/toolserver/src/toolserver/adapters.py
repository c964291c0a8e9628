"""Per-kind request handling between the wire and a backend.

Adapters own body validation and response assembly. A backend failure
of any sort becomes a structured tool_error; the HTTP layer never sends
a schema-breaking body because of something a backend did.
"""

from .backends import stubs
from .bindings import BindingError
from .wire import REASON_MODES, WireError, decode_blob, encode_blob


class BadRequest(ValueError):
    """The request body is missing or mistyping a required field."""


def _field(body, name, types, required=True, default=None):
    if name not in body:
        if required:
            raise BadRequest(f"field {name!r} is required")
        return default
    value = body[name]
    if not isinstance(value, types) or isinstance(value, bool):
        raise BadRequest(f"field {name!r} has the wrong type")
    return value


def _crop(body, name="image_crop", required=True):
    blob = _field(body, name, dict, required=required)
    if blob is None:
        return None
    try:
        return decode_blob(blob)
    except WireError as exc:
        raise BadRequest(str(exc)) from exc


class DetectAdapter:
    kind = "detect"

    def __init__(self, backend, binding):
        self.backend = backend
        self.binding = binding

    def handle(self, body):
        image = _field(body, "image", dict)
        vocabulary = _field(body, "vocabulary", list)
        if not vocabulary:
            raise BadRequest("field 'vocabulary' must not be empty")
        floor = _field(body, "score_floor", (int, float))
        if not 0.0 <= float(floor) <= 1.0:
            raise BadRequest("field 'score_floor' must lie in [0, 1]")
        regions = self.backend.detect(image, [str(v) for v in vocabulary], float(floor))
        return {"regions": regions}


class ImageSearchAdapter:
    kind = "image_search"

    def __init__(self, backend, binding):
        self.backend = backend
        self.binding = binding

    def handle(self, body):
        crop = _crop(body)
        top_m = _field(body, "top_m", int)
        if top_m < 1:
            raise BadRequest("field 'top_m' must be at least 1")
        return {"exemplars": self.backend.search(crop, top_m)}


class TextSearchAdapter:
    kind = "text_search"

    def __init__(self, backend, binding):
        self.backend = backend
        self.binding = binding

    def handle(self, body):
        query = _field(body, "query", str)
        if not query:
            raise BadRequest("field 'query' must not be empty")
        top_n = _field(body, "top_n", int)
        if top_n < 1:
            raise BadRequest("field 'top_n' must be at least 1")
        return {"snippets": self.backend.search(query, top_n)}


class EmbedAdapter:
    kind = "embed"

    def __init__(self, backend, binding):
        self.backend = backend
        self.binding = binding

    def handle(self, body):
        texts = _field(body, "texts", list, required=False)
        crop = _crop(body, required=False)
        if texts is None and crop is None:
            raise BadRequest("request needs 'texts' or 'image_crop'")
        out = {}
        if texts is not None:
            out["text_vecs"] = self.backend.embed_texts([str(t) for t in texts])
        if crop is not None:
            grid = _field(body, "grid", dict, required=False, default={})
            rows = int(grid.get("rows", 1))
            cols = int(grid.get("cols", 1))
            if rows < 1 or cols < 1:
                raise BadRequest("field 'grid' must have positive rows and cols")
            out["patch_vecs"] = self.backend.embed_patches(crop, rows, cols)
        return out


class EnhanceAdapter:
    kind = "enhance"

    def __init__(self, backend, binding):
        self.backend = backend
        self.binding = binding

    def handle(self, body):
        crop = _crop(body)
        mask = _field(body, "mask", dict)
        scale = _field(body, "scale", int)
        if scale < 1:
            raise BadRequest("field 'scale' must be at least 1")
        enhanced = self.backend.enhance(crop, mask, scale)
        return {"image_crop": encode_blob(enhanced)}


class ReasonAdapter:
    kind = "reason"

    def __init__(self, backend, binding):
        self.backend = backend
        self.binding = binding

    def handle(self, body):
        mode = _field(body, "mode", str)
        if mode not in REASON_MODES:
            raise BadRequest(f"unknown reason mode: {mode!r}")
        question = _field(body, "question", str)
        if not question:
            raise BadRequest("field 'question' must not be empty")
        if mode == "candidates":
            image = _field(body, "image", dict)
            exemplars = _field(body, "exemplars", list, required=False, default=[])
            return {"candidates": self.backend.candidates(image, question, exemplars)}
        if mode == "cues":
            snippets = _field(body, "snippets", list, required=False, default=[])
            return {"cues": self.backend.cues(question, snippets)}
        image = _field(body, "image", dict)
        evidence = _field(body, "evidence", list)
        choices = _field(body, "choices", list, required=False)
        if choices is not None and not choices:
            raise BadRequest("field 'choices' must not be empty when present")
        return self.backend.answer(image, question, choices, evidence)


_STUB_FACTORIES = {
    "detect": lambda binding: DetectAdapter(stubs.StubDetector(binding.settings), binding),
    "image_search": lambda binding: ImageSearchAdapter(stubs.StubImageIndex(binding.settings), binding),
    "text_search": lambda binding: TextSearchAdapter(stubs.StubTextCorpus(binding.settings), binding),
    "embed": lambda binding: EmbedAdapter(stubs.StubEmbedder(binding.settings), binding),
    "enhance": lambda binding: EnhanceAdapter(stubs.StubUpscaler(binding.settings), binding),
    "reason": lambda binding: ReasonAdapter(stubs.StubReasoner(binding.settings), binding),
}

_BACKENDS = {"stub": _STUB_FACTORIES}


def build_adapters(bindings) -> dict:
    """Instantiate one adapter per bound kind."""
    adapters = {}
    for kind, binding in bindings.items():
        factories = _BACKENDS.get(binding.backend)
        if factories is None or kind not in factories:
            raise BindingError(f"no {binding.backend!r} backend serves kind {kind!r}")
        adapters[kind] = factories[kind](binding)
    return adapters

"""Deterministic offline backends.

Every stub answers from data baked into this module or from a pure
function of the request, so identical requests always produce identical
responses and nothing here touches the network. They exist to make the
server testable and to document the shape each backend must fill; they
are not trying to be good at the tasks.
"""

import hashlib
import json
import os

import numpy as np
from scipy import ndimage


def _settings(settings):
    return settings if isinstance(settings, dict) else {}


def _load_pixel_grid(path):
    """Read the flat {"h","w","c","pixels"} JSON image format."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    h, w, c = int(raw["h"]), int(raw["w"]), int(raw["c"])
    return np.asarray(raw["pixels"], dtype=np.float32).reshape(h, w, c)


class StubDetector:
    """Connected-component proposals over locally readable images.

    Sources the server cannot open, such as scheme URLs or missing
    files, are treated as blank frames and yield zero regions. Scores
    are the mean contrast of a component against the background median,
    so a faint blob stays below a strict score floor.
    """

    def __init__(self, settings=None):
        settings = _settings(settings)
        self.contrast_floor = float(settings.get("contrast_floor", 0.1))
        self.max_regions = int(settings.get("max_regions", 32))

    def detect(self, image, vocabulary, score_floor):
        pixels = self._load(image)
        if pixels is None:
            return []
        gray = pixels.mean(axis=2)
        background = float(np.median(gray))
        foreground = np.abs(gray - background) > self.contrast_floor
        labels, count = ndimage.label(foreground)
        h, w = gray.shape
        regions = []
        for index in range(1, count + 1):
            ys, xs = np.nonzero(labels == index)
            contrast = float(np.abs(gray[ys, xs] - background).mean())
            score = round(min(1.0, contrast), 4)
            if score < score_floor:
                continue
            regions.append(
                {
                    "bbox": [
                        round(xs.min() / w, 6),
                        round(ys.min() / h, 6),
                        round((xs.max() + 1) / w, 6),
                        round((ys.max() + 1) / h, 6),
                    ],
                    "score": score,
                }
            )
        regions.sort(key=lambda r: (-r["score"], r["bbox"]))
        return regions[: self.max_regions]

    def _load(self, image):
        source = str(image.get("source", ""))
        if "://" in source or not os.path.isfile(source):
            return None
        try:
            if source.endswith(".npy"):
                arr = np.load(source)
            elif source.endswith(".json"):
                arr = _load_pixel_grid(source)
            else:
                from PIL import Image

                with Image.open(source) as img:
                    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        except (OSError, ValueError, KeyError, TypeError):
            return None
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.size == 0:
            return None
        return np.clip(arr, 0.0, 1.0)


# category, caption, width, height
_EXEMPLAR_CORPUS = (
    ("snow goose", "a snow goose standing on ice", 640, 480),
    ("ross goose", "a ross goose resting on a mudflat", 640, 427),
    ("great blue heron", "a great blue heron wading in shallow water", 800, 533),
    ("mallard", "a mallard drake preening on a pond", 640, 480),
    ("house sparrow", "a house sparrow perched on a fence", 512, 384),
    ("red-tailed hawk", "a red-tailed hawk circling over a field", 800, 600),
)

_FIELD_NOTES = {
    "snow goose": "Snow goose: white body with black wingtips, a pink bill with a dark grin patch, and pink legs.",
    "ross goose": "Ross goose: compact white goose with a stubby bill lacking a grin patch and a rounded head.",
    "great blue heron": "Great blue heron: grey-blue plumage, a long neck held in an S curve, and slow wading strides.",
    "mallard": "Mallard: the drake shows a green head, a white neck ring, and a yellow bill; the hen is mottled brown.",
    "house sparrow": "House sparrow: grey crown, black bib on males, and constant chirping around buildings.",
    "red-tailed hawk": "Red-tailed hawk: broad wings, a brick-red tail, and a dark bar along the underwing.",
}


def _slug(category):
    return category.replace(" ", "-")


def _tokens(text):
    out = []
    for word in text.lower().split():
        word = word.strip(".,;:()[]\"'")
        if word:
            out.append(word)
    return out


class StubImageIndex:
    """Fixed exemplar corpus ranked by a content hash of the query crop."""

    def __init__(self, settings=None):
        settings = _settings(settings)
        extra = tuple(tuple(entry) for entry in settings.get("entries", ()))
        self.entries = _EXEMPLAR_CORPUS + extra

    def search(self, crop, top_m):
        digest = hashlib.sha256(np.ascontiguousarray(crop, dtype="<f4").tobytes()).digest()
        start = int.from_bytes(digest[:4], "big") % len(self.entries)
        take = min(int(top_m), len(self.entries))
        exemplars = []
        for rank in range(1, take + 1):
            category, caption, width, height = self.entries[(start + rank - 1) % len(self.entries)]
            slug = _slug(category)
            exemplars.append(
                {
                    "image": {
                        "source": f"corpus://{slug}/{rank}",
                        "width": width,
                        "height": height,
                    },
                    "caption": caption,
                    "source_url": f"https://example.org/corpus/{slug}",
                    "rank": rank,
                }
            )
        return exemplars


class StubTextCorpus:
    """Token-overlap retrieval over a small in-memory note collection."""

    def __init__(self, settings=None):
        settings = _settings(settings)
        self.notes = dict(_FIELD_NOTES)
        self.notes.update(settings.get("notes", {}))

    def search(self, query, top_n):
        want = set(_tokens(query))
        scored = []
        for category in sorted(self.notes):
            text = self.notes[category]
            have = set(_tokens(category)) | set(_tokens(text))
            overlap = len(want & have)
            if overlap > 0:
                scored.append((-overlap, category, text))
        scored.sort()
        snippets = []
        for _, category, text in scored[: int(top_n)]:
            snippets.append(
                {
                    "category": category,
                    "text": text,
                    "source": f"fieldnotes://{_slug(category)}",
                }
            )
        return snippets


class StubEmbedder:
    """Hash-seeded unit vectors; equal inputs embed identically.

    Vectors are normalized in float64 so the reported norm stays within
    1e-6 of one after the JSON round trip.
    """

    def __init__(self, settings=None):
        settings = _settings(settings)
        self.dim = int(settings.get("dim", 16))
        if self.dim < 2:
            raise ValueError("embedding dim must be at least 2")

    def _vector(self, tag, payload):
        # stretch the digest stream until it covers dim floats
        raw = b""
        counter = 0
        while len(raw) < self.dim * 8:
            block = hashlib.sha256(
                tag.encode("utf-8") + b"\x00" + payload + counter.to_bytes(4, "big")
            )
            raw += block.digest()
            counter += 1
        ints = np.frombuffer(raw[: self.dim * 8], dtype="<u8").astype(np.float64)
        vec = ints / np.float64(2**64) * 2.0 - 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec = np.zeros(self.dim, dtype=np.float64)
            vec[0] = 1.0
            return vec.tolist()
        return (vec / norm).tolist()

    def embed_texts(self, texts):
        return [self._vector("text", text.encode("utf-8")) for text in texts]

    def embed_patches(self, crop, rows, cols):
        h, w = int(crop.shape[0]), int(crop.shape[1])
        row_edges = np.linspace(0, h, rows + 1).round().astype(int)
        col_edges = np.linspace(0, w, cols + 1).round().astype(int)
        grid = []
        for r in range(rows):
            top = min(int(row_edges[r]), h - 1)
            bottom = min(max(int(row_edges[r + 1]), top + 1), h)
            row_vecs = []
            for c in range(cols):
                left = min(int(col_edges[c]), w - 1)
                right = min(max(int(col_edges[c + 1]), left + 1), w)
                cell = np.ascontiguousarray(crop[top:bottom, left:right], dtype="<f4")
                row_vecs.append(self._vector(f"patch:{r}:{c}", cell.tobytes()))
            grid.append(row_vecs)
        return grid


class StubUpscaler:
    """Nearest-neighbour upscaling; the mask only marks the focus region."""

    def __init__(self, settings=None):
        self.settings = _settings(settings)

    def enhance(self, crop, mask, scale):
        return np.repeat(np.repeat(crop, scale, axis=0), scale, axis=1)


_COLOUR_WORDS = {
    "black", "white", "grey", "gray", "brown", "red", "green", "blue",
    "yellow", "pink", "orange", "buff", "rufous", "brick-red", "dark", "pale",
}
_SHAPE_WORDS = {"long", "short", "stubby", "broad", "rounded", "compact", "slim"}
_PART_WORDS = {
    "body", "bill", "neck", "wings", "wingtips", "tail", "crown", "head",
    "legs", "bar", "ring", "bib", "patch", "plumage",
}
_BEHAVIOUR_WORDS = {"wading", "preening", "chirping", "circling", "soaring", "diving"}


class StubReasoner:
    """Template reasoner over retrieved evidence; there is no model here.

    Candidates come from exemplar provenance, cues from keyword scans of
    snippets, and answers from a transparent evidence tally. Free-text
    replies are coerced onto the offered choices the way a real language
    backend's output would have to be.
    """

    def __init__(self, settings=None):
        settings = _settings(settings)
        self.max_cues = int(settings.get("max_cues", 4))

    def candidates(self, image, question, exemplars):
        seen = {}
        for exemplar in exemplars:
            category = self._category_of(exemplar)
            if category and category not in seen:
                seen[category] = None
        out = []
        for position, category in enumerate(seen):
            confidence = round(max(0.9 - 0.15 * position, 0.05), 4)
            out.append({"category": category, "confidence": confidence})
        return out

    @staticmethod
    def _category_of(exemplar):
        source = str(exemplar.get("image", {}).get("source", ""))
        if "://" in source:
            path = source.split("://", 1)[1]
            segment = path.split("/", 1)[0]
            if segment:
                return segment.replace("-", " ")
        words = [w for w in _tokens(exemplar.get("caption", "")) if w not in ("a", "an", "the")]
        if len(words) >= 2:
            return " ".join(words[:2])
        return words[0] if words else None

    def cues(self, question, snippets):
        out = []
        seen = set()

        def push(phrase, kind):
            if phrase not in seen and len(out) < self.max_cues:
                seen.add(phrase)
                out.append({"phrase": phrase, "kind": kind})

        for snippet in snippets:
            words = _tokens(snippet.get("text", ""))
            for first, second in zip(words, words[1:]):
                if first in _COLOUR_WORDS and second in _PART_WORDS:
                    push(f"{first} {second}", "colour")
                elif first in _SHAPE_WORDS and second in _PART_WORDS:
                    push(f"{first} {second}", "structure")
            for word in words:
                if word in _BEHAVIOUR_WORDS:
                    push(word, "behaviour")
        if not out and snippets:
            words = _tokens(snippets[0].get("text", ""))
            if words:
                push(" ".join(words[:2]), "other")
        return out

    def answer(self, image, question, choices, evidence):
        keys = list(choices) if choices else self._candidate_keys(evidence)
        if not keys:
            return {"probs": {}, "rationale": "no choices or candidates to score"}
        scores = {key: 0.0 for key in keys}
        folded = {key.strip().casefold(): key for key in keys}
        for entity in evidence:
            for per_candidate in entity.get("per_candidate", []):
                candidate = per_candidate.get("candidate", {})
                key = folded.get(str(candidate.get("category", "")).strip().casefold())
                if key is None:
                    continue
                scores[key] += float(candidate.get("confidence", 0.0))
                for cue in per_candidate.get("cues", []):
                    scores[key] += float(cue.get("score", 0.0))
                scores[key] += 0.1 * len(per_candidate.get("snippets", []))
        # ties resolve to the lexicographically smallest key
        winner = max(sorted(keys), key=lambda key: scores[key])
        probs = self.coerce_reply(winner, keys)
        rationale = f"tallied {len(evidence)} evidence tuples; {winner} scored {round(scores[winner], 4)}"
        return {"probs": probs, "rationale": rationale}

    @staticmethod
    def _candidate_keys(evidence):
        keys = []
        for entity in evidence:
            for per_candidate in entity.get("per_candidate", []):
                category = per_candidate.get("candidate", {}).get("category")
                if category and category not in keys:
                    keys.append(category)
        return keys

    @staticmethod
    def coerce_reply(raw, choices):
        """Map a free-text upstream reply onto the offered choices.

        A reply equal to one choice after case folding takes the whole
        mass; anything unrecognized spreads mass uniformly rather than
        inventing an out-of-vocabulary answer.
        """
        keys = list(choices)
        folded = {}
        for key in keys:
            folded.setdefault(key.strip().casefold(), key)
        hit = folded.get(str(raw).strip().casefold())
        if hit is None:
            share = 1.0 / len(keys)
            return {key: share for key in keys}
        return {key: (1.0 if key == hit else 0.0) for key in keys}

"""Textual class descriptions: prompt rendering, generation clients,
and pluggable text encoders.

Three prompt families exist per class: a generic appearance description,
K state-specific descriptions, and L scene phrases of the form
"<class> + context". Generation is delegated to a client (checked-in
fixture by default, remote HTTP service optionally); encoding to a text
encoder (deterministic toy hash encoder or embedding-fixture lookup by
default, remote service optionally). Everything shipped runs offline.
"""

import hashlib
import json
import os
import urllib.error
import urllib.request
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import as_embedding, l2_normalize
from .errors import (
    ClientUnavailable,
    DimensionMismatch,
    EmptyClassName,
    EncoderUnavailable,
    InsufficientDescriptions,
    MalformedResponse,
)

STATE_PROMPT_TEMPLATE = (
    "What are the common states or forms of {name} (category name)? "
    "For each common state of {name}, provide a one-sentence description "
    "of its visual appearance."
)

GENERIC_PROMPT_TEMPLATE = (
    "What does {name} (category name) generally look like? "
    "Provide a one-sentence generic description of its appearance."
)

SCENE_PROMPT_TEMPLATE = (
    "In which contexts is {name} most commonly found? "
    "Please output phrases in the form of '{name} + context'."
)


def _require_name(class_name: str) -> str:
    if not isinstance(class_name, str) or not class_name.strip():
        raise EmptyClassName("class name must be a nonempty string")
    return class_name


def render_state_prompt(class_name: str) -> str:
    """Prompt asking for the common states of a class and their looks."""
    return STATE_PROMPT_TEMPLATE.format(name=_require_name(class_name))


def render_generic_prompt(class_name: str) -> str:
    """Prompt asking for a one-sentence generic appearance description."""
    return GENERIC_PROMPT_TEMPLATE.format(name=_require_name(class_name))


def render_scene_prompt(class_name: str) -> str:
    """Prompt asking for '<class> + context' scene phrases."""
    return SCENE_PROMPT_TEMPLATE.format(name=_require_name(class_name))


@dataclass(frozen=True)
class DescriptionSet:
    """Per-class description bundle: one generic sentence, K state
    descriptions, L scene phrases.

    Invariants enforced on construction: all strings nonempty after
    trimming, no duplicate states or scenes, and every state/scene
    mentions the class name (case-insensitive substring).
    """

    class_name: str
    generic: str
    states: tuple[str, ...]
    scenes: tuple[str, ...]

    def __post_init__(self):
        _require_name(self.class_name)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if not self.generic.strip():
            raise MalformedResponse(f"class '{self.class_name}': empty generic description")
        if len(self.states) < 1 or len(self.scenes) < 1:
            raise MalformedResponse(f"class '{self.class_name}': needs >= 1 state and scene")
        lowered = self.class_name.lower()
        for kind, items in (("state", self.states), ("scene", self.scenes)):
            if len(set(items)) != len(items):
                raise MalformedResponse(f"class '{self.class_name}': duplicate {kind} strings")
            for text in items:
                if not text.strip():
                    raise MalformedResponse(f"class '{self.class_name}': empty {kind} string")
                if lowered not in text.lower():
                    raise MalformedResponse(
                        f"class '{self.class_name}': {kind} does not mention the class: {text!r}"
                    )

    @property
    def k(self) -> int:
        return len(self.states)

    @property
    def l(self) -> int:
        return len(self.scenes)

    def all_texts(self) -> list[str]:
        return [self.generic, *self.states, *self.scenes]


def fixture_path(name: str) -> str:
    """Absolute path of a shipped fixture file."""
    return str(resources.files("semproto").joinpath("fixtures", name))


class FixtureDescriptionClient:
    """Serves pre-generated descriptions from a checked-in JSON file.

    File format: top-level map class_name -> {"generic": str,
    "states": [str], "scenes": [str]}.
    """

    def __init__(self, path: str):
        self.path = path
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ClientUnavailable(f"cannot read description fixture {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"description fixture {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise MalformedResponse(f"description fixture {path}: top level must be a map")
        self._data = data

    def describe(self, class_name: str) -> dict:
        _require_name(class_name)
        if class_name not in self._data:
            raise ClientUnavailable(
                f"fixture {self.path} has no descriptions for class '{class_name}'"
            )
        rec = self._data[class_name]
        for key in ("generic", "states", "scenes"):
            if key not in rec:
                raise MalformedResponse(f"class '{class_name}': fixture record missing '{key}'")
        return rec


@dataclass(frozen=True)
class RemoteClientConfig:
    """Connection settings for a remote generation/encoding service."""

    endpoint: str
    api_key_env: str = "SEMPROTO_API_KEY"
    timeout_s: float = 30.0
    max_parallel: int = 4


class RemoteDescriptionClient:
    """HTTP client for an external description-generation service.

    POSTs the three rendered prompts per class and expects a JSON body
    {"generic": str, "states": [str], "scenes": [str]}. The response must
    arrive pre-split into clean lists; parsing policy is the service's.
    """

    def __init__(self, config: RemoteClientConfig):
        self.config = config

    @property
    def max_parallel(self) -> int:
        return self.config.max_parallel

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise ClientUnavailable(
                f"API key environment variable {self.config.api_key_env} is not set"
            )
        return key

    def build_payload(self, class_name: str) -> dict:
        return {
            "class_name": class_name,
            "prompts": {
                "generic": render_generic_prompt(class_name),
                "state": render_state_prompt(class_name),
                "scene": render_scene_prompt(class_name),
            },
        }

    def describe(self, class_name: str) -> dict:
        key = self._api_key()
        body = json.dumps(self.build_payload(class_name)).encode("utf-8")
        req = urllib.request.Request(
            self.config.endpoint,
            data=body,
            headers={"Content-Type": "application/json",
                     "Authorization": f"Bearer {key}"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout_s) as resp:
                raw = resp.read()
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise ClientUnavailable(f"endpoint {self.config.endpoint} unreachable: {exc}") from exc
        try:
            rec = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedResponse(f"service returned non-JSON body: {exc}") from exc
        if not isinstance(rec, dict) or not {"generic", "states", "scenes"} <= set(rec):
            raise MalformedResponse("service response missing generic/states/scenes")
        return rec


def _build_set(class_name: str, rec: dict, k: int, l: int) -> DescriptionSet:
    generic = str(rec["generic"]).strip()
    states = [str(s).strip() for s in rec["states"]]
    scenes = [str(s).strip() for s in rec["scenes"]]
    if len(states) < k:
        raise InsufficientDescriptions(class_name, len(states), k, kind="states")
    if len(scenes) < l:
        raise InsufficientDescriptions(class_name, len(scenes), l, kind="scenes")
    # Over-production is truncated in response order; under-production
    # errors above rather than being padded.
    return DescriptionSet(class_name, generic, tuple(states[:k]), tuple(scenes[:l]))


def generate_descriptions(class_names, k: int, l: int, client) -> dict:
    """Fetch and validate exactly k states and l scenes per class.

    Results are merged in sorted class-name order regardless of the
    client's completion order; remote clients with max_parallel > 1 are
    queried concurrently.
    """
    if k < 1 or l < 1:
        raise ValueError(f"k and l must be >= 1, got k={k}, l={l}")
    names = [_require_name(n) for n in class_names]
    ordered = sorted(set(names))
    parallel = int(getattr(client, "max_parallel", 1))
    if parallel > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=min(parallel, len(ordered))) as pool:
            recs = list(pool.map(client.describe, ordered))
    else:
        recs = [client.describe(name) for name in ordered]
    return {name: _build_set(name, rec, k, l) for name, rec in zip(ordered, recs)}


class DeterministicToyEncoder:
    """Seeded hash-of-text encoder producing unit vectors.

    The text is digested (blake2b) into a PRNG seed; the embedding is a
    normalized standard-normal draw. Identical (text, dim, seed) inputs
    give bitwise-identical vectors across processes and platforms.
    """

    kind = "DeterministicToy"

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)

    def encode(self, text: str) -> np.ndarray:
        digest = hashlib.blake2b(
            f"{self.seed}:{text}".encode("utf-8"), digest_size=8
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return l2_normalize(rng.standard_normal(self.dim))


class FixtureEncoder:
    """Looks up pre-computed embeddings from a JSON fixture.

    File format: {"dim": int, "records": [{"text": str, "vector": [float]}]}.
    Vectors are stored pre-normalized; the loader re-normalizes and warns
    if any stored norm drifts from 1 by more than 1e-6.
    """

    kind = "FixtureFile"

    def __init__(self, path: str):
        self.path = path
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise EncoderUnavailable(f"cannot read embedding fixture {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"embedding fixture {path} is not valid JSON: {exc}") from exc
        try:
            self.dim = int(data["dim"])
            records = data["records"]
        except (KeyError, TypeError) as exc:
            raise MalformedResponse(f"embedding fixture {path} missing dim/records") from exc
        self._table: dict[str, np.ndarray] = {}
        drifted = 0
        for rec in records:
            vec = as_embedding(rec["vector"])
            if vec.shape[0] != self.dim:
                raise DimensionMismatch(
                    f"fixture record for {rec['text']!r} has dim {vec.shape[0]}, "
                    f"fixture declares {self.dim}"
                )
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-6:
                drifted += 1
            self._table[rec["text"]] = l2_normalize(vec)
        if drifted:
            warnings.warn(
                f"embedding fixture {path}: {drifted} record(s) drifted from unit "
                "norm by more than 1e-6; re-normalized on load",
                RuntimeWarning,
                stacklevel=2,
            )

    def encode(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise EncoderUnavailable(
                f"embedding fixture {self.path} has no vector for text {text!r}"
            ) from None


class RemoteEncoder:
    """HTTP client for an external text-encoding service."""

    kind = "RemoteService"

    def __init__(self, config: RemoteClientConfig, dim: int):
        self.config = config
        self.dim = int(dim)

    def encode(self, text: str) -> np.ndarray:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise EncoderUnavailable(
                f"API key environment variable {self.config.api_key_env} is not set"
            )
        body = json.dumps({"text": text}).encode("utf-8")
        req = urllib.request.Request(
            self.config.endpoint,
            data=body,
            headers={"Content-Type": "application/json",
                     "Authorization": f"Bearer {key}"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout_s) as resp:
                rec = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise EncoderUnavailable(f"endpoint {self.config.endpoint} unreachable: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"encoder returned non-JSON body: {exc}") from exc
        return as_embedding(rec.get("vector", ()), dim=self.dim)


def encode(text: str, encoder) -> np.ndarray:
    """Encode text into an l2-normalized float64 embedding of encoder.dim.

    Deterministic per (text, encoder); the raw encoder output must have
    norm >= 1e-6 and match the declared dimension.
    """
    if not isinstance(text, str) or not text:
        raise ValueError("text must be a nonempty string")
    raw = as_embedding(encoder.encode(text))
    if raw.shape[0] != encoder.dim:
        raise DimensionMismatch(
            f"encoder returned dim {raw.shape[0]}, declared {encoder.dim}"
        )
    if float(np.linalg.norm(raw)) < 1e-6:
        raise EncoderUnavailable(f"encoder returned a near-zero vector for {text!r}")
    return l2_normalize(raw)


def write_embedding_fixture(path: str, dim: int, records: dict) -> None:
    """Write an embedding fixture file; `records` maps text -> vector."""
    payload = {
        "dim": int(dim),
        "records": [
            {"text": text, "vector": [float(x) for x in vec]}
            for text, vec in records.items()
        ],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    os.replace(tmp, path)

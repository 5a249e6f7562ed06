"""Online serving gateway: per-request backend selection and invocation.

The router consults a loaded decider and then calls exactly the backends the
policy requires: one backend per request for the source-only policies, NMT
first plus a conditional LLM call for the QE-threshold policy. Backends are
reached over a minimal JSON protocol (POST /translate for NMT-class systems,
POST /generate with a rendered prompt for LLM-class systems) or simulated
in-process from a lookup table for deterministic end-to-end tests.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import requests

from .core import (
    Backend,
    BackendError,
    ConfigError,
    DataError,
    LanguagePair,
    RoutingDecision,
    RoutingError,
    ScoreKind,
    Segment,
)
from .calibration import load_thresholds
from .decider import Decider, DeciderSpec, DecisionContext, build_decider
from .scoring import ScorerSpec, score

LANGUAGE_NAMES = {
    "zh": "Chinese",
    "en": "English",
    "de": "German",
    "ja": "Japanese",
}

DEFAULT_PROMPT_TEMPLATE = (
    "Translate this from {source_language} to {target_language}.\n"
    "{source_language}: {source_sentence}\n"
    "{target_language}:"
)

_PLACEHOLDERS = ("{source_language}", "{target_language}", "{source_sentence}")


def render_prompt(
    template: str,
    pair: LanguagePair,
    text: str,
    language_names: Optional[Mapping[str, str]] = None,
) -> str:
    """Substitute the three placeholders; language codes become full names."""
    for placeholder in _PLACEHOLDERS:
        if placeholder not in template:
            raise ConfigError(f"prompt template is missing {placeholder}")
    names = dict(LANGUAGE_NAMES)
    names.update(language_names or {})
    for code in (pair.source_lang, pair.target_lang):
        if code not in names:
            raise ConfigError(f"no full name configured for language code {code!r}")
    return (
        template.replace("{source_language}", names[pair.source_lang])
        .replace("{target_language}", names[pair.target_lang])
        .replace("{source_sentence}", text)
    )


# --- backend specs and clients -------------------------------------------------

@dataclass(frozen=True)
class SimulatedBackendProfile:
    lookup: Mapping[str, str]  # segment id -> hypothesis
    base_latency_ms: float = 0.0
    failure_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.failure_rate < 1.0:
            raise ConfigError("failure_rate must be in [0, 1)")
        object.__setattr__(self, "lookup", dict(self.lookup))


@dataclass(frozen=True)
class BackendSpec:
    kind: str  # "nmt" | "llm" | "simulated"
    endpoint: Optional[str] = None
    timeout_ms: int = 30_000
    max_in_flight: int = 8
    prompt_template: Optional[str] = None
    simulated: Optional[SimulatedBackendProfile] = None

    def __post_init__(self):
        if self.kind not in ("nmt", "llm", "simulated"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "simulated":
            if self.simulated is None:
                raise ConfigError("simulated backend needs a profile")
        elif self.endpoint is None:
            raise ConfigError(f"backend kind {self.kind!r} requires an endpoint")
        if self.timeout_ms <= 0 or self.max_in_flight <= 0:
            raise ConfigError("timeout_ms and max_in_flight must be positive")
        if self.kind == "llm":
            template = self.prompt_template or DEFAULT_PROMPT_TEMPLATE
            for placeholder in _PLACEHOLDERS:
                if placeholder not in template:
                    raise ConfigError(f"prompt template is missing {placeholder}")


class SimulatedBackend:
    """Lookup-table backend with seeded, per-segment-deterministic failures."""

    def __init__(self, profile: SimulatedBackendProfile, label: str):
        self.profile = profile
        self.label = label
        self._lock = threading.Lock()
        self.invocations = 0

    def translate(self, segment: Segment) -> str:
        with self._lock:
            self.invocations += 1
        if self.profile.base_latency_ms > 0:
            time.sleep(self.profile.base_latency_ms / 1000.0)
        if self.profile.failure_rate > 0:
            digest = hashlib.sha256(f"{self.profile.seed}:{segment.id}".encode()).digest()
            draw = int.from_bytes(digest[:8], "big") / 2**64
            if draw < self.profile.failure_rate:
                raise BackendError(f"simulated {self.label} failure for segment {segment.id!r}")
        try:
            return self.profile.lookup[segment.id]
        except KeyError:
            raise BackendError(
                f"simulated {self.label} backend has no hypothesis for segment {segment.id!r}"
            ) from None


class HttpBackend:
    """Shared plumbing: bounded in-flight requests, timeout, error wrapping."""

    def __init__(self, spec: BackendSpec, label: str):
        self.spec = spec
        self.label = label
        self._slots = threading.Semaphore(spec.max_in_flight)
        self._session = requests.Session()
        self._lock = threading.Lock()
        self.invocations = 0

    def _post(self, path: str, payload: dict) -> dict:
        with self._lock:
            self.invocations += 1
        url = f"{self.spec.endpoint}{path}"
        with self._slots:
            try:
                response = self._session.post(url, json=payload, timeout=self.spec.timeout_ms / 1000.0)
            except requests.Timeout as exc:
                raise BackendError(f"{self.label} backend timed out after {self.spec.timeout_ms} ms: {url}") from exc
            except requests.RequestException as exc:
                raise BackendError(f"{self.label} backend request failed: {exc}") from exc
        if response.status_code != 200:
            raise BackendError(f"{self.label} backend returned {response.status_code}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise BackendError(f"{self.label} backend returned non-JSON body") from exc


class HttpNmtBackend(HttpBackend):
    def translate(self, segment: Segment) -> str:
        body = self._post(
            "/translate",
            {
                "src": segment.text,
                "source_lang": segment.pair.source_lang,
                "target_lang": segment.pair.target_lang,
            },
        )
        if "translation" not in body:
            raise BackendError(f"{self.label} backend response lacks 'translation'")
        return str(body["translation"])


class HttpLlmBackend(HttpBackend):
    def __init__(self, spec: BackendSpec, label: str, language_names: Optional[Mapping[str, str]] = None):
        super().__init__(spec, label)
        self.template = spec.prompt_template or DEFAULT_PROMPT_TEMPLATE
        self.language_names = dict(language_names or {})

    def translate(self, segment: Segment) -> str:
        prompt = render_prompt(self.template, segment.pair, segment.text, self.language_names)
        body = self._post("/generate", {"prompt": prompt})
        if "text" not in body:
            raise BackendError(f"{self.label} backend response lacks 'text'")
        return str(body["text"])


def build_backend(spec: BackendSpec, label: str, language_names=None):
    if spec.kind == "simulated":
        return SimulatedBackend(spec.simulated, label)
    if spec.kind == "nmt":
        return HttpNmtBackend(spec, label)
    return HttpLlmBackend(spec, label, language_names)


# --- the router ------------------------------------------------------------------

@dataclass(frozen=True)
class RouterConfig:
    pair: LanguagePair
    decider: DeciderSpec
    nmt: BackendSpec
    llm: BackendSpec
    qe_scorer: Optional[ScorerSpec] = None
    fallback_enabled: bool = False
    listen_address: str = "127.0.0.1:8080"
    language_names: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.decider.policy == "oracle":
            raise ConfigError("the oracle policy needs references; it is offline-only")
        if self.decider.policy == "qet" and self.qe_scorer is None:
            raise ConfigError("qet policy requires a qe_scorer in the router config")
        if self.qe_scorer is not None and self.qe_scorer.mode is not ScoreKind.REFERENCE_FREE:
            raise ConfigError("the router's qe_scorer must be reference_free")
        object.__setattr__(self, "language_names", dict(self.language_names))


class RouterMetrics:
    def __init__(self):
        self._lock = threading.Lock()
        self.nmt_requests = 0
        self.llm_requests = 0
        self.fallbacks = 0

    def record(self, decision: RoutingDecision) -> None:
        with self._lock:
            if decision.backend is Backend.LLM:
                self.llm_requests += 1
            else:
                self.nmt_requests += 1
            if decision.fallback:
                self.fallbacks += 1

    def snapshot(self) -> Dict[str, float]:
        with self._lock:
            completed = self.nmt_requests + self.llm_requests
            return {
                "nmt_requests": self.nmt_requests,
                "llm_requests": self.llm_requests,
                "llm_p": (self.llm_requests / completed) if completed else 0.0,
                "fallbacks": self.fallbacks,
            }


class Router:
    """Holds loaded artifacts and backend clients; route_segment is thread-safe."""

    def __init__(
        self,
        config: RouterConfig,
        decider: Decider,
        nmt_backend,
        llm_backend,
    ):
        self.config = config
        self.decider = decider
        self.nmt_backend = nmt_backend
        self.llm_backend = llm_backend
        self.metrics = RouterMetrics()

    def route_segment(self, segment: Segment) -> Tuple[str, RoutingDecision]:
        started = time.perf_counter()
        if self.decider.policy == "qet":
            translation, backend, evidence, calls, fallback = self._route_qet(segment)
        else:
            backend, evidence = self.decider.decide(segment)
            translation, backend, calls, fallback = self._invoke_with_fallback(segment, backend)
        decision = RoutingDecision(
            segment_id=segment.id,
            backend=backend,
            evidence=evidence,
            backend_calls=calls,
            latency_ms=(time.perf_counter() - started) * 1000.0,
            fallback=fallback,
        )
        self.metrics.record(decision)
        return translation, decision

    def _route_qet(self, segment: Segment):
        calls = {Backend.NMT: 1, Backend.LLM: 0}
        try:
            nmt_text = self.nmt_backend.translate(segment)
        except BackendError as nmt_error:
            if not self.config.fallback_enabled:
                raise
            calls[Backend.LLM] = 1
            try:
                return self.llm_backend.translate(segment), Backend.LLM, {}, calls, True
            except BackendError as llm_error:
                raise RoutingError(
                    f"both backends failed for segment {segment.id!r}",
                    causes={"NMT": str(nmt_error), "LLM": str(llm_error)},
                ) from llm_error
        qe = score(
            self.config.qe_scorer,
            segment.text,
            nmt_text,
            None,
            source_lang=segment.pair.source_lang,
            target_lang=segment.pair.target_lang,
        )
        backend, evidence = self.decider.decide(segment, DecisionContext(qe_score=qe))
        if backend is Backend.NMT:
            return nmt_text, Backend.NMT, evidence, calls, False
        calls[Backend.LLM] = 1
        try:
            return self.llm_backend.translate(segment), Backend.LLM, evidence, calls, False
        except BackendError:
            if not self.config.fallback_enabled:
                raise
            # the NMT hypothesis is already in hand; fall back to it
            return nmt_text, Backend.NMT, evidence, calls, True

    def _invoke_with_fallback(self, segment: Segment, backend: Backend):
        primary, secondary = (
            (self.nmt_backend, self.llm_backend)
            if backend is Backend.NMT
            else (self.llm_backend, self.nmt_backend)
        )
        other = Backend.LLM if backend is Backend.NMT else Backend.NMT
        calls = {backend: 1, other: 0}
        try:
            return primary.translate(segment), backend, calls, False
        except BackendError as first_error:
            if not self.config.fallback_enabled:
                raise
            calls[other] = 1
            try:
                return secondary.translate(segment), other, calls, True
            except BackendError as second_error:
                raise RoutingError(
                    f"both backends failed for segment {segment.id!r}",
                    causes={backend.value: str(first_error), other.value: str(second_error)},
                ) from second_error


def build_router(config: RouterConfig) -> Router:
    decider = build_decider(config.decider)
    nmt_backend = build_backend(config.nmt, "NMT", config.language_names)
    llm_backend = build_backend(config.llm, "LLM", config.language_names)
    return Router(config, decider, nmt_backend, llm_backend)


# --- config file loading ------------------------------------------------------

def _backend_spec_from_obj(obj: Mapping, base_dir: Path) -> BackendSpec:
    simulated = None
    if obj.get("kind") == "simulated":
        table_path = obj.get("table_path")
        if table_path is None:
            raise ConfigError("simulated backend config needs table_path")
        table = json.loads((base_dir / table_path).read_text(encoding="utf-8"))
        simulated = SimulatedBackendProfile(
            lookup=table,
            base_latency_ms=float(obj.get("base_latency_ms", 0.0)),
            failure_rate=float(obj.get("failure_rate", 0.0)),
            seed=int(obj.get("seed", 0)),
        )
    return BackendSpec(
        kind=str(obj.get("kind", "")),
        endpoint=obj.get("endpoint"),
        timeout_ms=int(obj.get("timeout_ms", 30_000)),
        max_in_flight=int(obj.get("max_in_flight", 8)),
        prompt_template=obj.get("prompt_template"),
        simulated=simulated,
    )


def load_router_config(path) -> RouterConfig:
    """Parse the single-document JSON router config; paths resolve relative to it."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read router config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"router config {path} is not valid JSON: {exc}") from exc
    base = path.parent

    decider_obj = obj.get("decider") or {}
    thresholds = None
    if decider_obj.get("thresholds_path"):
        thresholds = load_thresholds(base / decider_obj["thresholds_path"])

    def resolve(key):
        value = decider_obj.get(key)
        return str(base / value) if value else None

    decider = DeciderSpec(
        policy=str(decider_obj.get("policy", "")),
        thresholds=thresholds,
        lm_path=resolve("lm_path"),
        classifier_path=resolve("classifier_path"),
        decision_boundary=float(decider_obj.get("decision_boundary", 0.5)),
    )

    qe_scorer = None
    if obj.get("qe_scorer"):
        scorer_obj = obj["qe_scorer"]
        backend = str(scorer_obj.get("backend", "builtin_chrf"))
        if backend == "builtin":
            backend = "builtin_chrf"
        qe_scorer = ScorerSpec(
            mode=ScoreKind(scorer_obj.get("mode", "reference_free")),
            backend=backend,
            endpoint=scorer_obj.get("endpoint"),
            timeout_ms=int(scorer_obj.get("timeout_ms", 10_000)),
        )

    return RouterConfig(
        pair=LanguagePair.parse(str(obj["pair"])),
        decider=decider,
        nmt=_backend_spec_from_obj(obj.get("nmt") or {}, base),
        llm=_backend_spec_from_obj(obj.get("llm") or {}, base),
        qe_scorer=qe_scorer,
        fallback_enabled=bool(obj.get("fallback_enabled", False)),
        listen_address=str(obj.get("listen_address", "127.0.0.1:8080")),
        language_names=dict(obj.get("language_names") or {}),
    )


# --- HTTP service ----------------------------------------------------------------

def create_app(router: Router):
    """FastAPI app exposing /translate, /metrics, and /healthz."""
    from fastapi import Body, FastAPI
    from fastapi.responses import JSONResponse

    app = FastAPI(title="mtcascade router")
    counter_lock = threading.Lock()
    counter = {"n": 0}

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "policy": router.decider.policy}

    @app.get("/metrics")
    def metrics():
        return router.metrics.snapshot()

    @app.post("/translate")
    def translate(payload: dict = Body(...)):
        for key in ("src", "source_lang", "target_lang"):
            if not isinstance(payload.get(key), str) or not payload[key]:
                return JSONResponse(status_code=400, content={"error": f"missing field {key!r}"})
        expected = router.config.pair
        got = (payload["source_lang"], payload["target_lang"])
        if got != (expected.source_lang, expected.target_lang):
            return JSONResponse(
                status_code=400,
                content={"error": f"router serves {expected}, got {got[0]}-{got[1]}"},
            )
        request_id = payload.get("id")
        if request_id is None:
            with counter_lock:
                counter["n"] += 1
                request_id = f"req-{counter['n']}"
        try:
            segment = Segment(id=str(request_id), text=payload["src"], pair=expected)
            translation, decision = router.route_segment(segment)
        except (DataError, ConfigError) as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        except RoutingError as exc:
            return JSONResponse(status_code=502, content={"error": str(exc), "causes": exc.causes})
        except BackendError as exc:
            return JSONResponse(status_code=502, content={"error": str(exc)})
        return {
            "translation": translation,
            "backend_used": decision.backend.value,
            "evidence": decision.evidence,
            "fallback": decision.fallback,
            "latency_ms": decision.latency_ms,
        }

    return app


def serve(config: RouterConfig) -> None:
    """Run the gateway until interrupted; uvicorn drains in-flight requests."""
    import uvicorn

    router = build_router(config)
    host, _, port = config.listen_address.rpartition(":")
    uvicorn.run(create_app(router), host=host or "127.0.0.1", port=int(port))

from __future__ import annotations

import json

import httpx
import pytest

from nlel.adapter import (
    BackendTimeout,
    GenerationRequest,
    HTTPBackend,
    MalformedResponse,
    MockBackend,
    MockRetrieval,
    RateLimited,
    TokenBucket,
    TransportError,
    decoding_from,
    generate,
)

OK_BODY = {"texts": ["hello world"], "usage": {"prompt_tokens": 3, "completion_tokens": 2}}


def http_backend(handler, **kw):
    sleeps = []
    client = httpx.Client(transport=httpx.MockTransport(handler))
    backend = HTTPBackend("http://test/complete", api_key="secret", client=client, sleep=sleeps.append, **kw)
    return backend, sleeps


# -- mock -------------------------------------------------------------------


def test_mock_scripted_texts_and_lengths():
    backend = MockBackend(["first", "second", "third"], seed=1, lengths=[7, 9])
    resp = backend.complete(GenerationRequest("p", n=2))
    assert resp.texts == ("first", "second")
    assert resp.completion_tokens == 16


def test_mock_caps_completion_tokens():
    backend = MockBackend([" ".join(["w"] * 100)])
    resp = backend.complete(GenerationRequest("p", {"max_tokens": 40}))
    assert resp.completion_tokens == 40
    assert len(resp.texts[0].split()) == 40


def test_mock_responder_is_seeded_by_request():
    backend = MockBackend(lambda req, rng: str(rng.random()), seed=5)
    a = backend.complete(GenerationRequest("p")).texts
    b = backend.complete(GenerationRequest("p")).texts
    c = backend.complete(GenerationRequest("q")).texts
    assert a == b and a != c


def test_request_rejects_non_decoding_fields():
    with pytest.raises(ValueError):
        GenerationRequest("p", {"gen_count": 3})


def test_generate_checks_decoding_against_schema(schema, pi0):
    req = GenerationRequest("p", {**decoding_from(pi0), "temperature": 5.0})
    with pytest.raises(ValueError):
        generate(req, MockBackend(["x"]), schema)
    assert generate(GenerationRequest("p", decoding_from(pi0)), MockBackend(["x"]), schema).texts == ("x",)


# -- http -------------------------------------------------------------------


def test_http_success_sends_decoding_and_auth():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=OK_BODY)

    backend, _ = http_backend(handler)
    resp = backend.complete(GenerationRequest("p", {"temperature": 0.3, "max_tokens": 20}))
    assert resp.texts == ("hello world",)
    assert (resp.prompt_tokens, resp.completion_tokens) == (3, 2)
    assert seen["body"] == {"prompt": "p", "n": 1, "temperature": 0.3, "max_tokens": 20}
    assert seen["auth"] == "Bearer secret"


def test_http_choices_format():
    body = {"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 1, "completion_tokens": 1}}
    backend, _ = http_backend(lambda r: httpx.Response(200, json=body))
    assert backend.complete(GenerationRequest("p")).texts == ("hi",)


def test_http_429_backs_off_then_succeeds():
    replies = iter([httpx.Response(429), httpx.Response(429), httpx.Response(200, json=OK_BODY)])
    backend, sleeps = http_backend(lambda r: next(replies), backoff_base=0.5)
    assert backend.complete(GenerationRequest("p")).texts == ("hello world",)
    assert sleeps == [0.5, 1.0]


def test_http_429_exhausts_to_rate_limited():
    backend, sleeps = http_backend(lambda r: httpx.Response(429), max_retries=3, backoff_base=1.0, backoff_cap=3.0)
    with pytest.raises(RateLimited):
        backend.complete(GenerationRequest("p"))
    assert sleeps == [1.0, 2.0, 3.0]


def test_http_timeout_typed():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    backend, _ = http_backend(handler, max_retries=1)
    with pytest.raises(BackendTimeout):
        backend.complete(GenerationRequest("p"))


def test_http_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400)

    backend, _ = http_backend(handler)
    with pytest.raises(TransportError):
        backend.complete(GenerationRequest("p"))
    assert len(calls) == 1


@pytest.mark.parametrize(
    "body",
    [
        {"texts": []},
        {"texts": ["x"]},
        {"texts": ["x"], "usage": {"prompt_tokens": "a", "completion_tokens": 1}},
        {"nothing": True},
        [1, 2],
    ],
)
def test_http_malformed_bodies(body):
    backend, _ = http_backend(lambda r: httpx.Response(200, json=body), max_retries=0)
    with pytest.raises(MalformedResponse):
        backend.complete(GenerationRequest("p"))


def test_http_non_json_body():
    backend, _ = http_backend(lambda r: httpx.Response(200, text="<html>"), max_retries=0)
    with pytest.raises(MalformedResponse):
        backend.complete(GenerationRequest("p"))


def test_from_env(monkeypatch):
    monkeypatch.delenv("NLEL_BACKEND_URL", raising=False)
    with pytest.raises(ValueError):
        HTTPBackend.from_env()
    monkeypatch.setenv("NLEL_BACKEND_URL", "http://x")
    monkeypatch.setenv("NLEL_TIMEOUT_MS", "1500")
    backend = HTTPBackend.from_env()
    assert backend.url == "http://x" and backend.timeout_ms == 1500


# -- rate limiting and retrieval ----------------------------------------------


def test_token_bucket_waits_for_refill():
    now = [0.0]
    bucket = TokenBucket(rate=2.0, capacity=1.0, clock=lambda: now[0], sleep=lambda s: now.__setitem__(0, now[0] + s))
    bucket.acquire()
    assert bucket.try_acquire() == pytest.approx(0.5)
    bucket.acquire()
    assert now[0] == pytest.approx(0.5)


def test_retrieval_mixes_by_weight_and_charges_constant():
    retrieval = MockRetrieval({"math-lemmas": ["l1", "l2"], "general": ["g1"]}, k=10, tokens_per_call=32)
    res = retrieval.retrieve("q", {"none": 0.0, "math-lemmas": 0.70, "general": 0.30})
    assert sum(s.startswith("[math-lemmas]") for s in res.snippets) == 7
    assert sum(s.startswith("[general]") for s in res.snippets) == 3
    assert res.usage.total == 32


def test_retrieval_none_only_returns_nothing():
    retrieval = MockRetrieval({"general": ["g"]})
    assert retrieval.retrieve("q", {"none": 1.0}).snippets == ()

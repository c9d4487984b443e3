import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tempovec.embedding import (
    EmbedderConfig, EmbeddingError, HashingEmbedder, Provider, RemoteEmbedder, check_vector,
    feature_hash, make_embedder,
)


def test_unit_norm_and_dimension():
    v = feature_hash("alpha beta gamma")
    assert v.shape == (384,) and v.dtype == np.float32
    assert abs(float(np.linalg.norm(v)) - 1.0) < 1e-6


def test_deterministic_and_normalization_invariant():
    assert np.array_equal(feature_hash("Hello  World"), feature_hash("hello world"))


def test_no_tokens_gives_first_basis_vector():
    v = feature_hash("   ")
    assert v[0] == 1.0 and np.count_nonzero(v) == 1


def test_shared_tokens_raise_similarity():
    a = feature_hash("primary database host alpha")
    b = feature_hash("primary database host bravo")
    c = feature_hash("discount invoice renewal clause")
    assert float(a @ b) > float(a @ c)


@given(st.text(min_size=1, max_size=60), st.integers(min_value=1, max_value=64))
def test_any_text_any_dimension(text, dim):
    v = feature_hash(text, dim)
    assert v.shape == (dim,)
    assert np.isfinite(v).all()
    assert abs(float(np.linalg.norm(v)) - 1.0) < 1e-5


def test_ops_counter_and_empty_text():
    e = HashingEmbedder(16)
    e.embed_batch(["a", "b"])
    e.embed("c")
    assert e.ops == 3
    with pytest.raises(ValueError):
        e.embed("")


def test_config_validation():
    with pytest.raises(ValueError):
        EmbedderConfig(dimension=0)
    with pytest.raises(ValueError):
        EmbedderConfig(provider=Provider.REMOTE)
    assert isinstance(make_embedder(EmbedderConfig(dimension=8)), HashingEmbedder)


def test_check_vector():
    with pytest.raises(ValueError, match="dimension"):
        check_vector(np.zeros(3), 4)
    with pytest.raises(ValueError, match="NaN"):
        check_vector(np.array([np.nan, 0, 0, 0]), 4)


class _Handler(BaseHTTPRequestHandler):
    mode = "ok"
    dim = 8

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.mode == "error":
            self.send_response(503)
            self.end_headers()
            return
        dim = self.dim + (1 if self.mode == "wrong_dim" else 0)
        vecs = [[float(len(t))] + [1.0] * (dim - 1) for t in body["texts"]]
        data = json.dumps({"vectors": vecs}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    _Handler.mode = "ok"


def _url(srv):
    return f"http://127.0.0.1:{srv.server_address[1]}"


def test_remote_roundtrip(server):
    e = make_embedder(EmbedderConfig(8, Provider.REMOTE, _url(server)))
    assert isinstance(e, RemoteEmbedder)
    vs = e.embed_batch(["ab", "abcd"])
    assert len(vs) == 2
    for v in vs:
        assert abs(float(np.linalg.norm(v)) - 1.0) < 1e-6
    assert vs[0][0] < vs[1][0]


def test_remote_dimension_mismatch(server):
    _Handler.mode = "wrong_dim"
    with pytest.raises(EmbeddingError, match="dimension"):
        RemoteEmbedder(_url(server), 8).embed("x")


def test_remote_server_error_is_retryable(server):
    _Handler.mode = "error"
    with pytest.raises(EmbeddingError) as info:
        RemoteEmbedder(_url(server), 8).embed("x")
    assert info.value.retryable


def test_remote_unreachable():
    with pytest.raises(EmbeddingError) as info:
        RemoteEmbedder("http://127.0.0.1:9", 8, timeout=0.5).embed("x")
    assert info.value.retryable

import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scsd.prompts import (
    DEFAULT_CONDITIONS,
    DEFAULT_TEMPLATES,
    DomainEmbeddingCache,
    StubTextEncoder,
    build_class_embeddings,
    build_prompt_triplet,
    pixel_domain_embeddings,
    stub_text_encoder,
)


def test_stub_encoder_deterministic_and_unit():
    a = stub_text_encoder("a photo of car", 0)
    b = stub_text_encoder("a photo of car", 0)
    np.testing.assert_array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1) < 1e-6


def test_stub_encoder_distinguishes_condition():
    a = stub_text_encoder("a photo of car", 0)
    b = stub_text_encoder("a photo of car in snow", 0)
    assert float(a @ b) < 1


def test_stub_encoder_seed_matters():
    assert not np.allclose(stub_text_encoder("x", 0), stub_text_encoder("x", 1))


def test_stub_encoder_rejects_empty():
    with pytest.raises(ValueError):
        stub_text_encoder("")


@settings(max_examples=50, deadline=None)
@given(st.text(min_size=1, max_size=40), st.integers(0, 2**31))
def test_stub_encoder_unit_norm_property(prompt, seed):
    assert abs(np.linalg.norm(stub_text_encoder(prompt, seed)) - 1) < 1e-6


def test_single_class_single_template_equals_encoder():
    enc = StubTextEncoder()
    table = build_class_embeddings(["car"], ["a photo of {}"], enc)
    np.testing.assert_array_equal(table.embeddings[0], enc.encode("a photo of car"))


def test_two_classes_three_templates():
    table = build_class_embeddings(["car", "bus"], DEFAULT_TEMPLATES[:3], StubTextEncoder())
    assert table.embeddings.shape == (2, 64)
    np.testing.assert_allclose(np.linalg.norm(table.embeddings, axis=1), 1, atol=1e-6)
    assert float(table.embeddings[0] @ table.embeddings[1]) < 0.99


def test_duplicate_class_names_rejected():
    with pytest.raises(ValueError):
        build_class_embeddings(["car", "car"])


def test_triplet_car_in_snow():
    t = build_prompt_triplet("car", "in snow")
    assert t.general[0] == "a photo of car"
    assert t.specific[0] == "a photo of car in snow"
    assert len(t.general) == len(t.specific) == len(DEFAULT_TEMPLATES)


def test_triplet_null_condition_keeps_general():
    t = build_prompt_triplet("car", "")
    assert t.specific == t.general


def test_triplet_suffix():
    assert all(p.endswith("in fog") for p in build_prompt_triplet("bus", "in fog").specific)


def test_pixel_embeddings_null_condition_zero_difference():
    mask = np.array([[0, 1], [2, 255]])
    e = pixel_domain_embeddings(mask, 0, class_names=["a", "b", "c"])
    assert not e.difference.any()


def test_pixel_embeddings_constant_mask():
    mask = np.zeros((2, 2), dtype=np.int64)
    snow = DEFAULT_CONDITIONS.index("in snow")
    d = pixel_domain_embeddings(mask, snow, class_names=["a", "b"]).difference.reshape(4, -1)
    assert (d == d[0]).all()
    assert np.abs(d[0]).max() > 0


def test_pixel_embeddings_two_classes_two_vectors():
    mask = np.array([[0, 1, 1], [0, 0, 1]])
    night = DEFAULT_CONDITIONS.index("in night")
    e = pixel_domain_embeddings(mask, night, StubTextEncoder(), ["a", "b"])
    assert len(np.unique(e.difference.reshape(6, -1), axis=0)) == 2


def test_pixel_embeddings_ignore_zero_and_shapes():
    mask = np.array([[0, 255], [1, 1]])
    e = pixel_domain_embeddings(mask, 1, class_names=["a", "b"])
    assert e.specific.shape == (2, 2, 64)
    assert not e.general[0, 1].any() and not e.specific[0, 1].any()
    np.testing.assert_array_equal(e.difference, e.specific - e.general)
    np.testing.assert_allclose(e.difference + e.general, e.specific, rtol=0, atol=1e-12)


def test_pixel_embeddings_errors():
    with pytest.raises(ValueError):
        pixel_domain_embeddings(np.array([[3]]), 0, class_names=["a", "b"])
    with pytest.raises(ValueError):
        pixel_domain_embeddings(np.array([[0]]), 99, class_names=["a", "b"])


def test_cache_builds_once_under_threads():
    calls = []

    class Counting(StubTextEncoder):
        def encode(self, prompt):
            calls.append(prompt)
            return super().encode(prompt)

    cache = DomainEmbeddingCache(["a", "b"], encoder=Counting())
    threads = [threading.Thread(target=lambda: cache.tables) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    n = len(calls)
    cache.tables
    assert len(calls) == n
    assert cache.specific.shape == (len(DEFAULT_CONDITIONS), 2, 64)
    np.testing.assert_array_equal(cache.specific[0], cache.general)

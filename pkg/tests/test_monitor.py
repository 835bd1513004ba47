import numpy
import pytest
from numpy.testing import assert_allclose

from dbea.errors import EmptySelectionError, InvalidConfidenceError, ShapeError
from dbea.model import HeadOutput, ModelConfig, TandemModel
from dbea.monitor import (MonitorConfig, UncertaintyScore, score_batch, score_output, usm_image,
                          usm_object)
from dbea.world import IN_DISTRIBUTION, Sample, Scene

BOX = numpy.array([0.5, 0.5, 0.2, 0.2])
# dx = 0.03, dy = 0.04, dw = 0.1: xy = 0.05, wh = 0.01
SHIFTED = BOX + [0.03, 0.04, 0.1, 0.0]


def test_identical_heads_score_zero():
    boxes = numpy.random.default_rng(0).uniform(0.1, 0.9, (6, 4))
    assert usm_image(boxes, boxes, range(6)) == 0.0
    assert usm_object(boxes[0], boxes[0], 0.5) == 0.0


def test_image_score_by_hand():
    """
    With one selected detection the centred terms are xy^2 and wh^2.
    """
    assert_allclose(usm_image([SHIFTED], [BOX], [0]), 0.05 * 0.01**2, rtol=1e-12)
    assert_allclose(usm_image([SHIFTED], [BOX], [0], outer_root=False), 0.05**2 * 0.01**2,
                    rtol=1e-12)


def test_single_detection_values():
    """
    alpha (0.5, 0.5, 0.2, 0.2) against beta (0.52, 0.5, 0.25, 0.2): xy 0.02 and
    wh 0.0025.
    """
    alpha, beta = [0.5, 0.5, 0.2, 0.2], [0.52, 0.5, 0.25, 0.2]
    assert abs(usm_image([alpha], [beta], [0]) - 1.25e-7) <= 1e-12
    assert_allclose(usm_image([alpha], [beta], [0]), 0.02 * 0.0025**2, rtol=1e-9)
    assert_allclose(usm_object(alpha, beta, 0.81), numpy.sqrt(0.02) * 0.0025 / 0.9, rtol=1e-9)
    assert abs(usm_object(alpha, beta, 0.81) - 3.928e-4) <= 1e-7


def test_image_score_symmetries():
    """
    Translating both heads together or reordering the selection leaves the
    score unchanged.
    """
    rng = numpy.random.default_rng(5)
    for _ in range(20):
        a = rng.uniform(0.1, 0.9, (8, 4))
        b = rng.uniform(0.1, 0.9, (8, 4))
        top = rng.permutation(8)[:5]
        value = usm_image(a, b, top)
        shift = rng.normal(size=4)
        assert_allclose(usm_image(a + shift, b + shift, top), value, rtol=1e-9)
        assert_allclose(usm_image(a, b, rng.permutation(top)), value, rtol=1e-12)
        assert_allclose(usm_object(a[0] + shift, b[0] + shift, 0.5), usm_object(a[0], b[0], 0.5),
                        rtol=1e-9)


def test_image_score_formula():
    rng = numpy.random.default_rng(1)
    for _ in range(50):
        a = rng.uniform(0.1, 0.9, (8, 4))
        b = rng.uniform(0.1, 0.9, (8, 4))
        top = rng.permutation(8)[:5]
        d = a[top] - b[top]
        xy = numpy.sqrt(d[:, 0]**2 + d[:, 1]**2)
        wh = d[:, 2]**2 + d[:, 3]**2
        expected = numpy.mean(numpy.sqrt(xy * xy.mean()) * wh * wh.mean())
        assert abs(usm_image(a, b, top) - expected) <= 1e-12


def test_object_score_by_hand():
    assert_allclose(usm_object(SHIFTED, BOX, 1.0), numpy.sqrt(0.05) * 0.01, rtol=1e-12)
    assert_allclose(usm_object(SHIFTED, BOX, 0.25), 2.0 * usm_object(SHIFTED, BOX, 1.0),
                    rtol=1e-12)
    assert usm_object(SHIFTED, BOX, 0.9) == usm_object(BOX, SHIFTED, 0.9)


def test_scores_grow_with_disagreement():
    rng = numpy.random.default_rng(2)
    a = rng.uniform(0.3, 0.7, (5, 4))
    d = rng.normal(scale=0.05, size=(5, 4))
    image = [usm_image(a + s * d, a, range(5)) for s in (0.5, 1.0, 2.0, 4.0)]
    single = [usm_object(a[0] + s * d[0], a[0], 0.8) for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(x < y for x, y in zip(image[:-1], image[1:]))
    assert all(x < y for x, y in zip(single[:-1], single[1:]))


def test_monitor_errors():
    with pytest.raises(EmptySelectionError):
        usm_image([BOX], [BOX], [])
    with pytest.raises(ShapeError):
        usm_image([BOX, BOX], [BOX], [0])
    for confidence in (0.0, -0.1, 1.5, numpy.nan):
        with pytest.raises(InvalidConfidenceError):
            usm_object(BOX, SHIFTED, confidence)


def _sample(features, name="s"):
    scene = Scene(name, ((0, tuple(BOX)),), IN_DISTRIBUTION)
    return Sample(scene, features, numpy.full(len(features), -1))


def test_score_batch():
    config = ModelConfig(feature_dim=5, trunk_hidden=6, embed_dim=4, head_hidden=5,
                         num_classes=3, queries=6, top_k=3)
    model = TandemModel.init(config, 0)
    assert score_batch(model, []) == []
    features = numpy.random.default_rng(3).normal(size=(6, 5))
    scores = score_batch(model, [_sample(features, "a"), _sample(features.copy(), "b")],
                         workers=2)
    assert [s.scene_id for s in scores] == ["a", "b"]
    assert scores[0].image_usm == scores[1].image_usm
    assert scores[0].per_object == scores[1].per_object
    assert scores[0].top_k_used == 3
    confidences = [c for _, _, c in scores[0].per_object]
    assert confidences == sorted(confidences, reverse=True)
    assert scores[0].image_usm > 0.0

    with pytest.raises(ShapeError):
        score_batch(model, [_sample(numpy.zeros((6, 4)))])


def test_score_record_round_trip():
    score = UncertaintyScore("a", IN_DISTRIBUTION, 0.25, [(2, 0.5, 0.75)], 1)
    assert UncertaintyScore.from_record(score.to_record()) == score


def test_vanilla_falls_back_to_confidence():
    config = ModelConfig(feature_dim=5, trunk_hidden=6, embed_dim=4, head_hidden=5,
                         num_classes=3, queries=6, top_k=2, mode='vanilla')
    output = TandemModel.init(config, 1).predict(numpy.random.default_rng(4).normal(size=(6, 5)))
    score = score_output(output, 2, MonitorConfig())
    confidence = numpy.sort(output.fused.confidence)[::-1][:2]
    assert_allclose(score.image_usm, 1.0 - confidence.mean())
    assert_allclose([u for _, u, _ in score.per_object], 1.0 - confidence)


def test_outer_root_switch():
    heads = (HeadOutput(numpy.array([SHIFTED]), numpy.zeros((1, 2))),
             HeadOutput(numpy.array([BOX]), numpy.zeros((1, 2))))
    with_root = usm_image(*heads, [0], MonitorConfig().outer_root)
    without = usm_image(*heads, [0], MonitorConfig(outer_root=False).outer_root)
    assert_allclose(without / with_root, 0.05, rtol=1e-12)

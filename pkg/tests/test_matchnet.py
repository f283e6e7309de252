import numpy as np
import pytest

from answer_select.data import build_idf, build_instances, synthetic_split
from answer_select.embeddings import EmbeddingTable, shape_sequence, tokenize
from answer_select.errors import ConfigError, ParseError
from answer_select.gradcheck import TOLERANCE, run_suite, tiny_config
from answer_select.matchnet import (
    ConvSpec,
    NetConfig,
    forward,
    forward_arrays,
    init_params,
    load_checkpoint,
    save_checkpoint,
    score_candidates,
    score_instances,
)
from answer_select.similarity import cosine_similarity
from answer_select.autodiff import Tensor

# recorded from the first run after the op-level oracle checks passed
GOLDEN_PROBABILITY = 0.4919084180415074


def _setup(cfg, seed=0, n_questions=3, n_candidates=4):
    split = synthetic_split("t", n_questions=n_questions, n_candidates=n_candidates, vocab_size=25, sentence_len=6, seed=seed)
    vocab = sorted({t for q in split.questions for t in q.tokens + [w for c in q.candidates for w in c.tokens]})
    table = EmbeddingTable.random(vocab, cfg.dim, seed=seed)
    params = init_params(cfg, table, seed=seed)
    instances = build_instances(split, table, build_idf(split), cfg.q_len, cfg.a_len)
    return table, params, instances


@pytest.fixture(scope="module")
def small():
    cfg = NetConfig.preset("metric", 2, "deep", filters=4, kernel=3, pool=2, q_len=8, a_len=8, dim=6)
    return (cfg,) + _setup(cfg)


def test_zero_head_gives_half(small):
    cfg, _, params, instances = small
    params = params.copy()
    params["head.weight"].data[:] = 0.0
    np.testing.assert_array_equal(score_instances(instances, params, cfg), 0.5)
    params["head.bias"].data[:] = 2.0
    np.testing.assert_allclose(score_instances(instances, params, cfg), 1 / (1 + np.exp(-2.0)), atol=1e-15)


def test_cosine_self_similarity_diagonal():
    table = EmbeddingTable.random(["a", "b", "c"], 5, seed=1)
    ids = shape_sequence(["a", "b", "c"], 3, table).ids
    emb = Tensor(table.vectors[ids])
    np.testing.assert_allclose(np.diag(cosine_similarity(emb, emb).data[0]), 1.0, atol=1e-15)


def test_golden_probability():
    q = tokenize("when did amtrak begin its operations")
    a = tokenize("amtrak began its operations in 1971")
    assert len(q) == len(a) == 6
    table = EmbeddingTable.random(sorted(set(q + a)), 50, seed=7)
    cfg = NetConfig()
    params = init_params(cfg, table, seed=7)
    qs, as_ = shape_sequence(q, 40, table), shape_sequence(a, 40, table)
    p = forward_arrays(qs.ids[None], as_.ids[None], np.array([[0.4, 0.55]]), params, cfg).data[0]
    assert p == pytest.approx(GOLDEN_PROBABILITY, abs=1e-12)


def test_probabilities_in_unit_interval(small):
    cfg, _, params, instances = small
    p = forward(instances, params, cfg).data
    assert p.shape == (len(instances),)
    assert np.all((p >= 0) & (p <= 1))
    assert forward(instances[0], params, cfg).shape == ()


def test_score_candidates_matches_forward(small):
    cfg, _, params, instances = small
    inst = instances[0]
    single = score_candidates(inst.question, [inst.answer], inst.features[None], params, cfg)
    assert single.shape == (1,)
    assert single[0] == forward(inst, params, cfg).item()

    assert score_candidates(inst.question, [], np.zeros((0, 2)), params, cfg).shape == (0,)

    dup = score_candidates(inst.question, [inst.answer, inst.answer], np.stack([inst.features] * 2), params, cfg)
    assert dup[0] == dup[1]


def test_ten_answers_match_ten_forward_calls():
    cfg = NetConfig.preset("cosine", 1, "deep", filters=3, kernel=3, pool=2, q_len=8, a_len=8, dim=6)
    _, params, instances = _setup(cfg, seed=4, n_questions=1, n_candidates=10)
    q = instances[0].question
    feats = np.stack([i.features for i in instances])
    batched = score_candidates(q, [i.answer for i in instances], feats, params, cfg, batch_size=3)
    singles = [forward(i, params, cfg).item() for i in instances]
    np.testing.assert_allclose(batched, singles, rtol=0, atol=1e-12)


def test_permuting_candidates_permutes_scores(small):
    cfg, _, params, instances = small
    perm = np.random.default_rng(0).permutation(len(instances))
    base = score_instances(instances, params, cfg)
    shuffled = score_instances([instances[i] for i in perm], params, cfg)
    np.testing.assert_allclose(shuffled, base[perm], atol=1e-12)


def test_inference_ignores_dropout_seed(small):
    cfg, _, params, instances = small
    a = forward(instances, params, cfg, training=False, seed=1).data
    b = forward(instances, params, cfg, training=False, seed=99).data
    np.testing.assert_array_equal(a, b)
    t1 = forward(instances, params.copy(), cfg, training=True, seed=1).data
    t2 = forward(instances, params.copy(), cfg, training=True, seed=2).data
    assert not np.array_equal(t1, t2)


def test_training_updates_running_stats_only_in_train_mode(small):
    cfg, _, params, instances = small
    params = params.copy()
    before = params.buffers["bn1.running_mean"].copy()
    forward(instances, params, cfg, training=False)
    np.testing.assert_array_equal(params.buffers["bn1.running_mean"], before)
    forward(instances, params, cfg, training=True, seed=0)
    assert not np.array_equal(params.buffers["bn1.running_mean"], before)


def test_default_config_geometry():
    cfg = NetConfig()
    assert cfg.spatial_shapes() == [(19, 19), (1, 1)]
    assert cfg.flat_features == 100
    assert cfg.dropout == 0.5


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(q_len=3, a_len=3),  # second conv leaves nothing
        dict(k=0),
        dict(dropout=1.0),
        dict(measurement="euclidean", k=2),
        dict(layers=()),
    ],
)
def test_invalid_configs_fail_at_build_time(kwargs):
    with pytest.raises(ConfigError):
        NetConfig(**kwargs)


def test_shallow_and_deep_differ_only_in_layers():
    deep = NetConfig.preset("metric", 2, "deep")
    shallow = NetConfig.preset("metric", 2, "shallow")
    assert len(deep.layers) == 2 and len(shallow.layers) == 1
    assert deep.layers[-1] == shallow.layers[0]
    d, s = deep.to_dict(), shallow.to_dict()
    d.pop("layers"), s.pop("layers")
    assert d == s
    with pytest.raises(ConfigError):
        NetConfig.preset(depth="medium")


def _expected_count(cfg, vocab):
    n = vocab * cfg.dim
    if cfg.measurement.value == "metric":
        n += cfg.k * cfg.dim * cfg.dim + cfg.k * cfg.q_len * cfg.a_len
    c = cfg.channels
    for spec in cfg.layers:
        n += spec.filters * c * spec.kernel[0] * spec.kernel[1] + 3 * spec.filters
        c = spec.filters
    return n + cfg.flat_features + cfg.n_features + 1


@pytest.mark.parametrize("cfg", [NetConfig(), NetConfig.preset("cosine", depth="shallow"), tiny_config("metric")])
def test_parameter_count_is_a_function_of_config(cfg):
    table = EmbeddingTable.random([f"w{i}" for i in range(7)], cfg.dim)
    counts = {init_params(cfg, table, seed=s).count() for s in (0, 1)}
    assert counts == {_expected_count(cfg, len(table))}


def test_embedding_dim_mismatch():
    with pytest.raises(ConfigError):
        init_params(NetConfig(dim=50), EmbeddingTable.random(["a"], 10))


def test_checkpoint_round_trip_is_byte_identical(small, tmp_path):
    cfg, table, params, instances = small
    idf = build_idf([["a", "b"], ["b"]])
    save_checkpoint(tmp_path / "a.ckpt", params, cfg, table.tokens, idf, {"epoch": 3})
    ck = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(tmp_path / "b.ckpt", ck.params, ck.cfg, ck.table.tokens, ck.idf, ck.meta)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert ck.cfg == cfg
    assert ck.meta == {"epoch": 3}
    for name, t in params.tensors.items():
        np.testing.assert_array_equal(ck.params[name].data, t.data)
    np.testing.assert_array_equal(score_instances(instances, ck.params, ck.cfg), score_instances(instances, params, cfg))


@pytest.mark.parametrize("damage", ["truncate", "garbage", "vocab"])
def test_corrupt_checkpoint(small, tmp_path, damage):
    cfg, table, params, _ = small
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, params, cfg, table.tokens)
    text = path.read_text()
    if damage == "truncate":
        path.write_text(text[: len(text) // 2])
    elif damage == "garbage":
        path.write_bytes(b"\x00\xff not json")
    else:
        path.write_text(text.replace('"vocabulary":["<pad>","<unk>",', '"vocabulary":["<pad>","<unk>","zzz",', 1))
    with pytest.raises(ParseError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch(small, tmp_path):
    cfg, table, params, _ = small
    other = NetConfig.preset("metric", 2, "deep", filters=5, kernel=3, pool=2, q_len=8, a_len=8, dim=6)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, other, table.tokens)
    with pytest.raises(ConfigError):
        load_checkpoint(path)


@pytest.mark.parametrize("depth", [1, 2])
def test_end_to_end_gradients(depth):
    from answer_select.gradcheck import tiny_problem, check_gradients
    from answer_select.embeddings import PAD

    for m in ("euclidean", "cosine", "metric"):
        _, params, loss_fn = tiny_problem(m, seed=3, depth=depth)
        names = [n for n, _ in params.trainable()]
        errors = check_gradients(loss_fn, [t for _, t in params.trainable()], frozen={names.index("embedding"): slice(PAD, PAD + 1)})
        bad = {n: e for n, e in zip(names, errors) if e >= TOLERANCE}
        assert not bad, f"{m}: {bad}"


def test_gradcheck_suite_reports_every_group():
    results = run_suite(seed=0, measurements=("metric",))
    assert {r.group for r in results} == {"W", "U", "B", "filters", "batchnorm", "head"}
    assert all(r.ok for r in results)

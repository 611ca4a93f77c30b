"""Acceptance suite: one test per release criterion.

Each test prints one `[ACCEPTANCE] <name>: PASS|FAIL` line (visible with
`pytest -s` or in captured output). The learnability and recursion-grid
criteria train real models and dominate the runtime (~20-30 minutes total
on 2 CPU cores); everything else finishes in seconds.
"""
import functools
import itertools
import json
import struct
import time

import numpy as np
import pytest
import scipy.stats

import trmqe.autograd as ag
from trmqe.autograd import Tensor
from trmqe.cli import main
from trmqe.data import EmbeddedExample, QeRecord
from trmqe.embfile import read_embedding_file, write_embedding_file
from trmqe.errors import EmbeddingCorruptError, EmbeddingFormatError, MetricUndefinedError
from trmqe.metrics import average_ranks, bootstrap_ci, mae, pearson, spearman
from trmqe.model import (
    LayerCounter,
    QeModel,
    TrmConfig,
    assemble_batch,
    assemble_sequence,
    init_standard_params,
    init_trm_params,
    run_steps,
    standard_transformer_forward,
    trm_forward,
)
from trmqe.synth import synth_task
from trmqe.train import TrainConfig, train


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[ACCEPTANCE] {name}: FAIL")
                raise
            print(f"\n[ACCEPTANCE] {name}: PASS")

        return wrapper

    return deco


# ---------------------------------------------------------------------------
# 1. gradient integrity


def _tiny_grad_config(l, n):
    return TrmConfig(
        hidden_dim=8,
        n_heads=2,
        ffn_mult=2,
        l_cycles=l,
        external_steps=n,
        dropout=0.0,
        seed=0,
        input_dim=6,
        max_seq_len=16,
    )


def _full_model_loss(params, cfg, src, tr, target):
    x, mask, _ = assemble_batch([(src, tr)], params, cfg)
    outs = run_steps(x, params, cfg, mask)
    pred = ag.sigmoid(outs[-1][0])
    d = ag.sub(pred, Tensor(np.array([target], dtype=np.float64)))
    loss = ag.mul(d, d).mean()
    # keep the continue logit on the loss surface so no parameter is dead
    q_cont = outs[-1][1]
    loss = ag.add(loss, ag.scale(ag.mul(q_cont, q_cont).mean(), 0.1))
    if len(outs) > 1:
        p0 = ag.sigmoid(outs[0][0])
        d0 = ag.sub(p0, Tensor(np.array([target], dtype=np.float64)))
        loss = ag.add(loss, ag.scale(ag.mul(d0, d0).mean(), 0.5))
    return loss


@criterion("gradient integrity (full model, 64-bit, <30s)")
def test_acceptance_gradient_integrity(monkeypatch):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    for l, n in itertools.product((1, 2), (1, 2)):
        cfg = _tiny_grad_config(l, n)
        params = init_trm_params(cfg, dtype=np.float64)
        src = rng.standard_normal((2, 6))
        tr = rng.standard_normal((1, 6))
        tensors = [params[name] for name in params.names()]
        err = ag.grad_check(lambda *ts: _full_model_loss(params, cfg, src, tr, 0.6), tensors)
        assert err < 1e-4, f"L={l} N={n}: max rel err {err}"

    # negative control: corrupt a backward rule that is live at init (the
    # head sigmoid; residual-branch rules start behind zero matrices)
    def bad_sigmoid(x):
        z = x.data
        e = np.exp(-np.abs(z))
        out = Tensor(np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)))

        def wrong_backward(g):
            return (g * out.data * (1.0 - out.data) * 1.5,)  # deliberately off by 1.5x

        return ag._record(out, (x,), wrong_backward)

    monkeypatch.setattr(ag, "sigmoid", bad_sigmoid)
    cfg = _tiny_grad_config(2, 1)
    params = init_trm_params(cfg, dtype=np.float64)
    src = rng.standard_normal((2, 6))
    tr = rng.standard_normal((1, 6))
    tensors = [params[name] for name in params.names()]
    err = ag.grad_check(lambda *ts: _full_model_loss(params, cfg, src, tr, 0.6), tensors)
    assert err > 1e-2, f"corrupted backward went undetected (err={err})"

    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. weight sharing across the full (L, N) grid


@criterion("weight-sharing invariant over 96 grid cells (<1 min)")
def test_acceptance_weight_sharing_grid():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    src = rng.standard_normal((2, 12)).astype(np.float32)
    tr = rng.standard_normal((3, 12)).astype(np.float32)
    ref_names = ref_count = None
    for l in range(1, 7):
        for n in range(1, 17):
            cfg = TrmConfig(
                hidden_dim=16,
                n_heads=2,
                ffn_mult=2,
                l_cycles=l,
                external_steps=n,
                dropout=0.0,
                seed=0,
                input_dim=12,
                max_seq_len=32,
            )
            params = init_trm_params(cfg)
            sig = (params.names(), params.total_count())
            if ref_names is None:
                ref_names, ref_count = sig
            assert sig == (ref_names, ref_count), f"L={l} N={n}"
            counter = LayerCounter()
            x = assemble_sequence(src, tr, params, cfg)
            _, per_step = trm_forward(x, cfg, params, counter=counter)
            assert counter.layers == n * 2 * l, f"L={l} N={n}: counted {counter.layers}"
            assert len(per_step) == n
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 3. shared/unshared equivalence


@criterion("shared L=1,N=1 == unshared depth-2 with copied weights (100 inputs)")
def test_acceptance_shared_unshared_equivalence():
    cfg = TrmConfig(
        hidden_dim=32,
        n_heads=4,
        ffn_mult=4,
        l_cycles=1,
        external_steps=1,
        dropout=0.0,
        seed=3,
        input_dim=24,
        max_seq_len=32,
    )
    shared = init_trm_params(cfg)
    std = init_standard_params(cfg, 2)
    for name, t in shared.items():
        std[name].data = t.data.copy()
    rng = np.random.default_rng(4)
    for _ in range(100):
        s, t_len = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        src = rng.standard_normal((s, 24)).astype(np.float32)
        tr = rng.standard_normal((t_len, 24)).astype(np.float32)
        x = assemble_sequence(src, tr, shared, cfg)
        q_shared, _ = trm_forward(x, cfg, shared)
        q_std, _ = standard_transformer_forward(x, 2, std, cfg)
        assert q_shared == q_std


# ---------------------------------------------------------------------------
# 4. parameter accounting


@criterion("parameter accounting (7M core at D=512; closed form at D=64)")
def test_acceptance_parameter_accounting():
    default_count = init_trm_params(TrmConfig()).total_count()
    assert 6_300_000 <= default_count <= 7_700_000, f"default core count {default_count}"

    d, din, mult = 64, 64, 4
    cfg = TrmConfig(hidden_dim=d, n_heads=4, ffn_mult=mult, dropout=0.0, input_dim=din)
    f = mult * d
    per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * d
    expected = din * d + 3 * d + 2 * per_layer + d + (2 * d + 2)
    assert init_trm_params(cfg).total_count() == expected


# ---------------------------------------------------------------------------
# 5. metric oracles


def brute_force_ranks(v):
    v = list(v)
    ranks = np.zeros(len(v))
    for i, vi in enumerate(v):
        less = sum(1 for x in v if x < vi)
        equal = sum(1 for x in v if x == vi)
        ranks[i] = less + (equal + 1) / 2.0
    return ranks


@criterion("metric oracles (720 permutations, ties, 1e-12 references, bootstrap coverage)")
def test_acceptance_metric_oracles():
    # exhaustive permutations, tie-free
    x = np.arange(1.0, 7.0)
    for perm in itertools.permutations(range(6)):
        y = np.array(perm, dtype=np.float64) + 1.0
        np.testing.assert_array_equal(average_ranks(y), brute_force_ranks(y))
        d2 = np.sum((x - y) ** 2)
        assert abs(spearman(x, y) - (1.0 - 6.0 * d2 / (6 * 35))) < 1e-12

    # ties against the brute-force average-rank oracle
    rng = np.random.default_rng(5)
    for _ in range(300):
        xs = rng.integers(0, 5, size=rng.integers(3, 10)).astype(float)
        ys = rng.integers(0, 5, size=len(xs)).astype(float)
        try:
            mine = spearman(xs, ys)
        except MetricUndefinedError:
            continue
        oracle = pearson(brute_force_ranks(xs), brute_force_ranks(ys))
        assert mine == oracle

    # 64-bit reference agreement
    for trial in range(50):
        a = rng.standard_normal(41)
        b = rng.standard_normal(41)
        assert abs(pearson(a, b) - scipy.stats.pearsonr(a, b)[0]) < 1e-12
        assert abs(spearman(a, b) - scipy.stats.spearmanr(a, b).statistic) < 1e-12
        p, g = rng.random(23), rng.random(23)
        assert abs(mae(p, g) - float(np.mean(np.abs(p - g)))) < 1e-12

    # bootstrap coverage on a bivariate Gaussian, rho = 0.5, n = 200
    rho, hits = 0.5, 0
    cov = np.array([[1.0, rho], [rho, 1.0]])
    for trial in range(100):
        trng = np.random.default_rng(1000 + trial)
        sample = trng.multivariate_normal([0.0, 0.0], cov, size=200)
        low, high = bootstrap_ci(pearson, sample[:, 0], sample[:, 1], resamples=1000, seed=trial)
        hits += int(low <= rho <= high)
    assert hits >= 90, f"bootstrap coverage {hits}/100"


# ---------------------------------------------------------------------------
# 6. learnability


LEARN_MODEL = dict(
    hidden_dim=64,
    n_heads=4,
    ffn_mult=4,
    l_cycles=4,
    external_steps=1,
    dropout=0.1,
    max_seq_len=64,
    input_dim=64,
)
LEARN_TRAIN = dict(
    lr=1.5e-3,
    batch_size=64,
    max_epochs=10,
    patience=10,
    freeze_spec="embed.*",
    warmup_steps=100,
)


def _train_and_test_spearman(model_kw, train_kw, data_seed, n_train=5000, n_test=1000):
    tr = synth_task(n_train, seq_lens=(6, 6), d_in=64, noise_sigma=0.05, seed=data_seed)
    va = synth_task(500, seq_lens=(6, 6), d_in=64, noise_sigma=0.05, seed=data_seed + 7000)
    te = synth_task(n_test, seq_lens=(6, 6), d_in=64, noise_sigma=0.05, seed=data_seed + 9000)
    model = QeModel(TrmConfig(**model_kw))
    train(model, tr, va, TrainConfig(**train_kw))
    preds = model.predict([(e.source_emb, e.translation_emb) for e in te])
    gold = [e.record.target01 for e in te]
    return spearman(preds, gold)


@criterion("learnability: test Spearman > 0.9 within 5 CPU-min, 9/10 seeds")
def test_acceptance_learnability():
    results = []
    for seed in range(10):
        t0 = time.perf_counter()
        rho = _train_and_test_spearman(
            dict(LEARN_MODEL, seed=seed),
            dict(LEARN_TRAIN, seed=seed),
            data_seed=100 + seed,
        )
        elapsed = time.perf_counter() - t0
        ok = rho > 0.9 and elapsed < 300.0
        results.append(ok)
        print(f"  seed {seed}: spearman={rho:.3f} wall={elapsed:.0f}s {'ok' if ok else 'MISS'}")
    assert sum(results) >= 9, f"only {sum(results)}/10 seeds reached 0.9 in budget"


# ---------------------------------------------------------------------------
# 7. qualitative recursion replication


@criterion("recursion grids: mean Spearman at N=1 beats N=4 (L=4); L-grid reported")
def test_acceptance_recursion_grids():
    # both arms get the full desk training budget (the comparison is only
    # meaningful once the single-step model has actually converged)
    seeds = (0, 1, 2)
    n1, n4 = [], []
    for seed in seeds:
        for steps, bucket in ((1, n1), (4, n4)):
            bucket.append(
                _train_and_test_spearman(
                    dict(LEARN_MODEL, l_cycles=4, external_steps=steps, seed=seed),
                    dict(LEARN_TRAIN, seed=seed),
                    data_seed=500 + seed,
                )
            )
    mean_n1, mean_n4 = float(np.mean(n1)), float(np.mean(n4))
    print(f"  external steps at L=4: N=1 mean={mean_n1:.3f} {np.round(n1, 3)}, N=4 mean={mean_n4:.3f} {np.round(n4, 3)}")

    l_grid = {}
    for l in (1, 2, 4, 6):
        l_grid[l] = _train_and_test_spearman(
            dict(LEARN_MODEL, l_cycles=l, external_steps=1, seed=0),
            dict(LEARN_TRAIN, seed=0),
            data_seed=600,
        )
    print(
        "  L-grid (N=1, reported without ordering requirement): "
        + ", ".join(f"L={l}: {v:.3f}" for l, v in l_grid.items())
    )

    assert mean_n1 > mean_n4, f"N=1 mean {mean_n1:.3f} must exceed N=4 mean {mean_n4:.3f}"


# ---------------------------------------------------------------------------
# 8. determinism through the CLI


@criterion("determinism: repeated train+evaluate gives byte-identical EvalReport JSON")
def test_acceptance_cli_determinism(tmp_path):
    emb = {}
    for split, n, seed in (("train", 96, 1), ("val", 32, 2), ("test", 48, 3)):
        p = tmp_path / f"{split}.temb"
        write_embedding_file(p, synth_task(n, seq_lens=(3, 5), d_in=16, noise_sigma=0.05, seed=seed, n_pairs=2))
        emb[split] = p
    config = """
[data]
train = "train.temb"
val = "val.temb"
test = "test.temb"
eval_resamples = 200

[model]
hidden_dim = 16
n_heads = 2
ffn_mult = 2
l_cycles = 2
external_steps = 1
dropout = 0.1
seed = 0

[train]
lr = 1e-3
batch_size = 16
max_epochs = 3
seed = 0

[out]
dir = "OUTDIR"
"""
    reports = []
    for run in ("runA", "runB"):
        cfg_path = tmp_path / f"{run}.toml"
        cfg_path.write_text(config.replace("OUTDIR", str(tmp_path / run)), encoding="utf-8")
        assert main(["train", "--config", str(cfg_path)]) == 0
        reports.append((tmp_path / run / "eval_report.json").read_bytes())
        # evaluate the saved checkpoint again through the separate command
        assert (
            main(
                [
                    "evaluate",
                    "--checkpoint",
                    str(tmp_path / run / "model.trmckpt"),
                    "--test",
                    str(emb["test"]),
                    "--out",
                    str(tmp_path / run / "re-eval"),
                    "--resamples",
                    "200",
                ]
            )
            == 0
        )
        reports.append((tmp_path / run / "re-eval" / "eval_report.json").read_bytes())
    assert reports[0] == reports[2], "train runs differ"
    assert reports[1] == reports[3], "evaluate runs differ"
    assert json.loads(reports[0].decode())["overall"] == json.loads(reports[1].decode())["overall"]


# ---------------------------------------------------------------------------
# 9. format robustness


@criterion("embedding format: 1000 fuzzed round-trips bit-exact; corrupt fixtures rejected")
def test_acceptance_format_robustness(tmp_path):
    rng = np.random.default_rng(6)
    examples = []
    for i in range(1000):
        d_in = 12
        s = int(rng.integers(0, 7))
        t = int(rng.integers(0 if s else 1, 7))
        scale = np.exp2(rng.integers(-30, 30)).astype(np.float32)
        examples.append(
            EmbeddedExample(
                QeRecord(f"pair-{rng.integers(0, 5)}", "", "", float(rng.standard_normal() * 3)),
                (rng.standard_normal((s, d_in)) * scale).astype(np.float32),
                (rng.standard_normal((t, d_in)) * scale).astype(np.float32),
                "fuzz-enc",
            )
        )
    path = tmp_path / "fuzz.temb"
    write_embedding_file(path, examples, d_in=12)
    _, loaded = read_embedding_file(path)
    assert len(loaded) == 1000
    for a, b in zip(examples, loaded):
        assert a.record.pair_id == b.record.pair_id
        assert np.float32(a.record.da_z).tobytes() == np.float32(b.record.da_z).tobytes()
        assert a.source_emb.tobytes() == b.source_emb.tobytes()
        assert a.translation_emb.tobytes() == b.translation_emb.tobytes()

    raw = path.read_bytes()

    bad_magic = tmp_path / "m.temb"
    bad_magic.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(EmbeddingFormatError):
        read_embedding_file(bad_magic)

    bad_version = tmp_path / "v.temb"
    bad_version.write_bytes(raw[:8] + struct.pack("<I", 9) + raw[12:])
    with pytest.raises(EmbeddingFormatError):
        read_embedding_file(bad_version)

    truncated = tmp_path / "t.temb"
    truncated.write_bytes(raw[: len(raw) - 3])
    with pytest.raises(EmbeddingCorruptError) as e1:
        read_embedding_file(truncated)
    assert e1.value.record_index == 999

    inflated = tmp_path / "c.temb"
    inflated.write_bytes(raw[:16] + struct.pack("<Q", 1001) + raw[24:])
    with pytest.raises(EmbeddingCorruptError) as e2:
        read_embedding_file(inflated)
    assert e2.value.record_index == 1000

    trailing = tmp_path / "g.temb"
    trailing.write_bytes(raw + b"\x00")
    with pytest.raises(EmbeddingCorruptError):
        read_embedding_file(trailing)

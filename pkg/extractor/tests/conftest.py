import json
import struct
from pathlib import Path

import numpy as np
import pytest
import torch


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory) -> str:
    """A tiny random-weight BERT-architecture encoder saved locally.

    The model hub is unreachable in the test environment, so this stands in
    for a small public multilingual encoder; the extractor loads it through
    the same AutoModel/AutoTokenizer path it uses for hub ids.
    """
    from transformers import BertConfig, BertModel, BertTokenizer

    d = tmp_path_factory.mktemp("tiny-encoder")
    vocab = (
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        + list("abcdefghijklmnopqrstuvwxyz0123456789")
        + ["##" + c for c in "abcdefghijklmnopqrstuvwxyz"]
        + ["the", "cat", "sat", "on", "mat", "dog", "ran", "नम", "##स्ते", "தமிழ்"]
    )
    (d / "vocab.txt").write_text("\n".join(vocab), encoding="utf-8")
    tokenizer = BertTokenizer(str(d / "vocab.txt"), do_lower_case=True)
    torch.manual_seed(7)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    model = BertModel(config)
    tokenizer.save_pretrained(str(d))
    model.save_pretrained(str(d))
    return str(d)


def read_temb(path):
    """Minimal TRMQEMB1 reader implementing the documented byte layout.

    Kept independent of both the extractor's writer and the training
    stack's reader so the tests check the format contract itself.
    """
    raw = Path(path).read_bytes()
    assert raw[:8] == b"TRMQEMB1"
    version, d_in, count = struct.unpack_from("<IIQ", raw, 8)
    assert version == 1
    (mlen,) = struct.unpack_from("<I", raw, 24)
    meta = json.loads(raw[28 : 28 + mlen].decode("utf-8"))
    off = 28 + mlen
    examples = []
    for _ in range(count):
        (plen,) = struct.unpack_from("<I", raw, off)
        off += 4
        pair_id = raw[off : off + plen].decode("utf-8")
        off += plen
        da_z, s, t = struct.unpack_from("<fII", raw, off)
        off += 12
        src = np.frombuffer(raw, dtype="<f4", count=s * d_in, offset=off).reshape(s, d_in)
        off += 4 * s * d_in
        tr = np.frombuffer(raw, dtype="<f4", count=t * d_in, offset=off).reshape(t, d_in)
        off += 4 * t * d_in
        examples.append((pair_id, da_z, src, tr))
    assert off == len(raw), "trailing bytes"
    meta["d_in"] = d_in
    return meta, examples


@pytest.fixture()
def dataset_tsv(tmp_path) -> Path:
    rows = [
        ("en-ta", "the cat sat on the mat", "cat on mat sat", 0.4),
        ("en-ta", "the dog ran", "dog ran ran the", -0.2),
        ("en-hi", "cat and dog", "the cat the dog", 1.1),
    ]
    p = tmp_path / "data.tsv"
    p.write_text("".join("\t".join(str(c) for c in r) + "\n" for r in rows), encoding="utf-8")
    return p

"""Smoke test for the hsvae_py extension module.

Build first:  maturin develop -m crates/python/Cargo.toml --release
"""

import math
import os
import tempfile

import hsvae_py as hv


def main():
    corpus = hv.Corpus.synth(classes=2, sentences_per_class=60, seed=3)
    assert len(corpus) == 120 and corpus.vocab_size == 203
    assert sorted(set(corpus.labels)) == [0, 1]
    print("corpus:", len(corpus), "sentences,", corpus.vocab_size, "tokens")

    cfg = hv.ModelConfig("HSVAE", corpus.vocab_size, latent_dim=4, hidden_dim=16, embed_dim=16, alpha=8, beta=2)
    assert cfg.variant == "HSVAE" and cfg.latent_dim == 4
    try:
        hv.ModelConfig("HSVAE", corpus.vocab_size, latent_dim=0)
        raise AssertionError("invalid config accepted")
    except ValueError as e:
        print("rejected:", e)

    model = hv.Model(cfg, seed=0)
    records = model.train(corpus.sentences, epochs=2)
    assert [r["epoch"] for r in records] == [1, 2]
    assert all(math.isfinite(r["objective"]) for r in records)
    print("objective per epoch:", [round(r["objective"], 3) for r in records])

    codes = model.latent_codes(corpus.sentences, mode="posterior-sample", seed=1)
    assert len(codes) == 120 and all(len(c) == 4 for c in codes)
    rep = model.average_hoyer(corpus.sentences, seed=1)
    assert 0.0 <= rep["average_hoyer"] <= 1.0
    assert abs(hv.average_hoyer(codes) - rep["average_hoyer"]) < 1e-12
    assert abs(hv.hoyer([1.0, 0.0, 0.0, 0.0]) - 1.0) < 1e-12
    print("average Hoyer:", round(rep["average_hoyer"], 4))

    terms = model.objective(corpus.sentences[:16])
    assert terms["kl_gamma"] > 0.0 and terms["mmd"] == 0.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.ckpt")
        model.save(path)
        again = hv.Model.load(path)
        assert again.epoch == 2 and again.config.to_dict() == cfg.to_dict()
        assert again.checksum() == hv.Model.load(path).checksum()

    train, _, test = corpus.split(40, 10, seed=0)
    probe = model.probe(train, test, k=5, epochs=1)
    assert 0.0 <= probe["accuracy"] <= 1.0 and len(probe["losses"]) == 1
    patterns, dist = model.gamma_class(test)
    assert len(patterns) == 2 and dist >= 0.0
    kl = corpus.class_kl()
    assert kl["mean_off_diagonal"] > 0.0

    tokens = model.generate(model.prior_sample(seed=5), max_len=8)
    print("decoded:", " ".join(corpus.decode(tokens)))

    assert hv.cli(["--help"]) == 0
    assert hv.cli(["frobnicate"]) == 1
    print("smoke test passed")


if __name__ == "__main__":
    main()

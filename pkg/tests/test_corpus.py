import numpy as np
import pytest

from ftmkit.corpus import (
    CorpusConfig,
    UtteranceRecord,
    class_direction,
    generate_corpus,
    load_corpus,
    load_manifest,
)
from ftmkit.errors import ConfigError, CorruptRecordError, FormatError, MissingFileError
from ftmkit.features import FeatureSequence
from ftmkit.lattice import Lattice, LatticeNode, load_lattice, save_lattice, validate_lattice


def small_config(**overrides):
    base = dict(
        seed=7,
        train_true=6,
        train_false=4,
        cv_true=3,
        cv_false=2,
        eval_true=5,
        eval_false=4,
        mean_duration_true_s=1.5,
        mean_duration_false_s=2.0,
        max_duration_s=3.0,
    )
    base.update(overrides)
    return CorpusConfig(**base)


# ---------------------------------------------------------------- lattice


def chain_lattice():
    nodes = [LatticeNode(i, 0.9, -1.0, 0.0, 0.1) for i in range(3)]
    return Lattice(nodes, [(0, 1), (1, 2)])


def test_lattice_endpoints_derived():
    lat = chain_lattice()
    assert lat.start == 0
    assert lat.end == 2


def test_lattice_rejects_cycle():
    nodes = [LatticeNode(i, 0.5, 0.0, 0.0, 0.1) for i in range(3)]
    with pytest.raises(FormatError):
        Lattice(nodes, [(0, 1), (1, 2), (2, 1)])


def test_lattice_rejects_disconnected_node():
    nodes = [LatticeNode(i, 0.5, 0.0, 0.0, 0.1) for i in range(4)]
    # node 3 dangles off the end node: reachable, but nothing flows to the exit
    with pytest.raises(FormatError):
        Lattice(nodes, [(0, 1), (1, 2)], start=0, end=2)


def test_lattice_node_validation():
    with pytest.raises(FormatError):
        LatticeNode(0, 1.5, 0.0, 0.0, 0.1)
    with pytest.raises(FormatError):
        LatticeNode(0, 0.5, 0.0, 0.0, -0.1)
    with pytest.raises(FormatError):
        LatticeNode(-1, 0.5, 0.0, 0.0, 0.1)


def test_lattice_text_round_trip(tmp_path):
    lat = chain_lattice()
    path = tmp_path / "a.lat"
    save_lattice(lat, path)
    back = load_lattice(path)
    assert back.num_nodes == 3
    assert back.edges == [(0, 1), (1, 2)]
    assert back.start == 0 and back.end == 2
    assert back.nodes[1].word_id == 1
    assert back.nodes[1].posterior == pytest.approx(0.9)


def test_lattice_text_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.lat"
    bad.write_text("1 2 3\n")
    with pytest.raises(FormatError):
        load_lattice(bad)
    ooo = tmp_path / "ooo.lat"
    ooo.write_text("0 0.5 0.0 0.0 0.1\n0 1\n1 0.5 0.0 0.0 0.1\n")
    with pytest.raises(FormatError):
        load_lattice(ooo)


# ---------------------------------------------------------------- generator


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(train_true=0)
    with pytest.raises(ConfigError):
        small_config(delta=-0.5)
    with pytest.raises(ConfigError):
        small_config(min_duration_s=0.3)


def test_default_config_mirrors_reference_shape():
    cfg = CorpusConfig()
    assert (cfg.train_true, cfg.train_false) == (4000, 900)
    assert (cfg.eval_true, cfg.eval_false) == (1300, 750)
    assert cfg.mean_duration_false_s == pytest.approx(5.44)


def test_generate_and_load_round_trip(tmp_path):
    cfg = small_config()
    summary = generate_corpus(cfg, tmp_path)
    assert summary["train"] == {"true": 6, "false": 4}
    corpus = load_corpus(tmp_path)
    assert len(corpus["train"]) == 10
    assert len(corpus["cv"]) == 5
    assert len(corpus["eval"]) == 9
    labels = [r.class_label for r in corpus["train"]]
    assert labels == [1] * 6 + [0] * 4
    for rec in corpus["train"]:
        assert rec.features.num_frames > 50
        assert rec.duration_s == pytest.approx(rec.features.num_frames / 100)
        assert rec.lattice is not None
        validate_lattice(rec.lattice)


def test_generation_is_deterministic(tmp_path):
    cfg = small_config()
    a, b = tmp_path / "a", tmp_path / "b"
    generate_corpus(cfg, a)
    generate_corpus(cfg, b)
    for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_different_seeds_differ(tmp_path):
    generate_corpus(small_config(seed=1), tmp_path / "a")
    generate_corpus(small_config(seed=2), tmp_path / "b")
    a = (tmp_path / "a" / "features" / "train" / "train-00000.ftmf").read_bytes()
    b = (tmp_path / "b" / "features" / "train" / "train-00000.ftmf").read_bytes()
    assert a != b


def test_class_signal_direction_and_prefix(tmp_path):
    cfg = small_config(delta=50.0, ramp_frames=100, offset_sigma=0.01, ar_sigma=0.01,
                       white_sigma=0.01, ar_coeff=0.0)
    generate_corpus(cfg, tmp_path)
    corpus = load_corpus(tmp_path, with_lattices=False)
    direction = class_direction(cfg.seed)
    for rec in corpus["train"]:
        proj = rec.features.frames.astype(np.float64) @ direction
        sign = 1.0 if rec.class_label == 1 else -1.0
        # prefix carries no class signal, the tail carries nearly +-delta
        assert np.all(np.abs(proj[:50]) < 5.0)
        assert np.all(sign * proj[150:] > 25.0)


def test_false_lattices_are_larger():
    cfg = CorpusConfig()
    rng = np.random.default_rng(0)
    from ftmkit.corpus import _synth_lattice

    true_sizes = [_synth_lattice(rng, cfg, 1).num_nodes for _ in range(200)]
    false_sizes = [_synth_lattice(rng, cfg, 0).num_nodes for _ in range(200)]
    assert np.mean(false_sizes) > np.mean(true_sizes)


def test_true_posteriors_sharper():
    cfg = CorpusConfig()
    rng = np.random.default_rng(1)
    from ftmkit.corpus import _synth_lattice

    def mean_max_stage_posterior(label):
        vals = []
        for _ in range(100):
            lat = _synth_lattice(rng, cfg, label)
            vals.extend(n.posterior for n in lat.nodes)
        return np.mean(vals)

    assert mean_max_stage_posterior(1) > mean_max_stage_posterior(0)


def test_duration_means_by_class(tmp_path):
    cfg = CorpusConfig(
        seed=3, train_true=150, train_false=150, cv_true=1, cv_false=1,
        eval_true=1, eval_false=1,
    )
    generate_corpus(cfg, tmp_path)
    recs = load_manifest(tmp_path / "manifest_train.txt", with_lattices=False)
    true_d = np.mean([r.duration_s for r in recs if r.class_label == 1])
    false_d = np.mean([r.duration_s for r in recs if r.class_label == 0])
    assert 3.0 < true_d < 4.0
    assert 4.8 < false_d < 6.1


# ---------------------------------------------------------------- loader


def test_load_manifest_missing_feature_file(tmp_path):
    cfg = small_config()
    generate_corpus(cfg, tmp_path)
    (tmp_path / "features" / "train" / "train-00000.ftmf").unlink()
    with pytest.raises(MissingFileError):
        load_manifest(tmp_path / "manifest_train.txt")


def test_load_manifest_rejects_short_record(tmp_path):
    cfg = small_config()
    generate_corpus(cfg, tmp_path)
    manifest = tmp_path / "manifest_train.txt"
    lines = manifest.read_text().splitlines()
    # shrink the first utterance's feature file below the prefix length
    first = lines[0].split(",")
    from ftmkit.features import save_features as save_f

    save_f(FeatureSequence(np.zeros((40, 40), dtype=np.float32)), tmp_path / first[3])
    lines[0] = ",".join([first[0], first[1], "40", first[3], first[4]])
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptRecordError):
        load_manifest(manifest)


def test_load_manifest_rejects_t_mismatch(tmp_path):
    cfg = small_config()
    generate_corpus(cfg, tmp_path)
    manifest = tmp_path / "manifest_train.txt"
    lines = manifest.read_text().splitlines()
    first = lines[0].split(",")
    lines[0] = ",".join([first[0], first[1], str(int(first[2]) + 1), first[3], first[4]])
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptRecordError):
        load_manifest(manifest)


def test_record_invariants():
    with pytest.raises(CorruptRecordError):
        UtteranceRecord(
            id="x", class_label=2, duration_s=1.0,
            features=FeatureSequence(np.zeros((100, 40), dtype=np.float32)),
        )
    with pytest.raises(CorruptRecordError):
        UtteranceRecord(
            id="x", class_label=0, duration_s=0.4,
            features=FeatureSequence(np.zeros((40, 40), dtype=np.float32)),
        )

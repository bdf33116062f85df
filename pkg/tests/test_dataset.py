import json

import numpy as np
import pytest
from scipy import ndimage

from painseeker.dataset import (
    FoldStats,
    PreprocessConfig,
    SyntheticConfig,
    _shift,
    compute_fold_stats,
    generate_synthetic_dataset,
    load_image,
    load_manifest,
    preprocess,
    render_synthetic_image,
    resize_image,
    synthetic_labels,
    to_batch,
)
from painseeker.errors import (
    DuplicateImageId,
    InputError,
    InvalidRegionIndex,
    MalformedRow,
    MissingFile,
    NonFiniteStats,
)

HEADER = "image_path,rat_id,raw_score\n"


def _manifest(tmp_path, body):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + body)
    return p


def test_manifest_binary_labels(tmp_path):
    m = load_manifest(_manifest(tmp_path, "a.png,r1,0\nb.png,r1,1\nc.png,r2,2\n"))
    assert [e.binary_label for e in m.entries] == [0, 1, 1]
    assert m.rat_ids == ["r1", "r2"] and m.root_dir == tmp_path
    assert m.entries[0].image_id == "a"


def test_manifest_unlabeled_split(tmp_path):
    m = load_manifest(_manifest(tmp_path, "a.png,r1,uncertain\nb.png,r1,1\nc.png,r1,2\n"))
    assert len(m.labeled) == 2 and len(m.unlabeled) == 1
    assert len(m.labeled) + len(m.unlabeled) == len(m)
    assert m.unlabeled[0].binary_label is None


def test_manifest_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.csv")
    with pytest.raises(MalformedRow) as e:
        load_manifest(_manifest(tmp_path, "a.png,r1,0\nb.png,r1,3\n"))
    assert e.value.line == 3
    with pytest.raises(MalformedRow):
        load_manifest(_manifest(tmp_path, "a.png,r1\n"))
    with pytest.raises(DuplicateImageId):
        load_manifest(_manifest(tmp_path, "a.png,r1,0\na.png,r2,1\n"))
    bad = tmp_path / "h.csv"
    bad.write_text("path,rat,score\n")
    with pytest.raises(MalformedRow):
        load_manifest(bad)


def test_missing_image(tmp_path):
    m = load_manifest(_manifest(tmp_path, "a.png,r1,0\n"))
    with pytest.raises(MissingFile):
        m.load_sample(m.entries[0])


def test_resize_shapes_and_identity(rng):
    img = rng.random((448, 448, 3)).astype(np.float32)
    assert resize_image(img, 224).shape == (224, 224, 3)
    small = rng.random((64, 64, 3)).astype(np.float32)
    same = resize_image(small, 64)
    assert np.array_equal(same, small) and same is not small
    # 2x downsampling of a constant image stays constant
    assert np.allclose(resize_image(np.full((448, 448, 3), 0.3, np.float32), 224), 0.3, atol=1e-6)


def test_constant_image_standardizes_to_zero():
    img = np.full((100, 80, 3), 0.5, np.float32)
    stats = FoldStats(np.full(3, 0.5), np.full(3, 0.2))
    out = preprocess(img, PreprocessConfig(224), stats)
    assert out.shape == (224, 224, 3) and np.abs(out).max() < 1e-5


def test_fold_stats(rng):
    imgs = [rng.random((8, 8, 3)) for _ in range(4)]
    stats = compute_fold_stats(imgs)
    flat = np.concatenate([i.reshape(-1, 3) for i in imgs])
    assert np.allclose(stats.mean, flat.mean(0)) and np.allclose(stats.std, flat.std(0), atol=1e-5)
    with pytest.raises(NonFiniteStats):
        FoldStats(np.array([np.nan, 0, 0]), np.ones(3))


def test_preprocess_config_divisibility():
    with pytest.raises(InputError):
        PreprocessConfig(target_size=100, downsample=32)


def test_preprocess_deterministic(rng):
    img = rng.random((90, 90, 3)).astype(np.float32)
    stats = FoldStats(np.zeros(3), np.ones(3))
    a, b = preprocess(img, PreprocessConfig(64), stats), preprocess(img, PreprocessConfig(64), stats)
    assert np.array_equal(a, b)
    assert to_batch([a, b]).shape == (2, 3, 64, 64)


def test_synthetic_config_validation():
    with pytest.raises(InvalidRegionIndex):
        SyntheticConfig(informative_regions=(16,))
    with pytest.raises(InvalidRegionIndex):
        SyntheticConfig(informative_regions=(-1,))


def test_synthetic_counts(tmp_path):
    cfg = SyntheticConfig(n_rats=6, images_per_rat=10)
    m = generate_synthetic_dataset(tmp_path, cfg)
    assert len(m) == 60 and m.rat_ids == [f"rat{k}" for k in range(1, 7)]
    for r in m.rat_ids:
        labels = [e.binary_label for e in m.entries if e.rat_id == r]
        assert sum(labels) == 5
    assert load_manifest(tmp_path / "manifest.csv").entries == m.entries
    truth = json.loads((tmp_path / "ground_truth.json").read_text())
    assert truth["informative_regions"] == [0, 1, 2, 3, 4] and truth["grid"] == 4
    assert load_image(tmp_path / "rat1/img0.png").shape == (64, 64, 3)


def test_synthetic_default_size():
    cfg = SyntheticConfig()
    assert cfg.n_rats * cfg.images_per_rat == 600
    assert synthetic_labels(cfg, 1).sum() == 50


def test_synthetic_is_byte_identical(tmp_path):
    cfg = SyntheticConfig(n_rats=2, images_per_rat=4, seed=11)
    generate_synthetic_dataset(tmp_path / "a", cfg)
    generate_synthetic_dataset(tmp_path / "b", cfg)
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def _cell_mask(cfg, regions):
    cell = cfg.image_size // cfg.grid
    mask = np.zeros((cfg.image_size, cfg.image_size), bool)
    for r in regions:
        mask[(r // cfg.grid) * cell:(r // cfg.grid + 1) * cell, (r % cfg.grid) * cell:(r % cfg.grid + 1) * cell] = True
    return mask


def test_label_only_changes_informative_cells():
    cfg = SyntheticConfig(seed=5, informative_regions=(0, 5, 10))
    for rat, idx in [(1, 0), (2, 7), (3, 13)]:
        a = render_synthetic_image(cfg, rat, idx, 0)
        b = render_synthetic_image(cfg, rat, idx, 1)
        diff = np.abs(a - b).max(-1) > 0
        assert diff.any()
        # the same translation is applied to the mask; every changed pixel lies inside it
        allowed = np.zeros_like(diff)
        for dy in range(-cfg.max_shift, cfg.max_shift + 1):
            for dx in range(-cfg.max_shift, cfg.max_shift + 1):
                allowed |= _shift(_cell_mask(cfg, cfg.informative_regions), dy, dx)
        assert not (diff & ~allowed).any()


def test_informative_cells_carry_texture_energy():
    """Mean |Laplacian| inside informative cells is far higher for label 1."""
    cfg = SyntheticConfig(seed=2)
    inner = _cell_mask(cfg, cfg.informative_regions)
    other = _cell_mask(cfg, [r for r in range(16) if r not in cfg.informative_regions])
    e = {0: [], 1: []}
    for idx in range(20):
        label = idx % 2
        g = render_synthetic_image(cfg, 1, idx, label).mean(-1)
        lap = np.abs(ndimage.laplace(g))
        e[label].append((lap[inner].mean(), lap[other].mean()))
    pain, calm = np.array(e[1]), np.array(e[0])
    assert pain[:, 0].min() > 3 * calm[:, 0].max()
    # outside the informative cells both classes look alike
    assert pain[:, 1].mean() == pytest.approx(calm[:, 1].mean(), rel=0.25)

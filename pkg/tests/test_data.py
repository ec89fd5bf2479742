import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from injection.config import ModelConfig, RandomSource
from injection.data import (
    Dataset, ToySpec, augment, encode_label, load_folders, make_toy_dataset, resize_size,
    sample_batch, to_pil, write_toy_dataset,
)
from injection.errors import DatasetError

CFG32 = ModelConfig(image_size=32, num_domains=2, depth=3)


def save_images(folder, count, size=40, seed=0):
    folder.mkdir(parents=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        Image.fromarray(rng.integers(0, 256, (size, size, 3), dtype=np.uint8)).save(folder / f"{i}.png")


def test_load_folders_counts_and_range(tmp_path):
    save_images(tmp_path / "a", 3)
    save_images(tmp_path / "b", 5, seed=1)
    ds = load_folders(tmp_path, CFG32)
    assert ds.num_domains == 2 and ds.sizes == (3, 5)
    assert ds.labels.tolist() == [0] * 3 + [1] * 5
    assert all(img.min() >= -1 and img.max() <= 1 and img.shape[0] == 3 for img in ds.images)


def test_load_folders_lexicographic(tmp_path):
    save_images(tmp_path / "face", 1)
    save_images(tmp_path / "emoji", 1)
    assert load_folders(tmp_path, CFG32).names == ["emoji", "face"]


def test_load_folders_single_domain(tmp_path):
    save_images(tmp_path / "only", 2)
    with pytest.raises(DatasetError):
        load_folders(tmp_path, CFG32)


def test_load_folders_names_bad_file(tmp_path):
    save_images(tmp_path / "a", 1)
    save_images(tmp_path / "b", 1)
    (tmp_path / "b" / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DatasetError, match="broken.png"):
        load_folders(tmp_path, CFG32)


def test_pixel_scaling_endpoints(tmp_path):
    for name, value in [("black", 0), ("white", 255)]:
        (tmp_path / name).mkdir()
        Image.new("RGB", (8, 8), (value,) * 3).save(tmp_path / name / "x.png")
    ds = load_folders(tmp_path, CFG32)
    assert float(ds.domain_images(0)[0].min()) == -1.0
    assert float(ds.domain_images(1)[0].max()) == 1.0


@pytest.mark.parametrize("size, expected", [(128, 138), (64, 69), (32, 35), (256, 276)])
def test_resize_size(size, expected):
    assert resize_size(size) == expected


def test_augment_default_geometry():
    image = torch.rand(3, 128, 128) * 2 - 1
    out = augment(image, RandomSource(0), ModelConfig())
    assert out.shape == (3, 128, 128)


def test_augment_crop_is_a_window_of_the_resized_image():
    # a 138x138 input is not resized, so the output must be an exact (possibly flipped) crop
    image = torch.rand(3, 138, 138) * 2 - 1
    out = augment(image, RandomSource(3), ModelConfig())
    windows = [image[:, t:t + 128, l:l + 128] for t in range(11) for l in range(11)]
    assert any(torch.equal(out, w) or torch.equal(out, w.flip(-1)) for w in windows)


def test_augment_deterministic_under_seed():
    image = torch.rand(3, 50, 50) * 2 - 1
    a = augment(image, RandomSource(5, "data"), CFG32)
    b = augment(image, RandomSource(5, "data"), CFG32)
    assert torch.equal(a, b)


def test_augment_flips_about_half_the_time():
    image = torch.linspace(-1, 1, 35).expand(3, 35, 35).contiguous()
    rng = RandomSource(0)
    flips = sum(int(augment(image, rng, CFG32)[0, 0, 0] > 0) for _ in range(2000))
    assert abs(flips / 2000 - 0.5) < 0.05


@settings(max_examples=25, deadline=None)
@given(h=st.integers(8, 80), w=st.integers(8, 80), c=st.sampled_from([1, 3]), seed=st.integers(0, 999))
def test_augment_preserves_range_and_channels(h, w, c, seed):
    image = torch.rand(c, h, w, generator=torch.Generator().manual_seed(seed)) * 2 - 1
    out = augment(image, RandomSource(seed), ModelConfig(image_size=16, in_channels=c, depth=2))
    assert out.shape == (c, 16, 16)
    assert out.min() >= -1 and out.max() <= 1


@pytest.mark.parametrize("index, k, expected", [
    (1, 3, [0, 1, 0]), (0, 2, [1, 0]), (4, 5, [0, 0, 0, 0, 1]),
])
def test_encode_label_examples(index, k, expected):
    assert encode_label(index, k).tolist() == expected


@settings(max_examples=50, deadline=None)
@given(k=st.integers(1, 20), data=st.data())
def test_encode_label_sums_to_one(k, data):
    assert float(encode_label(data.draw(st.integers(0, k - 1)), k).sum()) == 1.0


@pytest.mark.parametrize("index", [-1, 3])
def test_encode_label_out_of_range(index):
    with pytest.raises(IndexError):
        encode_label(index, 3)


@pytest.fixture(scope="module")
def toy():
    return make_toy_dataset(ToySpec(), RandomSource(0, "toy"))


def test_sample_batch_shapes_and_determinism(toy):
    a = sample_batch(toy, 16, RandomSource(1, "data"), CFG32)
    b = sample_batch(toy, 16, RandomSource(1, "data"), CFG32)
    assert a.images.shape == (16, 3, 32, 32)
    assert a.labels.shape == a.targets.shape == (16,)
    assert all(torch.equal(u, v) for u, v in zip(a, b))
    assert a.images.min() >= -1 and a.images.max() <= 1


def test_sample_batch_target_frequencies():
    tiny = Dataset([("a", [torch.zeros(1, 2, 2)] * 3), ("b", [torch.ones(1, 2, 2)] * 3)], 2)
    batch = sample_batch(tiny, 100_000, RandomSource(2), ModelConfig(image_size=2, in_channels=1, depth=1))
    freq = batch.targets.float().mean().item()
    assert abs(freq - 0.5) <= 0.01
    # targets are drawn independently of the true labels
    same = (batch.targets == batch.labels).float().mean().item()
    assert abs(same - 0.5) <= 0.01


def test_sample_batch_rejects_empty():
    ds = Dataset([("a", []), ("b", [])], 32)
    with pytest.raises(DatasetError):
        sample_batch(ds, 4, RandomSource(0))


def test_toy_dataset_size_and_determinism(toy):
    assert len(toy) == 64 and toy.sizes == (32, 32)
    again = make_toy_dataset(ToySpec(), RandomSource(0, "toy"))
    assert all(torch.equal(a, b) for a, b in zip(toy.images, again.images))
    other = make_toy_dataset(ToySpec(), RandomSource(1, "toy"))
    assert not all(torch.equal(a, b) for a, b in zip(toy.images, other.images))
    assert all(img.shape == (3, 32, 32) and img.min() >= -1 and img.max() <= 1 for img in toy.images)


def test_toy_samples_vary_within_a_domain(toy):
    imgs = toy.domain_images(0)
    assert len({img.numpy().tobytes() for img in imgs}) == len(imgs)


@pytest.mark.parametrize("k", [2, 4, 8])
def test_mean_colour_linear_probe_separates_domains(k):
    ds = make_toy_dataset(ToySpec(num_domains=k, per_domain=40), RandomSource(3, "toy"))
    feats = np.stack([img.mean(dim=(1, 2)).numpy() for img in ds.images]).astype(np.float64)
    labels = ds.labels.numpy()
    train = np.arange(len(ds)) % 2 == 0
    # nearest-centroid probe (linear scores mu_k.x - |mu_k|^2 / 2) fitted on even indices
    centroids = np.stack([feats[train & (labels == j)].mean(0) for j in range(k)])
    predicted = (feats[~train] @ centroids.T - 0.5 * (centroids ** 2).sum(1)).argmax(1)
    assert (predicted == labels[~train]).mean() == 1.0


def test_write_toy_dataset_round_trip(tmp_path):
    spec = ToySpec(per_domain=4, image_size=16)
    manifest = write_toy_dataset(spec, 11, tmp_path)
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["seed"] == 11 and on_disk["toy_spec"]["per_domain"] == 4
    assert on_disk["counts"] == {"domain0": 4, "domain1": 4} == manifest["counts"]
    ds = load_folders(tmp_path, ModelConfig(image_size=16, depth=1))
    assert ds.sizes == (4, 4)
    direct = make_toy_dataset(spec, RandomSource(11, "toy"))
    # PNG quantisation is the only difference
    assert max(float((a - b).abs().max()) for a, b in zip(ds.images, direct.images)) <= 1 / 127.5


def test_to_pil_round_trips_quantised_values():
    img = torch.randint(0, 256, (3, 5, 5)).float() / 127.5 - 1
    back = torch.from_numpy(np.asarray(to_pil(img), dtype=np.float32) / 127.5 - 1).permute(2, 0, 1)
    assert torch.allclose(back, img, atol=1e-6)

import pytest
import torch

from conftest import record_for
from dadkit.adversary import AttackConfig, Augmentation, Norm
from dadkit.cache import (
    MAGIC,
    CacheFile,
    CacheHeader,
    build_cache,
    cache_dataset,
    check_fingerprints,
    decode_cache,
    encode_cache,
    read_cache,
    verify_cache,
    write_cache,
)
from dadkit.errors import CacheFormatError
from dadkit.model import LinearClassifier

CFG = AttackConfig(epsilon=0.1, steps=2, step_size=0.05)


@pytest.fixture
def cache(linear_model, tiny_disc, tiny_dataset) -> CacheFile:
    return build_cache(tiny_dataset, linear_model, tiny_disc, CFG, seed=7, batch_size=5, keep_rejected=True)


def test_same_seed_same_bytes(tmp_path, linear_model, tiny_disc, tiny_dataset):
    a = write_cache(build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 7, batch_size=5), tmp_path / "a.bin")
    b = write_cache(build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 7, batch_size=5), tmp_path / "b.bin")
    assert a.read_bytes() == b.read_bytes()


def test_worker_count_does_not_change_the_file(linear_model, tiny_disc, tiny_dataset):
    kwargs = dict(batch_size=3, retries=2, keep_rejected=True)
    single = build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 1, workers=1, **kwargs)
    pooled = build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 1, workers=4, **kwargs)
    assert encode_cache(single) == encode_cache(pooled)


def test_record_counts(linear_model, tiny_disc, tiny_dataset, cache):
    assert len(cache) == len(tiny_dataset)
    assert [r.sample_id for r in cache] == sorted(tiny_dataset.ids)
    accepted_only = build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 7, batch_size=5)
    assert len(accepted_only) <= len(tiny_dataset)
    assert all(r.accepted for r in accepted_only)
    assert len(accepted_only) == len(cache.accepted())


def test_retries_never_exceed_one_record_per_sample(linear_model, tiny_disc, tiny_dataset):
    retried = build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 7, retries=3, keep_rejected=True)
    assert len(retried) == len(tiny_dataset)
    single = build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 7, keep_rejected=True)
    assert len(retried.accepted()) >= len(single.accepted())
    with pytest.raises(ValueError):
        build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 7, retries=0)


def test_reloaded_cache_reverifies(tmp_path, linear_model, cache):
    loaded = read_cache(write_cache(cache, tmp_path / "c.bin"))
    report = verify_cache(loaded, linear_model)
    assert report.total == len(cache)
    assert report.agreement == 1.0
    assert report.accepted_passing == report.accepted == len(cache.accepted())


def test_accepted_records_carry_the_label_argmax(cache):
    for record in cache.accepted():
        assert int(record.teacher_logits_aug.argmax()) == record.label
        assert record.image.min() >= 0 and record.image.max() <= 1


def test_sampled_augmentation_header(linear_model, tiny_disc, tiny_dataset):
    sampled = build_cache(tiny_dataset, linear_model, tiny_disc, CFG, 0, augmentation=Augmentation.SAMPLE)
    decoded = decode_cache(encode_cache(sampled))
    assert decoded.header.augmentation is Augmentation.SAMPLE


def test_header_and_records_survive_the_file(tmp_path, cache):
    loaded = read_cache(write_cache(cache, tmp_path / "c.bin"))
    assert loaded.header == cache.header
    assert loaded.header.attack.norm is Norm.LINF
    for ours, theirs in zip(cache, loaded):
        assert (ours.sample_id, ours.label, ours.accepted, ours.seed) == (
            theirs.sample_id,
            theirs.label,
            theirs.accepted,
            theirs.seed,
        )
        assert torch.equal(ours.image, theirs.image)
        assert torch.equal(ours.teacher_logits_clean, theirs.teacher_logits_clean)


def test_corrupt_files_are_rejected(tmp_path, cache):
    data = encode_cache(cache)
    assert data.startswith(MAGIC)
    with pytest.raises(CacheFormatError, match="magic"):
        decode_cache(b"NOTCACHE" + data[8:])
    with pytest.raises(CacheFormatError, match="version"):
        decode_cache(data[:8] + (99).to_bytes(2, "little") + data[10:])
    with pytest.raises(CacheFormatError, match="Truncated"):
        decode_cache(data[:-3])
    with pytest.raises(CacheFormatError, match="trailing"):
        decode_cache(data + b"\x00")
    with pytest.raises(CacheFormatError):
        decode_cache(b"")
    with pytest.raises(FileNotFoundError):
        read_cache(tmp_path / "missing.bin")


def test_fingerprint_check(linear_model, tiny_disc, cache):
    assert check_fingerprints(cache, teacher=linear_model, disc=tiny_disc) == []
    torch.manual_seed(99)
    other = LinearClassifier(3, (3, 8, 8))
    problems = check_fingerprints(cache, teacher=other)
    assert len(problems) == 1
    assert "teacher" in problems[0]


def test_cache_dataset_keeps_accepted_images(tiny_dataset):
    records = [record_for(tiny_dataset, i, accepted=i != 1) for i in range(4)]
    header = CacheHeader(teacher_fingerprint=bytes(32), discretizer_fingerprint=bytes(32), attack=CFG, seed=0)
    ds = cache_dataset(CacheFile(header=header, records=records), name="aug")
    assert len(ds) == 3
    assert ds.num_classes == tiny_dataset.num_classes
    assert ds.labels().tolist() == [tiny_dataset[i].label for i in (0, 2, 3)]
    assert torch.equal(ds.images()[1], tiny_dataset[2].image * 0.5)
    with pytest.raises(ValueError, match="no accepted"):
        cache_dataset(CacheFile(header=header, records=records[1:2]))

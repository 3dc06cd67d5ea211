"""
Tests for phantoms, preprocessing, the MMV1 format, checkpoints and case
manifests.
"""

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.backbone.config import BackboneConfig
from apps.backbone.services import build_network
from apps.core.exceptions import (
    CheckpointError,
    DigestMismatchError,
    NormalizationError,
    ParameterMismatchError,
    PhantomSpecError,
    VolumeFormatError,
)
from apps.core.rng import Rng
from apps.volumes.checkpoints import (
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    fnv1a64,
    load_checkpoint,
    restore,
    save_checkpoint,
)
from apps.volumes.formats import read_volume, volume_from_bytes, volume_to_bytes, write_mask, write_volume
from apps.volumes.models import MultiModalVolume, PhantomSpec, TumorRegion
from apps.volumes.phantoms import gen_phantom
from apps.volumes.preprocessing import adjust_intensity, augment, mirror, normalize
from apps.volumes.services import MANIFEST_NAME, case_seed, generate_cases, load_cases, read_manifest
from tests.utils import FIXTURES, random_volume


def golden_volume() -> MultiModalVolume:
    voxels = np.array([[0.0, 0.5], [1.0, 0.5], [2.0, 0.5], [3.0, 0.5]]).reshape(4, 1, 1, 2)
    label = np.array([[1, 1, 1], [0, 1, 0]], dtype=np.uint8).reshape(1, 1, 2, 3)
    return MultiModalVolume(voxels=voxels, label=label)


class PhantomTestCase(SimpleTestCase):
    """Synthetic tumor phantoms."""

    def test_same_seed_is_bit_identical(self):
        first = gen_phantom(PhantomSpec(seed=3, size=16, wt_radius=(3.0, 4.0), tc_radius=(2.0, 2.5), et_radius=(1.0, 1.5)))
        second = gen_phantom(PhantomSpec(seed=3, size=16, wt_radius=(3.0, 4.0), tc_radius=(2.0, 2.5), et_radius=(1.0, 1.5)))
        np.testing.assert_array_equal(first.voxels, second.voxels)
        np.testing.assert_array_equal(first.label, second.label)

    def test_different_seeds_differ(self):
        first = gen_phantom(PhantomSpec.for_size(1, 16))
        second = gen_phantom(PhantomSpec.for_size(2, 16))
        self.assertFalse(np.array_equal(first.voxels, second.voxels))

    def test_labels_are_nested_and_nonempty(self):
        for seed in range(4):
            volume = gen_phantom(PhantomSpec(seed=seed))
            self.assertTrue(volume.is_nested())
            self.assertGreater(int(volume.label[..., TumorRegion.ET].sum()), 0)
            self.assertEqual(volume.extents, (32, 32, 32))

    def test_random_specs_stay_nested(self):
        rng = Rng(21)
        for trial in range(100):
            et_low = float(rng.uniform(0.5, 1.0))
            et_high = et_low + float(rng.uniform(0.0, 0.5))
            tc_low = et_high + float(rng.uniform(0.1, 1.0))
            tc_high = tc_low + float(rng.uniform(0.0, 0.5))
            wt_low = tc_high + float(rng.uniform(0.1, 1.0))
            low = int(rng.integers(0, 3))
            spec = PhantomSpec(
                seed=int(rng.integers(0, 1 << 30)),
                size=int(rng.integers(8, 17)),
                tumor_count=(low, low + int(rng.integers(0, 3))),
                wt_radius=(wt_low, wt_low + float(rng.uniform(0.0, 1.0))),
                tc_radius=(tc_low, tc_high),
                et_radius=(et_low, et_high),
                noise_sigma=float(rng.uniform(0.0, 0.2)),
            )
            label = gen_phantom(spec).label.astype(bool)
            et, wt, tc = (label[..., region] for region in (TumorRegion.ET, TumorRegion.WT, TumorRegion.TC))
            self.assertFalse(np.any(et & ~tc), trial)
            self.assertFalse(np.any(tc & ~wt), trial)

    def test_zero_contrast_without_noise_is_background(self):
        spec = PhantomSpec(seed=5, contrast=np.zeros((4, 3)), noise_sigma=0.0)
        volume = gen_phantom(spec)
        self.assertFalse(np.any(volume.label))
        for i, level in enumerate(spec.background):
            np.testing.assert_array_equal(volume.voxels[i], np.full((32, 32, 32), level))

    def test_enhancing_tumor_is_bright_in_t1ce(self):
        volume = gen_phantom(PhantomSpec(seed=0, noise_sigma=0.0))
        et = volume.region(TumorRegion.ET)
        self.assertGreater(volume.voxels[2][et].mean(), volume.voxels[2][~volume.region(TumorRegion.WT)].mean())

    def test_invalid_nesting(self):
        with self.assertRaises(PhantomSpecError):
            gen_phantom(PhantomSpec(tc_radius=(5.0, 9.0)))
        with self.assertRaises(PhantomSpecError):
            PhantomSpec(noise_sigma=-1.0).clean()

    def test_scaled_spec_is_valid(self):
        for size in (8, 16, 64):
            PhantomSpec.for_size(0, size).clean()


class NormalizeTestCase(SimpleTestCase):
    """Per-modality standardization."""

    def test_two_point_standardization(self):
        voxels = np.zeros((4, 2, 2, 1))
        voxels[:, 0, 0, 0] = 1.0
        voxels[:, 1, 1, 0] = 3.0
        result = normalize(MultiModalVolume(voxels=voxels))
        for i in range(4):
            self.assertEqual(sorted(result.voxels[i][voxels[i] != 0]), [-1.0, 1.0])
            np.testing.assert_array_equal(result.voxels[i][voxels[i] == 0], np.zeros(2))

    def test_idempotent(self):
        once = normalize(random_volume(1))
        twice = normalize(once)
        np.testing.assert_allclose(twice.voxels, once.voxels, atol=1e-9)

    def test_all_zero_modality_is_named(self):
        voxels = Rng(2).normal((4, 3, 3, 3))
        voxels[1] = 0.0
        with self.assertRaises(NormalizationError) as ctx:
            normalize(MultiModalVolume(voxels=voxels))
        self.assertEqual(ctx.exception.modality, 'T1')

    def test_constant_modality(self):
        voxels = Rng(2).normal((4, 3, 3, 3))
        voxels[3] = 2.0
        with self.assertRaises(NormalizationError):
            normalize(MultiModalVolume(voxels=voxels))


class AugmentTestCase(SimpleTestCase):
    """Mirroring and intensity jitter."""

    def setUp(self):
        self.volume = random_volume(3)

    def test_double_mirror_is_identity(self):
        for axis in range(3):
            twice = mirror(mirror(self.volume, axis), axis)
            np.testing.assert_array_equal(twice.voxels, self.volume.voxels)
            np.testing.assert_array_equal(twice.label, self.volume.label)

    def test_unit_scale_zero_shift_is_identity(self):
        result = adjust_intensity(self.volume, [1.0] * 4, [0.0] * 4)
        np.testing.assert_array_equal(result.voxels, self.volume.voxels)

    def test_label_counts_are_invariant(self):
        counts = self.volume.label.sum(axis=(0, 1, 2))
        for seed in range(100):
            result = augment(self.volume, Rng(seed))
            np.testing.assert_array_equal(result.label.sum(axis=(0, 1, 2)), counts)

    def test_zeros_stay_zero(self):
        voxels = self.volume.voxels.copy()
        voxels[:, 0, :, :] = 0.0
        volume = self.volume.replace(voxels=voxels)
        result = augment(volume, Rng(4))
        self.assertEqual(int((result.voxels == 0).sum()), int((voxels == 0).sum()))

    def test_seeded(self):
        first = augment(self.volume, Rng(5))
        second = augment(self.volume, Rng(5))
        np.testing.assert_array_equal(first.voxels, second.voxels)


class VolumeFormatTestCase(SimpleTestCase):
    """MMV1 encoding."""

    def test_golden_bytes(self):
        golden = (FIXTURES / 'golden.mmv').read_bytes()
        self.assertEqual(volume_to_bytes(golden_volume()), golden)
        parsed = volume_from_bytes(golden)
        np.testing.assert_array_equal(parsed.voxels, golden_volume().voxels)
        np.testing.assert_array_equal(parsed.label, golden_volume().label)

    def test_file_size(self):
        volume = random_volume(0, extents=(2, 2, 2))
        self.assertEqual(len(volume_to_bytes(volume)), 180)

    def test_round_trip_through_file(self):
        volume = random_volume(6, extents=(3, 4, 5))
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'case_0007.mmv'
            write_volume(path, volume)
            parsed = read_volume(path)
        self.assertEqual(parsed.case_id, 'case_0007')
        np.testing.assert_array_equal(parsed.voxels, volume.voxels.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(parsed.label, volume.label)

    def test_mask_file(self):
        label = random_volume(7).label
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'mask.mmv'
            write_mask(path, label)
            parsed = read_volume(path)
        self.assertEqual(parsed.num_modalities, 0)
        np.testing.assert_array_equal(parsed.label, label)

    def test_malformed_files(self):
        golden = (FIXTURES / 'golden.mmv').read_bytes()
        cases = {
            'truncated': golden[:-1],
            'trailing': golden + b'\x00',
            'magic': b'XXVOL\x00\x00\x01' + golden[8:],
            'header': golden[:10],
            'label': golden[:-1] + b'\x02',
            'has_label': golden[:24] + b'\x02\x00\x00\x00' + golden[28:],
            'extents': golden[:8] + b'\x00\x00\x00\x00' + golden[12:],
        }
        for name, data in cases.items():
            with self.subTest(name=name), self.assertRaises(VolumeFormatError):
                volume_from_bytes(data)


class CheckpointTestCase(SimpleTestCase):
    """Checkpoint encoding and restore."""

    def test_fnv_reference_value(self):
        self.assertEqual(fnv1a64(b''), 0xcbf29ce484222325)
        self.assertEqual(fnv1a64(b'a'), 0xaf63dc4c8601ec8c)

    def test_golden_bytes(self):
        golden = (FIXTURES / 'golden.ckpt').read_bytes()
        self.assertEqual(checkpoint_to_bytes({'w': np.array([1.0, -2.0])}), golden)
        params = checkpoint_from_bytes(golden)
        self.assertEqual(list(params), ['w'])
        np.testing.assert_array_equal(params['w'], [1.0, -2.0])

    def test_flipped_byte_fails_digest(self):
        golden = bytearray((FIXTURES / 'golden.ckpt').read_bytes())
        golden[15] ^= 0x01
        with self.assertRaises(DigestMismatchError):
            checkpoint_from_bytes(bytes(golden))

    def test_digest_covers_record_headers(self):
        golden = (FIXTURES / 'golden.ckpt').read_bytes()
        for position in (0, 4, 5, 9):
            corrupted = bytearray(golden)
            corrupted[position] ^= 0x01
            with self.assertRaises(DigestMismatchError, msg=position):
                checkpoint_from_bytes(bytes(corrupted))

    def test_malformed_checkpoints(self):
        with self.assertRaises(CheckpointError):
            checkpoint_from_bytes(b'\x00\x01')
        body = b'\x05\x00\x00\x00w'
        digest = fnv1a64(body).to_bytes(8, 'little')
        with self.assertRaises(CheckpointError):
            checkpoint_from_bytes(body + digest)

    def test_model_round_trip(self):
        cfg = BackboneConfig.tiny()
        model = build_network(cfg, Rng(0), heads=2)
        other = build_network(cfg, Rng(1), heads=2)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'model.ckpt'
            save_checkpoint(path, model.state_dict())
            self.assertEqual(list(load_checkpoint(path)), [name for name, _ in model.named_parameters()])
            restore(other, path)
        for (name, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
            np.testing.assert_array_equal(b.data, a.data.astype(np.float32).astype(np.float64), err_msg=name)

    def test_depth_mismatch_names_parameter(self):
        shallow = build_network(BackboneConfig(volume_size=8, depth=2, channels=(8, 16)), Rng(0), heads=2)
        deep = build_network(BackboneConfig(volume_size=8, depth=3, channels=(8, 16, 16)), Rng(0), heads=2)
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'shallow.ckpt'
            save_checkpoint(path, shallow.state_dict())
            with self.assertRaises(ParameterMismatchError) as ctx:
                restore(deep, path)
        self.assertTrue(ctx.exception.name)
        self.assertIn(ctx.exception.name, str(ctx.exception))


class CaseManifestTestCase(SimpleTestCase):
    """Case generation and manifests."""

    def test_generate_and_load(self):
        with tempfile.TemporaryDirectory() as directory:
            entries = generate_cases(directory, 2, 8, seed=7)
            self.assertEqual([entry.case_id for entry in entries], ['case_0000', 'case_0001'])
            self.assertEqual(entries[1].seed, case_seed(7, 1))
            self.assertEqual(len(read_manifest(Path(directory) / MANIFEST_NAME)), 2)
            cases = load_cases(directory)
        self.assertEqual([case.case_id for case in cases], ['case_0000', 'case_0001'])
        self.assertTrue(all(case.has_label and case.extents == (8, 8, 8) for case in cases))

    def test_regeneration_is_byte_identical(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            generate_cases(first, 2, 8, seed=3)
            generate_cases(second, 2, 8, seed=3)
            for name in ('case_0000.mmv', 'case_0001.mmv', MANIFEST_NAME):
                self.assertEqual((Path(first) / name).read_bytes(), (Path(second) / name).read_bytes())

    def test_bad_manifest(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / MANIFEST_NAME
            path.write_text('case\tseed\n')
            with self.assertRaises(VolumeFormatError):
                read_manifest(path)
            path.write_text('case_id\tseed\tfile\ncase_0000\tx\tcase_0000.mmv\n')
            with self.assertRaises(VolumeFormatError):
                read_manifest(path)

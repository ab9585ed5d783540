import numpy as np
import pytest

from vmbeauty import tensor as T
from vmbeauty.embedding import PatchEmbedConfig, PatchEmbedding, embed, patchify, unpatchify
from vmbeauty.gradcheck import check_gradients
from vmbeauty.tensor import ShapeError, Tensor


class TestPatchify:
    def test_patch_count_at_224(self):
        out = patchify(np.zeros((3, 224, 224)), 16)
        assert out.shape == (196, 3 * 16 * 16)

    def test_row_major_order(self):
        img = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
        rows = patchify(img, 2).data
        assert rows.shape == (4, 4)
        # pixels (0,0), (0,1), (1,0), (1,1)
        np.testing.assert_array_equal(rows[0], [0, 1, 4, 5])
        np.testing.assert_array_equal(rows[1], [2, 3, 6, 7])
        np.testing.assert_array_equal(rows[3], [10, 11, 14, 15])

    def test_round_trip(self, f64, rng):
        x = rng.normal(size=(3, 32, 32))
        np.testing.assert_array_equal(unpatchify(patchify(x, 8).data, 8, 3), x)

    def test_batched_matches_single(self, rng):
        x = rng.normal(size=(2, 3, 8, 8))
        batch = patchify(x, 4).data
        np.testing.assert_array_equal(batch[1], patchify(x[1], 4).data)

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((3, 10, 10)), 4)

    def test_config_rejects_indivisible(self):
        with pytest.raises(ValueError):
            PatchEmbedConfig(image_size=30, patch_size=16)


class TestEmbed:
    def make(self, rng, size=8, p=4, c=3, d=8):
        return PatchEmbedding(PatchEmbedConfig(size, p, c, d), rng)

    def test_sequence_length(self, rng):
        for size, p in [(8, 4), (8, 2), (12, 4)]:
            emb = self.make(rng, size, p)
            assert emb(rng.normal(size=(3, size, size))).shape == ((size // p) ** 2 + 1, 8)

    def test_zero_projection(self, rng):
        emb = self.make(rng)
        emb.projection.data[:] = 0
        emb.pos_embed.data[:] = 0
        emb.class_token.data[:] = rng.normal(size=(1, 8))
        z = emb(rng.normal(size=(3, 8, 8))).data
        np.testing.assert_array_equal(z[0], emb.class_token.data[0])
        np.testing.assert_array_equal(z[1:], 0)

    def test_identity_projection(self, f64, rng):
        emb = PatchEmbedding(PatchEmbedConfig(4, 2, 2, 8), rng)
        emb.projection.data = np.eye(8)
        emb.pos_embed.data[:] = 0
        img = rng.normal(size=(2, 4, 4))
        z = emb(img).data
        np.testing.assert_array_equal(z[0], 0)
        np.testing.assert_array_equal(z[1:], patchify(img, 2).data)

    def test_rows_follow_definition(self, rng):
        emb = self.make(rng)
        img = rng.normal(size=(3, 8, 8))
        z = emb(img).data
        expected = patchify(img, 4).data @ emb.projection.data + emb.pos_embed.data[1:]
        np.testing.assert_allclose(z[1:], expected, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(z[0], emb.class_token.data[0] + emb.pos_embed.data[0], atol=1e-7)

    def test_position_permutation_consistency(self, rng):
        with T.precision("f64"):
            emb = self.make(rng)
            img = rng.normal(size=(3, 8, 8))
            z = emb(img).data
            # swap the grid positions of patches 0 and 3 together with their position rows
            perm = np.array([3, 1, 2, 0])
            pt = patchify(img, 4).data[perm]
            emb.pos_embed.data[1:] = emb.pos_embed.data[1:][perm]
            z2 = embed(unpatchify(pt, 4, 3), emb).data
        np.testing.assert_allclose(z2[1:], z[1:][perm], atol=1e-12)
        np.testing.assert_array_equal(z2[0], z[0])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            self.make(rng)(np.zeros((3, 12, 12)))

    def test_gradient(self, f64, rng):
        emb = self.make(rng)
        img = Tensor(rng.normal(size=(2, 3, 8, 8)))
        w = rng.normal(size=(5, 8))
        errs = check_gradients(lambda: T.sum(emb(img) * w), emb.named_parameters())
        assert max(errs.values()) < 1e-4, errs

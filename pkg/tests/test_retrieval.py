"""Template ranking by bag-of-words cosine similarity."""

import numpy as np
import pytest

from bowpose.errors import GlobalDescriptorsAbsent, NoValidPatches
from bowpose.features import FeatureGrid, GradientBackend, extract_grid
from bowpose.onboarding import TemplateRecord
from bowpose.rendering import render_template, sample_rotations
from bowpose.retrieval import query_bow, retrieve, retrieve_by_global


def _crop_grid_for(rep, template_index, blob):
    """Re-render a template and extract its raw feature grid."""
    S = rep.config["crop_size"]
    rotations = sample_rotations(rep.config["n_templates"],
                                 rep.config["seed"])
    tpl = render_template(blob, rotations[template_index], S,
                          rep.config["delta"], template_index)
    backend = GradientBackend(rep.config["backend_patch_size"])
    return extract_grid(backend, tpl.rgb), tpl.mask


class TestQueryBow:
    def test_identical_render_matches_template_bow(self, small_rep, blob):
        grid, mask = _crop_grid_for(small_rep, 3, blob)
        bow = query_bow(grid, mask, small_rep)
        assert np.abs(bow - small_rep.templates[3].bow).max() < 1e-6

    def test_empty_mask_raises(self, small_rep, blob):
        grid, mask = _crop_grid_for(small_rep, 0, blob)
        with pytest.raises(NoValidPatches):
            query_bow(grid, np.zeros_like(mask), small_rep)

    def test_half_occluded_still_top1(self, small_rep, blob):
        grid, mask = _crop_grid_for(small_rep, 5, blob)
        occluded = mask.copy()
        occluded[:, :occluded.shape[1] // 2] = 0
        bow = query_bow(grid, occluded, small_rep)
        result = retrieve(bow, small_rep, h=1)
        assert result.ranked[0][0] == 5


class TestRetrieve:
    def test_exact_query_rank1_similarity_one(self, small_rep):
        bow = small_rep.templates[7].bow
        result = retrieve(bow, small_rep, h=3)
        assert result.ranked[0][0] == 7
        assert abs(result.ranked[0][1] - 1.0) < 1e-6

    def test_orthogonal_query_tie_break_by_id(self, small_rep):
        k = small_rep.codebook.k
        # zero vector has zero similarity with every template
        result = retrieve(np.zeros(k), small_rep, h=5)
        assert [tid for tid, _ in result.ranked] == [0, 1, 2, 3, 4]
        assert all(s == 0.0 for _, s in result.ranked)

    def test_h5_gives_5(self, small_rep):
        result = retrieve(small_rep.templates[0].bow, small_rep, h=5)
        assert len(result.ranked) == 5
        sims = [s for _, s in result.ranked]
        assert sims == sorted(sims, reverse=True)

    def test_h_capped_at_n(self, small_rep):
        result = retrieve(small_rep.templates[0].bow, small_rep, h=99)
        assert len(result.ranked) == len(small_rep.templates)

    def test_scale_invariance(self, small_rep):
        bow = small_rep.templates[2].bow
        a = retrieve(bow, small_rep, h=6)
        b = retrieve(3.7 * bow, small_rep, h=6)
        assert [t for t, _ in a.ranked] == [t for t, _ in b.ranked]

    def test_rejects_h_zero(self, small_rep):
        with pytest.raises(ValueError):
            retrieve(small_rep.templates[0].bow, small_rep, h=0)


class TestRetrieveByGlobal:
    def _with_globals(self, rep):
        rng = np.random.default_rng(0)
        templates = [
            TemplateRecord(template_id=t.template_id, pose=t.pose,
                           intrinsics=t.intrinsics, descriptors=t.descriptors,
                           points3d=t.points3d, patch_centers=t.patch_centers,
                           bow=t.bow, global_desc=rng.normal(size=8))
            for t in rep.templates
        ]
        return type(rep)(object_id=rep.object_id, config=rep.config,
                         pca=rep.pca, codebook=rep.codebook, idf=rep.idf,
                         templates=templates, diameter=rep.diameter)

    def test_identical_vector_rank1(self, small_rep):
        rep = self._with_globals(small_rep)
        result = retrieve_by_global(rep.templates[4].global_desc, rep, h=2)
        assert result.ranked[0][0] == 4
        assert abs(result.ranked[0][1] - 1.0) < 1e-9

    def test_absent_descriptors_raise(self, small_rep):
        with pytest.raises(GlobalDescriptorsAbsent):
            retrieve_by_global(np.zeros(8), small_rep, h=1)

from fractions import Fraction

import numpy as np
import pytest

from melanopipe.aggregate import LabelCensus, census
from melanopipe.core import PatchLabel
from melanopipe.scoring import ScorerDescriptor, assign_patch_label, label_patches, reference_score, score_patches
from melanopipe.synthgen import (MALIGNANT, PLAIN, Region, SlideSpec, SpecError, aligned_slide_spec,
                                 expected_census, generate, role_signature)
from melanopipe.tissue import compute_tissue_mask, extract_grid, segment_tissue


def test_zero_regions_gives_empty_slide():
    pyr, truth = generate(SlideSpec("empty", 2048, 2048))
    assert (pyr.base.pixels == 255).all() and truth.expected_diagnosis == 0
    grid = extract_grid(pyr, compute_tissue_mask(pyr), 10, 256, 0.7)
    assert len(grid) == 0


def test_malignant_square_patches_labeled_m():
    spec = SlideSpec("m", 4096, 4096, (Region("rect", (1024, 1024, 2048, 2048), MALIGNANT),))
    pyr, truth = generate(spec)
    grid = extract_grid(pyr, compute_tissue_mask(pyr), 10, 256, 0.7)
    interior = [p for p in grid if 1024 <= p.x and p.x + 1024 <= 3072 and 1024 <= p.y and p.y + 1024 <= 3072]
    assert len(interior) == 4
    for t_p in (0.5, 0.9, 0.93):
        for ref in interior:
            assert assign_patch_label(reference_score(pyr.read_region(ref)), t_p) == PatchLabel.M
    assert role_signature((255, 0, 255)) == ("M", pytest.approx(0.93624, abs=1e-5))
    assert truth.expected_diagnosis == 1


def test_noise_seed_changes_pixels_not_truth():
    kw = dict(regions=(Region("ellipse", (100, 100, 900, 700), MALIGNANT),), noise=8)
    a_pyr, a = generate(SlideSpec("n", 1024, 1024, seed=1, **kw))
    b_pyr, b = generate(SlideSpec("n", 1024, 1024, seed=2, **kw))
    da, db = a.to_document(), b.to_document()
    for doc in (da, db):
        del doc["spec"]["seed"]
    assert np.array_equal(a.roles, b.roles) and da == db
    assert not np.array_equal(a_pyr.base.pixels, b_pyr.base.pixels)
    again, _ = generate(SlideSpec("n", 1024, 1024, seed=1, **kw))
    assert np.array_equal(again.base.pixels, a_pyr.base.pixels)


def test_noise_keeps_tissue_status():
    spec = SlideSpec("n", 512, 512, (Region("rect", (0, 0, 300, 512), PLAIN),), noise=30, seed=3,
                     levels=(Fraction(40),))
    pyr, truth = generate(spec)
    assert np.array_equal(segment_tissue(pyr.base.pixels), truth.roles > 0)


def test_expected_census_examples():
    _, all_m = generate(aligned_slide_spec("a", ["mm", "mm"], cols=2))
    assert expected_census(all_m) == LabelCensus(4, 0, 0, 0)
    _, half = generate(aligned_slide_spec("h", ["mb", "mb"], cols=2))
    c = expected_census(half)
    assert c.n_M == c.n_B == 2


def test_expected_census_staggered_toy():
    # 4x4 cells of 16 base px (patch 4 at 10x over 40x); plain tissue over the
    # first three columns, malignant square (8,8)-(32,32) straddling cells.
    spec = SlideSpec("toy", 64, 64, (Region("rect", (0, 0, 48, 64), PLAIN),
                                     Region("rect", (8, 8, 24, 24), MALIGNANT)), levels=(Fraction(40),))
    _, truth = generate(spec)
    # hand count: cell (0,0) has 64 M px of 256 -> plain; (1,0) and (0,1) are
    # 128/128 ties -> M; (1,1) is all M; column 3 is background.
    assert expected_census(truth, 10, 4, 0.7) == LabelCensus(3, 0, 0, 9)
    assert expected_census(truth, 10, 4, 0.7, t_p=0.9) == LabelCensus(3, 0, 0, 9)
    assert expected_census(truth, 10, 4, 0.7, t_p=0.95) == LabelCensus(0, 0, 0, 12)


def test_pipeline_matches_expected_census(malignant_slide, benign_slide):
    for pyr, truth in (malignant_slide, benign_slide):
        grid = extract_grid(pyr, compute_tissue_mask(pyr), 10, 256, 0.7)
        scores = score_patches(ScorerDescriptor("reference"), pyr, grid)
        for t_p in (0.5, 0.9, 0.999):
            assert census(label_patches(scores, t_p)) == expected_census(truth, t_p=t_p)


@pytest.mark.parametrize("bad", [
    {"slide_id": "x", "width": 100},
    {"slide_id": "x", "width": 100, "height": 100, "regions": [{"role": "tumour", "box": [0, 0, 1, 1]}]},
    {"slide_id": "x", "width": 100, "height": 100, "regions": [{"role": "epidermis", "box": [90, 0, 20, 5]}]},
])
def test_malformed_specs(bad):
    with pytest.raises(SpecError):
        SlideSpec.from_mapping(bad)


def test_spec_mapping_round_trip():
    spec = aligned_slide_spec("r", ["mp", "e."], cols=2, seed=4, noise=3)
    assert SlideSpec.from_mapping(spec.to_mapping()).to_mapping() == spec.to_mapping()

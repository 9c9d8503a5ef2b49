import numpy as np
import pytest
import torch

from core.acoustic_model import build_model
from core.config import ContrastiveConfig
from core.data import BatchKind, collate, plan_batch_masks
from core.features import FeatureMatrix, Utterance
from core.gradcheck import check_gradients, relative_error

TOLERANCE = 1e-4


def random_batch(seed, kind):
    rng = np.random.default_rng(seed)
    utterances = []
    for index, num_frames in enumerate((11, 9)):
        labels = rng.integers(4, size=(num_frames - 3) // 2 + 1)
        utterances.append(Utterance(f"g{seed}-{index}", FeatureMatrix(rng.standard_normal((num_frames, 16))), labels))
    batch = collate(utterances, kind)
    return plan_batch_masks(batch, 0.3, 2, rng, min_positions=3)


def test_relative_error_of_identical_gradients_is_zero():
    g = np.array([1.0, -2.0, 3.0])
    assert relative_error(g, g) == 0.0
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kind", [BatchKind.LABELLED, BatchKind.UNLABELLED])
def test_autograd_matches_central_differences(gradcheck_model_cfg, seed, kind):
    model = build_model(gradcheck_model_cfg, seed=seed, dtype=torch.float64).eval()
    batch = random_batch(seed, kind)
    results = check_gradients(model, batch, alpha=0.5, contrastive_cfg=ContrastiveConfig(num_distractors=2))
    checked = {r.loss_name for r in results}
    assert checked == ({"l_ce", "l_c", "combined"} if kind is BatchKind.LABELLED else {"l_c", "combined"})
    worst = max(results, key=lambda r: r.relative_error)
    assert worst.relative_error < TOLERANCE, worst

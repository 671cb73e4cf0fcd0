import numpy as np
import pytest

from src.attack.fgsm import fgsm, input_gradient, robustness_sweep
from src.training.evaluation import evaluate
from src.utils.errors import UsageError


def test_input_gradient_shape(lenet, batch):
    x, y = batch
    g, loss = input_gradient(lenet, x, y)
    assert g.shape == x.shape
    assert loss > 0


def test_fgsm_zero_delta_returns_clean(lenet, toy_test_dataset):
    images = toy_test_dataset.images
    adv = fgsm(lenet, images, toy_test_dataset.labels, 0.0, toy_test_dataset)
    np.testing.assert_array_equal(adv, images)


def test_fgsm_signed_step_and_clipping(lenet, toy_test_dataset):
    images = toy_test_dataset.images.astype(np.float64)
    adv = fgsm(lenet, images, toy_test_dataset.labels, 8.0, toy_test_dataset)
    assert adv.min() >= 0.0 and adv.max() <= 1.0
    step = 8.0 / 255.0
    diff = np.abs(adv - images)
    assert np.all(diff <= step + 1e-12)
    # pixels away from the [0, 1] edges moved by exactly one step or not at all
    inner = (images >= step) & (images <= 1.0 - step)
    assert np.all(np.isclose(diff[inner], step) | np.isclose(diff[inner], 0.0))


def test_fgsm_rejects_negative_delta(lenet, toy_test_dataset):
    with pytest.raises(UsageError):
        fgsm(lenet, toy_test_dataset.images, toy_test_dataset.labels, -1.0, toy_test_dataset)


def test_robustness_sweep_rows(lenet, toy_test_dataset):
    frame = robustness_sweep(lenet, toy_test_dataset, [0, 2, 4, 6, 8], batch_size=7)
    assert list(frame.columns) == ["delta", "accuracy_pct", "mean_loss"]
    assert frame["delta"].tolist() == [0.0, 2.0, 4.0, 6.0, 8.0]
    clean_err, clean_loss = evaluate(lenet, toy_test_dataset)
    assert frame["accuracy_pct"].iloc[0] == pytest.approx(100.0 - clean_err)
    assert frame["mean_loss"].iloc[0] == pytest.approx(clean_loss)
    assert frame["mean_loss"].iloc[-1] > frame["mean_loss"].iloc[0]


def test_robustness_sweep_requires_sorted_deltas(lenet, toy_test_dataset):
    with pytest.raises(UsageError):
        robustness_sweep(lenet, toy_test_dataset, [4, 2])

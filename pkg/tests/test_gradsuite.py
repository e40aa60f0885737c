import pytest

from noisebox.gradsuite import CHECKS, GRAD_EPS, GRAD_TOL, run_suite


def test_suite_settings():
    assert (GRAD_EPS, GRAD_TOL) == (1e-5, 1e-4)


def test_suite_covers_every_layer_and_the_pipeline():
    for name in ("linear", "layer_norm", "softmax", "cross_entropy", "conv2d", "conv1d_depthwise",
                 "selective_scan", "sar_scan", "mamba_block", "softmax_attention",
                 "agent_attention_block", "fuse_res4", "backbone_fpn", "roi_pool", "head_loss",
                 "end_to_end"):
        assert name in CHECKS


@pytest.mark.parametrize("name", ["elementwise", "matmul", "selective_scan", "roi_pool"])
def test_fast_checks_pass(name):
    (res,) = run_suite(seed=3, names=[name])
    assert res.ok, str(res.report)

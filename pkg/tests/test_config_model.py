import numpy as np
import pytest

from noisebox.config import DetectorConfig, dump_config, load_config, parse_config
from noisebox.model import Detector, detect_dataset, scene_loss, train, training_example
from noisebox.numerics import ConfigError
from noisebox.synthdata import gen_scene

TINY = dict(image_size=64, backbone_channels=(2, 2, 4, 4), fpn_width=2, mamba_channels=4,
            ssm_state=2, heads=2, agent_n=2, mlp_ratio=1, roi_grid=1, time_dim=2, head_hidden=4,
            N=8, N_train=3)


def test_parse_values_and_paths():
    cfg, paths = parse_config("""
        # comment line
        T = 500
        steps = 1000, 500   # trailing comment
        use_mambasar = false
        lr = 2e-4
        layers = mamba,mamba,mamba,agent,agent,agent
        dataset = data/train
    """)
    assert cfg.T == 500 and cfg.steps == (1000, 500) and cfg.use_mambasar is False
    assert cfg.lr == 2e-4 and cfg.layers[0] == "mamba"
    assert paths == {"dataset": "data/train"}


def test_unknown_key_names_file_and_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("T = 10\n\nagnet_n = 4\n")
    with pytest.raises(ConfigError, match=r"c\.cfg:3: unknown key 'agnet_n'"):
        load_config(p)


@pytest.mark.parametrize("text", ["T 10", "T = ten", "use_mambasar = maybe"])
def test_malformed_lines(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_dump_parse_roundtrip():
    cfg = DetectorConfig(T=321, steps=(900, 300), use_mambasar=False, lr=3.25e-4)
    back, paths = parse_config(dump_config(cfg, {"dataset": "d"}))
    assert back == cfg and paths == {"dataset": "d"}


def test_training_example_shapes():
    cfg = DetectorConfig(**TINY)
    model = Detector(cfg)
    z_t, t, z0, labels, mask = training_example(gen_scene(0, 64, 64), cfg, model.schedule,
                                                np.random.default_rng(0))
    assert z_t.shape == z0.shape == (3, 4) and 0 <= t <= cfg.T
    assert labels.shape == mask.shape == (3,)


def test_scene_loss_groups_average():
    model = Detector(DetectorConfig(**TINY))
    scene = gen_scene(1, 64, 64)
    box, cls, total = scene_loss(model, scene, np.random.default_rng(0), 3)
    assert np.isfinite(total.item()) and total.item() == pytest.approx(box.item() + cls.item())


def test_short_training_reduces_loss_and_logs(tmp_path):
    cfg = DetectorConfig(**TINY, use_mambasar=False, lr=1e-2, train_steps=60, t_groups=2)
    model = Detector(cfg)
    scenes = [gen_scene(s, 64, 64) for s in range(4)]
    log_path = tmp_path / "log.csv"
    res = train(model, scenes, log_path=log_path)
    rows = np.loadtxt(log_path, delimiter=",", skiprows=1)
    assert res.steps == 60 and rows.shape == (60, 4)
    assert rows[-15:, 3].mean() < rows[:15, 3].mean()
    assert log_path.read_text().splitlines()[0] == "step,box_loss,cls_loss,total"


def test_checkpoint_roundtrip(tmp_path):
    model = Detector(DetectorConfig(**TINY))
    for p in model.parameters():
        p.data[...] += 0.01
    model.save(tmp_path / "ck")
    back = Detector.load(tmp_path / "ck")
    assert back.cfg == model.cfg
    a, b = model.state_dict(), back.state_dict()
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    scenes = [gen_scene(5, 64, 64)]
    d1, d2 = detect_dataset(model, scenes), detect_dataset(back, scenes)
    assert np.array_equal(d1[0].boxes, d2[0].boxes)


def test_ablation_pattern_requires_flag():
    with pytest.raises(ConfigError, match="allow_ablation"):
        Detector(DetectorConfig(**TINY, layers=("mamba",) * 6))
    Detector(DetectorConfig(**TINY, layers=("mamba",) * 6, allow_ablation=True))

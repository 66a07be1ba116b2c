import pytest

from dfcvae.config import KEYS, SCHEMA, RunConfig, format_value, parse_kv_text, parse_value
from dfcvae.errors import ConfigError
from dfcvae.loss_network import Preprocessing


class TestValues:
    @pytest.mark.parametrize(
        "kind,text,expected",
        [
            ("int", " 7 ", 7),
            ("float", "5e-4", 5e-4),
            ("str", "dfc", "dfc"),
            ("path", "none", None),
            ("ints", "32, 64,128", [32, 64, 128]),
            ("floats", "0.5 0.25", [0.5, 0.25]),
            ("strs", "relu3_1,relu4_1", ["relu3_1", "relu4_1"]),
        ],
    )
    def test_parse(self, kind, text, expected):
        assert parse_value(kind, text) == expected

    def test_bad_int(self):
        with pytest.raises(ConfigError, match="int"):
            parse_value("int", "seven")

    @pytest.mark.parametrize("key", [k.name for k in SCHEMA])
    def test_format_parse_round_trip(self, key):
        k = KEYS[key]
        if k.default is None:
            return
        assert parse_value(k.kind, format_value(k.default)) == k.default


class TestFile:
    def test_comments_and_blank_lines(self):
        text = "# header\n\nloss.alpha = 2.0  # weight\ntrain.epochs=3\n"
        assert parse_kv_text(text) == {"loss.alpha": "2.0", "train.epochs": "3"}

    def test_malformed_line_names_location(self):
        with pytest.raises(ConfigError, match="run.cfg:2"):
            parse_kv_text("loss.alpha = 1\nnot a pair\n", "run.cfg")

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("loss.alpha = 1\nloss.gamma = 3\n")
        with pytest.raises(ConfigError, match="loss.gamma"):
            RunConfig.load(str(p))

    def test_precedence_and_dump_round_trip(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("train.epochs = 3\ntrain.seed = 4\n")
        cfg = RunConfig.load(str(p), overrides={"train.seed": "9"})
        assert cfg["train.epochs"] == 3 and cfg["train.seed"] == 9
        q = tmp_path / "dump.cfg"
        q.write_text(cfg.dump())
        assert RunConfig.load(str(q)).values == cfg.values


class TestTypedViews:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.model_config().latent_dim == 100
        t = cfg.train_config()
        assert (t.lr0, t.lr_decay, t.epochs, t.batch_size) == (5e-4, 0.5, 5, 64)
        assert t.loss.beta == 0.5
        assert cfg.preprocessing() is None
        assert len(cfg["latent.attributes"]) == 13

    def test_invalid_value_surfaces_on_view(self):
        cfg = RunConfig({"model.image_side": "72"})
        with pytest.raises(ConfigError):
            cfg.model_config()

    def test_preprocessing_override(self):
        cfg = RunConfig({"loss_network.channel_order": "RGB", "loss_network.input_scale": "1.0"})
        p = cfg.preprocessing()
        assert isinstance(p, Preprocessing) and p.channel_order == "RGB" and p.input_scale == 1.0

    def test_weights_env_fallback(self, monkeypatch):
        monkeypatch.setenv("DFCVAE_WEIGHTS", "/w.safetensors")
        assert RunConfig().weights_path() == "/w.safetensors"
        assert RunConfig({"loss_network.weights": "/x"}).weights_path() == "/x"

    def test_loss_network_taps_override(self):
        cfg = RunConfig({"loss_network.taps": "relu5_1"})
        assert cfg.loss_taps() == ["relu5_1"]

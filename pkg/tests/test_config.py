import pytest

from dfo import config as C
from dfo.errors import ConfigError
from dfo.grids import LevelConfig


class TestDefaults:
    def test_level_defaults(self):
        cfg = C.RunConfig()
        assert [(c.channels, c.patch, c.sparsity) for c in cfg.levels] == [
            (16, 3, 0.3), (16, 3, 0.3), (8, 3, 0.5), (8, 1, 0.7)]

    def test_constants(self):
        cfg = C.RunConfig()
        w = cfg.losses
        assert (w.smoothness, w.sparsity, w.reconstruction, w.alpha) == (0.1, 0.01, 0.01, 0.85)
        assert (cfg.tau_start, cfg.tau_end, cfg.tau) == (1.0, 0.1, 0.1)
        assert cfg.seed == 42 and cfg.depth_cap == 80.0
        assert cfg.solver.enabled_levels == (1, 2, 3, 4)

    def test_empty_text(self):
        assert C.load_config(text="") == C.RunConfig()


class TestParsing:
    def test_full_file(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text(
            "[pyramid]\nlevel4 = 4 1 0.6\n"
            "[solver]\nmax_iterations = 7\nlevels = 2, 3\nstrict_ic = yes\n"
            "[selection]\nprior = uniform\ntau = 0.2\n"
            "[losses]\nlambda_sm = 0.5\neps_l1 = 0.2\n"
            "[features]\nsource = gradient\nzscore_dfog = true\n"
            "[synthetic]\nheight = 64\nsurface = fronto\n"
            "[evaluation]\ndepth_cap = 50\nmedian_scale = off\n"
            "[run]\nseed = 3\n")
        cfg = C.load_config(p)
        assert cfg.levels[3] == LevelConfig(4, 1, 0.6) and cfg.levels[0] == LevelConfig(16, 3, 0.3)
        assert cfg.solver.max_iterations == 7 and cfg.solver.strict_ic
        assert cfg.solver.enabled_levels == (2, 3)
        assert cfg.prior == "uniform" and cfg.tau == 0.2
        assert cfg.losses.smoothness == 0.5 and cfg.losses.eps_l1 == 0.2
        assert cfg.losses.sparsity == 0.01
        assert cfg.feature_source == "gradient" and cfg.zscore_dfog
        assert cfg.synthetic.height == 64 and cfg.synthetic.surface == "fronto"
        assert cfg.synthetic.width == 256
        assert cfg.depth_cap == 50.0 and not cfg.median_scale
        assert cfg.seed == 3

    @pytest.mark.parametrize("text", [
        "[nonsense]\na = 1\n",
        "[solver]\nmax_iteration = 3\n",
        "[solver]\nmax_iterations = many\n",
        "[solver]\nmax_iterations = 0\n",
        "[pyramid]\nlevel1 = 16 3\n",
        "[selection]\nprior = edges\n",
        "[selection]\ntau = 0\n",
        "[losses]\nalpha = 2\n",
        "[features]\nsource = cnn\n",
        "[features]\nzscore_dfog = maybe\n",
        "[synthetic]\nframes = 1\n",
        "not an ini file",
    ])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            C.load_config(text=text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            C.load_config(tmp_path / "absent.ini")


class TestLevels:
    def test_parse(self):
        assert C.parse_levels("4, 2,3") == (4, 2, 3)

    @pytest.mark.parametrize("text", ["", "0,1", "5", "a"])
    def test_reject(self, text):
        with pytest.raises(ConfigError):
            C.parse_levels(text)


class TestOverrides:
    def test_replace(self):
        cfg = C.RunConfig().with_overrides(seed=9, feature_source="intensity")
        assert cfg.seed == 9 and cfg.feature_source == "intensity"

    def test_validated(self):
        with pytest.raises(ConfigError):
            C.RunConfig().with_overrides(feature_source="sift")

    def test_four_levels_required(self):
        with pytest.raises(ConfigError):
            C.RunConfig(levels=C.RunConfig().levels[:3])


class TestReadmeExample:
    def test_documented_file_gives_defaults(self):
        from pathlib import Path
        text = (Path(__file__).parents[1] / "README.md").read_text()
        block = text.split("```ini\n", 1)[1].split("```", 1)[0]
        assert C.load_config(text=block) == C.RunConfig()

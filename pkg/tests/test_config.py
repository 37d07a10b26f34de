import numpy as np
import pytest
import yaml

from ristrack.config import (
    BASELINES,
    ConfigError,
    ExperimentConfig,
    derive_seed,
    load_config,
    profile_defaults,
)


def _problems(**raw):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(raw)
    return info.value.problems


class TestProfiles:
    def test_desk_defaults_validate(self):
        cfg = ExperimentConfig.from_dict()
        assert cfg["profile"] == "desk"
        assert cfg["system"]["n_ris_elements"] == 16
        assert cfg.problems() == []

    def test_paper_profile(self):
        cfg = ExperimentConfig.from_dict(profile="paper")
        assert cfg["system"]["n_bs_antennas"] == 256
        assert cfg["system"]["n_subcarriers"] == 128
        assert cfg["sweeps"]["ris_sizes"] == [64, 81, 100, 121]
        assert cfg.cluster_configs()[0].n_delay_taps_D == 16

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            profile_defaults("huge")

    def test_defaults_are_copies(self):
        a = profile_defaults("desk")
        a["system"]["n_users"] = 99
        assert profile_defaults("desk")["system"]["n_users"] == 2

    def test_all_baselines_enabled(self):
        assert ExperimentConfig.from_dict()["baselines"] == list(BASELINES)

    def test_n_train_is_floor(self):
        cfg = ExperimentConfig.from_dict({"schedule": {"T": 99, "train_fraction": 0.7}})
        assert cfg.n_train == 69


class TestValidation:
    def test_unknown_key_rejected(self):
        probs = _problems(system={"n_antennas": 4})
        assert any("unknown key system.n_antennas" in p for p in probs)

    def test_unknown_top_level_key(self):
        assert any("unknown key bogus" in p for p in _problems(bogus=1))

    def test_section_must_be_mapping(self):
        assert any("must be a mapping" in p for p in _problems(system=3))

    @pytest.mark.parametrize("frac", [0.0, 1.0, 1.5, -0.1])
    def test_train_fraction_out_of_range(self, frac):
        probs = _problems(schedule={"train_fraction": frac})
        assert any("train_fraction" in p for p in probs)

    def test_train_fraction_just_below_one_ok(self):
        ExperimentConfig.from_dict({"schedule": {"train_fraction": 0.95}})

    def test_train_fraction_leaving_no_training_rows(self):
        probs = _problems(schedule={"train_fraction": 0.05})
        assert any("no training rows" in p for p in probs)

    def test_non_bool_oracle_flag(self):
        assert any("oracle.multistart" in p for p in _problems(oracle={"multistart": "yes"}))

    def test_zero_horizon(self):
        assert any("horizon" in p for p in _problems(schedule={"horizon": 0}))

    def test_element_out_of_range(self):
        probs = _problems(tracking={"element": 16})
        assert any("tracking.element" in p for p in probs)

    def test_users_exceed_antennas(self):
        probs = _problems(system={"n_users": 17})
        assert any("ZF infeasible" in p for p in probs)

    def test_sweep_users_exceed_antennas(self):
        probs = _problems(sweeps={"users": [2, 40]})
        assert any("[40]" in p for p in probs)

    def test_unknown_baseline(self):
        assert any("unknown baselines" in p for p in _problems(baselines=["xavier_lsm", "magic"]))

    def test_problems_are_collected_not_first_only(self):
        probs = _problems(schedule={"horizon": 0, "train_fraction": 2.0}, jobs=0)
        assert len(probs) >= 3

    def test_bad_cluster_config(self):
        probs = _problems(channel={"direct": {"roll_off": 1.5}})
        assert any("channel.direct" in p for p in probs)

    def test_bad_activation(self):
        assert any("learner" in p for p in _problems(learner={"activation": "relu"}))

    def test_empty_sweep_list(self):
        assert any("sweeps.seeds" in p for p in _problems(sweeps={"seeds": []}))

    def test_error_message_lists_problems(self):
        with pytest.raises(ConfigError, match="horizon"):
            ExperimentConfig.from_dict({"schedule": {"horizon": 0}})


class TestOverrides:
    def test_replace_merges_deep(self):
        cfg = ExperimentConfig.from_dict().replace(system={"n_users": 3})
        assert cfg["system"]["n_users"] == 3
        assert cfg["system"]["n_bs_antennas"] == 16

    def test_replace_revalidates(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict().replace(schedule={"horizon": 0})

    def test_load_yaml_and_cli_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"system": {"n_ris_elements": 9}, "seed": 5}))
        cfg = load_config(path, seed=11, output_dir=tmp_path / "o")
        assert cfg["system"]["n_ris_elements"] == 9
        assert cfg.seed == 11
        assert cfg["output_dir"] == str(tmp_path / "o")

    def test_profile_key_in_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("profile: paper\n")
        assert load_config(path)["system"]["n_ris_elements"] == 64

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.yaml")

    def test_non_mapping_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)

    def test_yaml_roundtrip(self):
        cfg = ExperimentConfig.from_dict({"seed": 9})
        again = ExperimentConfig.from_dict(yaml.safe_load(cfg.to_yaml()))
        assert again.data == cfg.data


class TestViews:
    def test_geometries_follow_override(self):
        bs, ris = ExperimentConfig.from_dict().geometries(25)
        assert bs.n_elements == 16 and ris.n_elements == 25

    def test_arch_input_width(self):
        arch = ExperimentConfig.from_dict().arch(9)
        assert arch.n_layers == 5

    def test_mobility(self):
        mob = ExperimentConfig.from_dict().mobility(30)
        assert mob.n_slots_T == 30
        assert mob.gain_correlation == 0.99


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(2024, "channel", 3) == derive_seed(2024, "channel", 3)

    def test_distinct_parts(self):
        seeds = {derive_seed(2024, s, k) for s in ("channel", "ensemble", "xavier_lsm") for k in range(20)}
        assert len(seeds) == 60

    def test_fits_u32(self):
        s = derive_seed(2 ** 40, "x")
        assert 0 <= s < 2 ** 32
        np.random.default_rng(s)

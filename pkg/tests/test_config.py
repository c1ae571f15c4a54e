import math

import numpy as np
import pytest

from sppinn.config import (
    PROFILES,
    build_attack_configs,
    build_classifier,
    build_collocation,
    build_dynamics,
    build_pde_net,
    build_problem,
    build_weights,
    config_hash,
    dump_ini,
    load_config,
    profile_config,
)
from sppinn.errors import ContractError


class TestProfiles:
    def test_both_presets_exist(self):
        assert set(PROFILES) == {"paper", "desk"}

    def test_presets_share_schema(self):
        paper, desk = PROFILES["paper"], PROFILES["desk"]
        assert set(paper) == set(desk)
        for section in paper:
            assert set(paper[section]) == set(desk[section]), section
            for key in paper[section]:
                assert type(paper[section][key]) is type(desk[section][key])

    def test_paper_constants(self):
        cfg = profile_config("paper")
        assert cfg["problem"]["p"] == 1.0
        assert cfg["problem"]["r"] == -1.0
        assert cfg["problem"]["q"] == 1e-4
        assert cfg["problem"]["length"] == pytest.approx(2.0 * math.pi)
        assert cfg["problem"]["horizon"] == 4.0
        assert cfg["problem"]["grid_m"] == 2000
        assert cfg["pde"]["n_f"] == 8000
        assert cfg["pde"]["n_i"] == 1000
        assert cfg["pde"]["n_b"] == 1000
        assert cfg["pde"]["n_e"] == 2000
        assert cfg["pde"]["hidden_layers"] == 6
        assert cfg["pde"]["adam_epochs"] == 10000
        assert cfg["classifier"]["eta"] == 0.001
        assert cfg["classifier"]["epochs"] == 10
        assert cfg["dvdm"]["dt"] == 1e-3

    def test_desk_constants(self):
        cfg = profile_config("desk")
        assert cfg["problem"]["grid_m"] == 256
        assert cfg["pde"]["n_f"] == 2000
        assert cfg["pde"]["n_e"] == 250
        assert cfg["pde"]["adam_epochs"] == 2000
        assert cfg["pde"]["lbfgs_iters"] == 200
        assert cfg["dvdm"]["dt"] == 4e-3
        assert cfg["classifier"]["subset"] == 10000

    def test_lambdas_default_to_one(self):
        for name in PROFILES:
            pde = profile_config(name)["pde"]
            assert [pde[f"lambda{i}"] for i in (1, 2, 3, 4)] == [1.0] * 4

    def test_unknown_profile_rejected(self):
        with pytest.raises(ContractError, match="unknown profile"):
            profile_config("lab")

    def test_copies_are_independent(self):
        a = profile_config("desk")
        a["pde"]["width"] = 999
        assert profile_config("desk")["pde"]["width"] != 999


class TestOverlay:
    def test_file_overrides_values(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[pde]\nadam_epochs = 7\nadam_lr = 0.5\n[report]\nfigures = no\n")
        cfg = load_config("desk", str(path))
        assert cfg["pde"]["adam_epochs"] == 7
        assert cfg["pde"]["adam_lr"] == 0.5
        assert cfg["report"]["figures"] is False
        # untouched keys keep preset values
        assert cfg["pde"]["n_f"] == 2000

    def test_types_follow_the_preset(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[classifier]\nepochs = 3\nanneal = true\nbasis_mode = complete\n")
        cfg = load_config("desk", str(path))
        assert cfg["classifier"]["epochs"] == 3
        assert isinstance(cfg["classifier"]["epochs"], int)
        assert cfg["classifier"]["anneal"] is True
        assert cfg["classifier"]["basis_mode"] == "complete"

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[misc]\nx = 1\n")
        with pytest.raises(ContractError, match=r"unknown config section \[misc\]"):
            load_config("desk", str(path))

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[pde]\nwidht = 3\n")
        with pytest.raises(ContractError, match="unknown key 'widht'"):
            load_config("desk", str(path))

    def test_bad_number_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[pde]\nadam_epochs = soon\n")
        with pytest.raises(ContractError, match="not an integer"):
            load_config("desk", str(path))

    def test_bad_boolean_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[report]\nfigures = maybe\n")
        with pytest.raises(ContractError, match="not a boolean"):
            load_config("desk", str(path))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ContractError, match="missing or unreadable"):
            load_config("desk", str(tmp_path / "absent.ini"))

    def test_dump_round_trips(self, tmp_path):
        cfg = profile_config("desk")
        path = tmp_path / "full.ini"
        path.write_text(dump_ini(cfg))
        assert load_config("desk", str(path)) == cfg


class TestHash:
    def test_stable_and_sensitive(self):
        a = profile_config("desk")
        b = profile_config("desk")
        assert config_hash(a) == config_hash(b)
        b["pde"]["width"] = 17
        assert config_hash(a) != config_hash(b)

    def test_profiles_hash_differently(self):
        assert config_hash(profile_config("desk")) != config_hash(profile_config("paper"))


class TestBuilders:
    def test_problem(self):
        prob = build_problem(profile_config("desk"))
        assert prob.M == 256 and prob.T == 4.0
        assert prob.L == pytest.approx(2.0 * math.pi)

    def test_weights(self):
        w = build_weights(profile_config("desk"))
        assert (w.l1, w.l2, w.l3, w.l4) == (1.0, 1.0, 1.0, 1.0)

    def test_pde_net_shape(self):
        net = build_pde_net(profile_config("desk"), seed=0)
        assert net.widths == [2] + [16] * 6 + [1]
        paper = build_pde_net(profile_config("paper"), seed=0)
        assert paper.widths == [2] + [64] * 6 + [1]

    def test_collocation_counts(self):
        cfg = profile_config("desk")
        colloc = build_collocation(cfg, seed=3)
        assert colloc.interior.shape == (2000, 2)
        assert colloc.initial.shape == (250, 2)
        assert colloc.boundary_times.shape == (250, 1)
        assert colloc.energy_times.shape == (250,)

    def test_classifier_and_dynamics(self):
        cfg = profile_config("desk")
        net = build_classifier(cfg, seed=0)
        assert net.state_dim == 36 and net.n_classes == 10
        dyn = build_dynamics(cfg, seed=0)
        assert dyn.basis.mode == "diagonal"
        assert dyn.basis.M == 36 * 5 + 1
        assert dyn.eta == 0.001 and dyn.c == 1.0
        paper_dyn = build_dynamics(profile_config("paper"), seed=0)
        assert paper_dyn.c == 0.1

    def test_attack_grid(self):
        cfgs = build_attack_configs(profile_config("desk"))
        assert len(cfgs) == 8
        assert sorted({c.family for c in cfgs}) == ["ifgsm", "pgd"]
        eps = sorted({c.epsilon for c in cfgs})
        assert np.allclose(eps, [2 / 255, 4 / 255, 6 / 255, 8 / 255])
        assert all(c.steps == 10 for c in cfgs)

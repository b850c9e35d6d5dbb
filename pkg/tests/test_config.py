"""Tests for scenario configuration: validation, dict loading, YAML files."""

from pathlib import Path

import numpy as np
import pytest

from viewservo.config import (
    BurstParams,
    ControlParams,
    ConvergenceParams,
    DEFAULT_Q0,
    JogLeg,
    RepositionParams,
    SceneParams,
    ScenarioConfig,
    load_scenario,
    scenario_from_dict,
)
from viewservo.exceptions import ConfigurationError
from viewservo.vision import CorruptionParams

CONFIG_DIR = Path(__file__).parent.parent / "configs"


class TestValidation:
    def test_defaults_construct(self):
        cfg = ScenarioConfig()
        assert cfg.kind == "any_to_any"
        assert cfg.control.dt == pytest.approx(1.0 / 30.0)
        np.testing.assert_array_equal(cfg.q0, DEFAULT_Q0)

    def test_bad_kind(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(kind="teleport")

    def test_bad_m_star_policy(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(m_star_policy="barycenter")

    def test_wrong_q0_length(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(q0=(0.0, 0.1, 0.2))

    def test_settle_frames_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            ConvergenceParams(settle_frames=0)

    def test_control_rejects_bad_mode(self):
        with pytest.raises(ConfigurationError):
            ControlParams(projection_mode="c")

    def test_control_rejects_bad_sign(self):
        with pytest.raises(ConfigurationError):
            ControlParams(error_sign=0.5)

    def test_substep_dt(self):
        c = ControlParams(dt=0.1, substeps=4)
        assert c.substep_dt == pytest.approx(0.025)

    def test_jog_leg_validation(self):
        with pytest.raises(ConfigurationError):
            JogLeg(twist=(1.0, 0.0, 0.0), steps=5)
        with pytest.raises(ConfigurationError):
            JogLeg(twist=(0.0,) * 6, steps=0)

    def test_burst_covers(self):
        b = BurstParams(start_step=10, length=5, corruption=CorruptionParams())
        assert not b.covers(9)
        assert b.covers(10)
        assert b.covers(14)
        assert not b.covers(15)

    def test_corruption_at_prefers_burst(self):
        base = CorruptionParams(noise_px=0.1)
        burst = BurstParams(start_step=3, length=2, corruption=CorruptionParams(noise_px=2.0))
        cfg = ScenarioConfig(corruption=base, bursts=(burst,))
        assert cfg.corruption_at(2).noise_px == pytest.approx(0.1)
        assert cfg.corruption_at(3).noise_px == pytest.approx(2.0)
        assert cfg.corruption_at(5).noise_px == pytest.approx(0.1)

    def test_with_overrides(self):
        cfg = ScenarioConfig(seed=1)
        cfg2 = cfg.with_overrides(seed=9, out_dir="elsewhere")
        assert cfg2.seed == 9
        assert cfg2.out_dir == "elsewhere"
        assert cfg.seed == 1


class TestReposition:
    def test_rotate_moves_features_in_plane(self):
        scene = SceneParams(n_features=10).build()
        rotated = RepositionParams(rotate_deg=90.0).apply(scene)
        # plane normal unchanged by an in-plane rotation
        np.testing.assert_allclose(
            rotated.plane_pose.rotation[:, 2], scene.plane_pose.rotation[:, 2], atol=1e-12
        )
        assert not np.allclose(rotated.plane_pose.rotation, scene.plane_pose.rotation)

    def test_tilt_changes_normal(self):
        scene = SceneParams(n_features=10).build()
        tilted = RepositionParams(tilt_deg=5.0, tilt_axis=1).apply(scene)
        n0 = scene.plane_pose.rotation[:, 2]
        n1 = tilted.plane_pose.rotation[:, 2]
        angle = np.degrees(np.arccos(np.clip(n0 @ n1, -1.0, 1.0)))
        assert angle == pytest.approx(5.0, abs=1e-9)

    def test_identity_is_noop(self):
        scene = SceneParams(n_features=10).build()
        same = RepositionParams().apply(scene)
        np.testing.assert_array_equal(same.plane_pose.rotation, scene.plane_pose.rotation)


class TestDictLoading:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            scenario_from_dict({"kind": "any_to_any", "warp_speed": 9})

    def test_fps_becomes_dt(self):
        cfg = scenario_from_dict({"control": {"fps": 60}})
        assert cfg.control.dt == pytest.approx(1.0 / 60.0)

    def test_dt_and_fps_conflict(self):
        with pytest.raises(ConfigurationError):
            scenario_from_dict({"control": {"fps": 60, "dt": 0.01}})

    def test_gains_require_all_three(self):
        with pytest.raises(ConfigurationError):
            scenario_from_dict({"control": {"gains": {"kp": [1.0] * 7, "ki": [0.0] * 7}}})

    def test_chain_file_resolved_against_base_dir(self):
        cfg = scenario_from_dict({"chain": {"file": "chain_7dof.yaml"}}, base_dir=CONFIG_DIR)
        assert cfg.chain.dof == 7
        assert cfg.chain.endoscope_length == pytest.approx(0.35)

    def test_bursts_parse(self):
        cfg = scenario_from_dict(
            {
                "bursts": [
                    {"start_step": 2, "length": 3, "corruption": {"noise_px": 1.0, "dropout": 0.5}}
                ]
            }
        )
        assert len(cfg.bursts) == 1
        assert cfg.bursts[0].corruption.dropout == pytest.approx(0.5)

    def test_capture_script_parses(self):
        cfg = scenario_from_dict(
            {"capture_script": [{"twist": [0, 0, 0, 0.1, 0, 0], "steps": 7}]}
        )
        assert len(cfg.capture_script) == 1
        assert cfg.capture_script[0].steps == 7

    def test_camera_default_keyword(self):
        cfg = scenario_from_dict({"camera": "default"})
        assert cfg.camera.intrinsics.fx == pytest.approx(500.0)


class TestYamlFiles:
    @pytest.mark.parametrize(
        "name",
        ["any_to_any", "tool_motion", "reposition_cw", "reposition_ccw", "reposition_tilt"],
    )
    def test_shipped_configs_load(self, name):
        cfg = load_scenario(CONFIG_DIR / f"{name}.yaml")
        assert cfg.chain.dof == 7
        assert len(cfg.capture_script) == 2
        assert cfg.convergence.max_steps >= 100

    def test_any_to_any_matches_defaults(self):
        cfg = load_scenario(CONFIG_DIR / "any_to_any.yaml")
        assert cfg.kind == "any_to_any"
        np.testing.assert_allclose(cfg.q0, DEFAULT_Q0, atol=1e-15)
        np.testing.assert_allclose(cfg.trocar, [0.55, 0.0, 0.45], atol=1e-15)
        assert cfg.control.projection_mode == "b"
        assert cfg.convergence.final_mpd_px == pytest.approx(1.5)

    def test_tilt_config_uses_translational_mode(self):
        cfg = load_scenario(CONFIG_DIR / "reposition_tilt.yaml")
        assert cfg.kind == "reposition"
        assert cfg.control.projection_mode == "a"
        assert cfg.reposition.tilt_deg == pytest.approx(4.8)

    def test_tool_motion_has_bursts(self):
        cfg = load_scenario(CONFIG_DIR / "tool_motion.yaml")
        assert len(cfg.bursts) == 2
        assert all(b.corruption.outlier_rate > 0 for b in cfg.bursts)

"""Synthetic data pipeline: generation certificates, corruption, augmentation."""

import numpy as np
import pytest

from dextraj.geometry.mesh import box_mesh
from dextraj.geometry.rigid import (
    RigidPose,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_to_axis_angle,
    rotation_geodesic,
)
from dextraj.hand import builtin_hand_model
from dextraj.synth import (
    AugmentConfig,
    GraspInfeasibleError,
    PerturbConfig,
    TrajectoryAugmenter,
    TrajectoryPerturber,
    augment,
    generate_dataset,
    generate_grasp,
    item_seed,
    parsing_surrogate,
    perturb,
    read_manifest,
    resample_time,
    sample_object_mesh,
    sample_script,
    synthesize_item,
    undo_perturb,
)
from dextraj.synth.generate import _skin_gaps, _track_violation

MODEL = builtin_hand_model("human20")


def make_clip(seed=7):
    _, mesh, traj = synthesize_item(item_seed(seed, 0, 0), MODEL)
    return mesh, traj


class TestGenerate:
    def test_deterministic(self):
        _, a = make_clip(3)
        _, b = make_clip(3)
        assert np.array_equal(a.wrist_quat, b.wrist_quat)
        assert np.array_equal(a.joints, b.joints)
        assert np.array_equal(a.object_trans, b.object_trans)

    def test_phases_and_shape(self):
        rng = np.random.default_rng(11)
        mesh = sample_object_mesh(rng)
        script = sample_script(rng, MODEL, mesh, total_frames=60)
        traj = generate_grasp(script, mesh, MODEL)
        A, C = script.approach_frames, script.close_frames
        assert traj.num_frames == 60 and traj.num_joints == MODEL.dof
        # wrist static while fingers close
        assert np.array_equal(traj.wrist_trans[A], traj.wrist_trans[A + C - 1])
        # joints frozen during approach and lift
        assert np.array_equal(traj.joints[0], traj.joints[A - 1])
        assert np.array_equal(traj.joints[A + C - 1], traj.joints[-1])
        # object static until the lift, then raised by exactly lift_height
        assert np.array_equal(traj.object_trans[0], traj.object_trans[A + C - 1])
        np.testing.assert_allclose(
            traj.object_trans[-1, 2] - traj.object_trans[0, 2], script.lift_height, rtol=1e-12)

    def test_no_penetration_certificate(self):
        mesh, traj = make_clip(19)
        g = _skin_gaps(MODEL, mesh, traj.object_quat, traj.object_trans,
                       traj.wrist_quat, traj.wrist_trans, traj.joints)
        assert g.min() > -1e-9

    def test_two_tip_contacts_at_grasp(self):
        mesh, traj = make_clip(23)
        g = _skin_gaps(MODEL, mesh, traj.object_quat[-1], traj.object_trans[-1],
                       traj.wrist_quat[-1], traj.wrist_trans[-1], traj.joints[-1])
        tips = [int(np.flatnonzero(MODEL._sphere_link_idx == li)[0])
                for li in MODEL._tip_link_idx]
        assert int((g[tips] <= 1e-6).sum()) >= 2

    def test_smoothness_violation_exactly_zero(self):
        for seed in (1, 2, 5):
            _, traj = make_clip(seed)
            v = _track_violation(traj.wrist_quat, traj.wrist_trans, traj.valid)
            v += _track_violation(traj.object_quat, traj.object_trans, traj.valid)
            assert v == 0.0

    def test_object_attached_rigidly_during_lift(self):
        rng = np.random.default_rng(31)
        mesh = sample_object_mesh(rng)
        script = sample_script(rng, MODEL, mesh, total_frames=60)
        traj = generate_grasp(script, mesh, MODEL)
        start = script.approach_frames + script.close_frames - 1
        rel0 = quat_rotate(quat_conj(traj.wrist_quat[start]),
                           traj.object_trans[start] - traj.wrist_trans[start])
        for t in range(start, traj.num_frames):
            rel = quat_rotate(quat_conj(traj.wrist_quat[t]),
                              traj.object_trans[t] - traj.wrist_trans[t])
            np.testing.assert_allclose(rel, rel0, atol=1e-12)
            assert rotation_geodesic(
                quat_mul(quat_conj(traj.wrist_quat[t]), traj.object_quat[t]),
                quat_mul(quat_conj(traj.wrist_quat[start]), traj.object_quat[start])) < 1e-12

    def test_infeasible_when_hand_starts_inside(self):
        rng = np.random.default_rng(4)
        mesh = box_mesh([0.06, 0.06, 0.06])
        script = sample_script(rng, MODEL, mesh, total_frames=60)
        bad = RigidPose(script.grasp_wrist.quat, script.object_pose.trans)
        bad_script = type(script)(
            approach_frames=script.approach_frames, close_frames=script.close_frames,
            lift_frames=script.lift_frames, grasp_wrist=bad,
            object_pose=script.object_pose,
            approach_start_offset=script.approach_start_offset,
            start_rotvec=script.start_rotvec, open_joints=script.open_joints,
            closing_targets=script.closing_targets, lift_height=script.lift_height)
        with pytest.raises(GraspInfeasibleError, match="already touches"):
            generate_grasp(bad_script, mesh, MODEL)


class TestPerturb:
    def test_round_trip(self):
        _, traj = make_clip(13)
        noisy, real = perturb(traj, PerturbConfig(dropout_rate=0.1), seed=5)
        back = undo_perturb(noisy, real)
        np.testing.assert_allclose(back.wrist_quat, traj.wrist_quat, atol=1e-9)
        np.testing.assert_allclose(back.wrist_trans, traj.wrist_trans, atol=1e-9)
        np.testing.assert_allclose(back.joints, traj.joints, atol=1e-9)
        np.testing.assert_allclose(back.object_quat, traj.object_quat, atol=1e-9)
        np.testing.assert_allclose(back.object_trans, traj.object_trans, atol=1e-9)
        assert np.array_equal(back.valid, traj.valid)

    def test_deterministic_per_seed(self):
        _, traj = make_clip(13)
        a, _ = perturb(traj, PerturbConfig(), seed=42)
        b, _ = perturb(traj, PerturbConfig(), seed=42)
        c, _ = perturb(traj, PerturbConfig(), seed=43)
        assert np.array_equal(a.wrist_trans, b.wrist_trans)
        assert not np.array_equal(a.wrist_trans, c.wrist_trans)

    def test_shared_drift_moves_hand_and_object_together(self):
        _, traj = make_clip(13)
        cfg = PerturbConfig(sigma_rot=0.0, sigma_trans=0.0, bias_magnitude=0.0,
                            jitter_sigma=0.0, sigma_joint=0.0, drift_sigma=0.01)
        noisy, real = perturb(traj, cfg, seed=3)
        np.testing.assert_allclose(noisy.wrist_trans - traj.wrist_trans, real.drift, atol=1e-15)
        np.testing.assert_allclose(noisy.object_trans - traj.object_trans, real.drift, atol=1e-15)
        assert np.all(real.drift[0] == 0.0)

    def test_bias_has_requested_magnitude_and_skips_object(self):
        _, traj = make_clip(13)
        cfg = PerturbConfig(sigma_rot=0.0, sigma_trans=0.0, drift_sigma=0.0,
                            jitter_sigma=0.0, sigma_joint=0.0, bias_magnitude=0.02)
        noisy, real = perturb(traj, cfg, seed=3)
        assert np.isclose(np.linalg.norm(real.bias), 0.02)
        np.testing.assert_allclose(noisy.wrist_trans - traj.wrist_trans,
                                   np.tile(real.bias, (traj.num_frames, 1)), atol=1e-15)
        np.testing.assert_allclose(noisy.object_trans, traj.object_trans, atol=1e-15)

    def test_dropout_only_touches_validity(self):
        _, traj = make_clip(13)
        cfg = PerturbConfig(sigma_rot=0.0, sigma_trans=0.0, drift_sigma=0.0,
                            bias_magnitude=0.0, jitter_sigma=0.0, sigma_joint=0.0,
                            dropout_rate=0.3)
        noisy, real = perturb(traj, cfg, seed=8)
        assert real.dropped.any()
        assert np.array_equal(noisy.valid, traj.valid & ~real.dropped)
        np.testing.assert_allclose(noisy.wrist_trans, traj.wrist_trans, atol=1e-15)

    def test_parsing_surrogate_is_harsher(self):
        base, surr = PerturbConfig(), parsing_surrogate()
        assert surr.drift_sigma > base.drift_sigma
        assert surr.dropout_rate > base.dropout_rate

    def test_estimator_api(self):
        _, traj = make_clip(13)
        est = TrajectoryPerturber(seed=1)
        got = est.fit([traj, traj]).transform([traj, traj])
        assert len(got) == 2
        assert not np.array_equal(got[0].wrist_trans, got[1].wrist_trans)
        assert est.get_params()["sigma_rot"] == 0.05
        # per-item streams: item i does not depend on list length
        solo = TrajectoryPerturber(seed=1).fit([traj]).transform([traj])
        assert np.array_equal(solo[0].wrist_trans, got[0].wrist_trans)


class TestAugment:
    def test_rigid_motion_preserves_relative_geometry(self):
        _, traj = make_clip(17)
        cfg = AugmentConfig(scale_range=(1.0, 1.0), resample_range=(1.0, 1.0))
        out = augment(traj, cfg, seed=2)
        assert out.num_frames == traj.num_frames
        rel_before = traj.object_trans - traj.wrist_trans
        rel_after = out.object_trans - out.wrist_trans
        np.testing.assert_allclose(np.linalg.norm(rel_after, axis=1),
                                   np.linalg.norm(rel_before, axis=1), atol=1e-12)
        np.testing.assert_allclose(out.joints, traj.joints, atol=1e-15)
        # one global rotation explains every frame
        g = quat_mul(out.wrist_quat[0], quat_conj(traj.wrist_quat[0]))
        for t in range(0, traj.num_frames, 7):
            got = quat_rotate(g, rel_before[t])
            np.testing.assert_allclose(got, rel_after[t], atol=1e-12)

    def test_scale_scales_scene_and_tag(self):
        _, traj = make_clip(17)
        cfg = AugmentConfig(rotate=False, translation_sigma=0.0,
                            scale_range=(2.0, 2.0), resample_range=(1.0, 1.0))
        out = augment(traj, cfg, seed=2)
        np.testing.assert_allclose(out.wrist_trans, 2.0 * traj.wrist_trans, atol=1e-12)
        np.testing.assert_allclose(out.object_trans, 2.0 * traj.object_trans, atol=1e-12)
        assert out.scale == 2.0 * traj.scale

    def test_resample_length_and_endpoints(self):
        _, traj = make_clip(17)
        out = resample_time(traj, 1.25)
        assert out.num_frames == round(1.25 * traj.num_frames)
        assert out.dt == traj.dt
        np.testing.assert_allclose(out.wrist_trans[0], traj.wrist_trans[0], atol=1e-15)
        np.testing.assert_allclose(out.wrist_trans[-1], traj.wrist_trans[-1], atol=1e-15)
        np.testing.assert_allclose(out.joints[-1], traj.joints[-1], atol=1e-15)

    def test_resample_interpolates_on_geodesics(self):
        q0 = np.array([1.0, 0.0, 0.0, 0.0])
        q1 = quat_from_axis_angle([0.0, 0.0, 0.8])
        traj = make_clip(17)[1].replace(
            wrist_quat=np.stack([q0, q1]),
            wrist_trans=np.zeros((2, 3)),
            joints=np.zeros((2, MODEL.dof)),
            object_quat=np.stack([q0, q0]),
            object_trans=np.zeros((2, 3)),
            valid=np.ones(2, dtype=bool))
        out = resample_time(traj, 1.5)
        mid = out.wrist_quat[1]  # 3 frames, middle at u = 0.5
        expect = quat_from_axis_angle([0.0, 0.0, 0.4])
        np.testing.assert_allclose(mid, expect, atol=1e-12)

    def test_commutes_with_joint_noise(self):
        # rigid-motion augment touches only poses, joint noise only joints
        _, traj = make_clip(17)
        acfg = AugmentConfig(scale_range=(1.0, 1.0), resample_range=(1.0, 1.0))
        pcfg = PerturbConfig(sigma_rot=0.0, sigma_trans=0.0, drift_sigma=0.0,
                             bias_magnitude=0.0, jitter_sigma=0.0, sigma_joint=0.1)
        a = augment(perturb(traj, pcfg, seed=5)[0], acfg, seed=9)
        b = perturb(augment(traj, acfg, seed=9), pcfg, seed=5)[0]
        np.testing.assert_allclose(a.joints, b.joints, atol=1e-12)
        np.testing.assert_allclose(a.wrist_trans, b.wrist_trans, atol=1e-12)
        np.testing.assert_allclose(a.wrist_quat, b.wrist_quat, atol=1e-12)

    def test_estimator_api(self):
        _, traj = make_clip(17)
        est = TrajectoryAugmenter(seed=4, resample_lo=1.0, resample_hi=1.0)
        got = est.fit([traj]).transform([traj])
        assert got[0].num_frames == traj.num_frames
        assert "translation_sigma" in est.get_params()


class TestDataset:
    def test_generate_dataset_round_trip(self, tmp_path):
        rows = generate_dataset(3, 77, MODEL, tmp_path, total_frames=24,
                                perturb_config=PerturbConfig())
        assert len(rows) == 3
        manifest = read_manifest(tmp_path / "manifest.csv")
        assert [r["index"] for r in manifest] == ["0", "1", "2"]
        for r in manifest:
            assert (tmp_path / r["mesh_file"]).exists()
            assert (tmp_path / r["gt_file"]).exists()
            assert (tmp_path / r["perturbed_file"]).exists()

    def test_dataset_reproducible_from_manifest_seed(self, tmp_path):
        from dextraj.trajectory import read_trajectory

        rows = generate_dataset(2, 123, MODEL, tmp_path, total_frames=24)
        r = read_manifest(tmp_path / "manifest.csv")[1]
        _, _, again = synthesize_item(int(r["seed"]), MODEL, total_frames=24)
        loaded, meta = read_trajectory(tmp_path / r["gt_file"])
        assert np.array_equal(loaded.wrist_trans, again.wrist_trans)
        assert meta["seed"] == int(r["seed"])

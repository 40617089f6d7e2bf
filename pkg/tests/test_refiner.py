"""Refiner network and training loop contracts."""

import numpy as np
import pytest
import torch

from dextraj.diffgeom import TensorTracks
from dextraj.geometry.mesh import icosphere_mesh
from dextraj.hand import builtin_hand_model
from dextraj.losses import LossConfig
from dextraj.refiner import (
    RefinerConfig,
    TrainConfig,
    TrajectoryOptimizer,
    TrajectoryRefiner,
    desk_train_config,
    extract_features,
    load_checkpoint,
    refine_trajectory,
    save_checkpoint,
    train,
)
from dextraj.refiner.train import TrainItem, read_loss_curve
from dextraj.synth import (
    GraspInfeasibleError,
    item_seed,
    parsing_surrogate,
    perturb,
    synthesize_item,
)
from dextraj.synth.perturb import PerturbConfig

torch.set_num_threads(1)

MODEL = builtin_hand_model("human20")
SMALL = RefinerConfig(d=16, heads=2, k_hand=4, k_obj=4, n_hand=32, n_obj=32,
                      n_neighbors=8, fusion_layers=1, temporal_layers=1)


def make_item(seed, frames=24):
    for attempt in range(20):
        try:
            _, mesh, traj = synthesize_item(item_seed(900, seed, attempt),
                                            MODEL, total_frames=frames)
            break
        except (GraspInfeasibleError, ValueError):
            continue
    noisy, _ = perturb(traj, PerturbConfig(), seed=[seed, 7])
    return TrainItem(noisy=noisy, target=traj, mesh=mesh, scale=traj.scale)


def randomize(net, seed=0):
    """Re-init all Linears (zeroed heads included) at natural weight scales."""
    from dextraj.refiner.layers import seeded_init_
    seeded_init_(net, torch.Generator().manual_seed(seed))
    return net


class TestIdentityAtInit:
    def test_bit_exact_passthrough(self):
        item = make_item(0)
        net = TrajectoryRefiner(SMALL)
        out = refine_trajectory(net, item.noisy, item.mesh, MODEL)
        for name in ("wrist_quat", "wrist_trans", "joints", "object_quat",
                     "object_trans"):
            a = getattr(item.noisy, name)
            b = getattr(out, name)
            assert a.tobytes() == b.tobytes(), name
        assert np.array_equal(item.noisy.valid, out.valid)

    def test_identity_regardless_of_seed(self):
        item = make_item(1)
        net = TrajectoryRefiner(RefinerConfig(d=16, heads=2, k_hand=4, k_obj=4,
                                              n_hand=32, n_obj=32,
                                              n_neighbors=8, seed=123))
        out = refine_trajectory(net, item.noisy, item.mesh, MODEL)
        assert out.wrist_trans.tobytes() == item.noisy.wrist_trans.tobytes()

    def test_too_long_clip_rejected(self):
        item = make_item(2, frames=24)
        cfg = RefinerConfig(d=16, heads=2, k_hand=4, k_obj=4, n_hand=32,
                            n_obj=32, n_neighbors=8, t_max=20)
        net = TrajectoryRefiner(cfg)
        with pytest.raises(ValueError, match="exceeds t_max"):
            refine_trajectory(net, item.noisy, item.mesh, MODEL)


class TestInvalidFramePassthrough:
    def test_invalid_frames_bit_identical(self):
        item = make_item(3)
        noisy = item.noisy.replace(valid=item.noisy.valid.copy())
        noisy.valid.flags.writeable = True
        noisy.valid[5:9] = False
        net = randomize(TrajectoryRefiner(SMALL))
        out = refine_trajectory(net, noisy, item.mesh, MODEL)
        inv = ~noisy.valid
        assert out.wrist_quat[inv].tobytes() == noisy.wrist_quat[inv].tobytes()
        assert out.wrist_trans[inv].tobytes() == noisy.wrist_trans[inv].tobytes()
        assert out.joints[inv].tobytes() == noisy.joints[inv].tobytes()
        assert out.object_trans[inv].tobytes() == noisy.object_trans[inv].tobytes()
        # valid frames actually moved
        assert not np.allclose(out.wrist_trans[noisy.valid],
                               noisy.wrist_trans[noisy.valid])

    def test_invalid_frames_do_not_influence_valid_ones(self):
        item = make_item(4)
        noisy = item.noisy.replace(valid=item.noisy.valid.copy())
        noisy.valid.flags.writeable = True
        noisy.valid[10] = False
        net = randomize(TrajectoryRefiner(SMALL))
        out1 = refine_trajectory(net, noisy, item.mesh, MODEL)

        mutated = noisy.replace(
            wrist_trans=noisy.wrist_trans.copy(),
            joints=noisy.joints.copy())
        mutated.wrist_trans.flags.writeable = True
        mutated.joints.flags.writeable = True
        mutated.wrist_trans[10] += 3.0
        mutated.joints[10] -= 1.0
        out2 = refine_trajectory(net, mutated, item.mesh, MODEL)
        v = noisy.valid
        np.testing.assert_allclose(out2.wrist_trans[v], out1.wrist_trans[v],
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(out2.joints[v], out1.joints[v],
                                   rtol=0, atol=1e-12)


class TestAttentionContracts:
    def test_rows_sum_to_one(self):
        net = randomize(TrajectoryRefiner(SMALL))
        rng = np.random.default_rng(0)
        h = torch.from_numpy(rng.normal(size=(5, SMALL.d)))
        o = torch.from_numpy(rng.normal(size=(4, SMALL.d)))
        _, _, a_ho, a_oh = net.cross_attend(h, o)
        assert np.allclose(a_ho.sum(-1).detach().numpy(), 1.0, atol=1e-6)
        assert np.allclose(a_oh.sum(-1).detach().numpy(), 1.0, atol=1e-6)

    def test_zero_value_projection_gives_identity(self):
        net = TrajectoryRefiner(SMALL)
        with torch.no_grad():
            for mha in (net.cross.h_from_o, net.cross.o_from_h):
                mha.v_proj.weight.zero_()
                mha.v_proj.bias.zero_()
                mha.out_proj.bias.zero_()
        rng = np.random.default_rng(1)
        h = torch.from_numpy(rng.normal(size=(5, SMALL.d)))
        o = torch.from_numpy(rng.normal(size=(4, SMALL.d)))
        h2, o2, _, _ = net.cross_attend(h, o)
        np.testing.assert_allclose(h2.detach().numpy(), h.numpy(), atol=0)
        np.testing.assert_allclose(o2.detach().numpy(), o.numpy(), atol=0)

    def test_masked_token_has_no_influence(self):
        net = randomize(TrajectoryRefiner(SMALL))
        rng = np.random.default_rng(2)
        h = torch.from_numpy(rng.normal(size=(5, SMALL.d)))
        o = torch.from_numpy(rng.normal(size=(4, SMALL.d)))
        keep = torch.tensor([True, True, False, True])
        h1, _, _, _ = net.cross_attend(h, o, o_key_mask=keep)
        o_mut = o.clone()
        o_mut[2] = 77.0
        h2, _, _, _ = net.cross_attend(h, o_mut, o_key_mask=keep)
        np.testing.assert_allclose(h1.detach().numpy(), h2.detach().numpy(),
                                   rtol=0, atol=0)

    def test_shared_encoder_weights(self):
        net = randomize(TrajectoryRefiner(SMALL))
        rng = np.random.default_rng(3)
        cloud = rng.normal(scale=0.05, size=(40, 3))
        h, o = net.encode_pointclouds(cloud, cloud.copy())
        np.testing.assert_allclose(h.detach().numpy(), o.detach().numpy(),
                                   rtol=0, atol=0)
        assert h.shape == (SMALL.k_hand, SMALL.d)

    def test_cloud_smaller_than_k_rejected(self):
        net = TrajectoryRefiner(SMALL)
        cloud = np.random.default_rng(4).normal(size=(3, 3))
        with pytest.raises(ValueError, match="needs >="):
            net.encode_pointclouds(cloud, cloud)

    def test_neighbor_permutation_invariance(self):
        net = randomize(TrajectoryRefiner(SMALL))
        rng = np.random.default_rng(5)
        neigh = torch.from_numpy(rng.normal(size=(6, SMALL.n_neighbors, 6)))
        tok = net.point_encoder(neigh)
        perm = rng.permutation(SMALL.n_neighbors)
        tok_p = net.point_encoder(neigh[:, perm])
        np.testing.assert_allclose(tok.detach().numpy(), tok_p.detach().numpy(),
                                   rtol=0, atol=0)

    def test_fusion_token_permutation_equivariance(self):
        net = randomize(TrajectoryRefiner(SMALL))
        rng = np.random.default_rng(6)
        n_tok = SMALL.k_hand + SMALL.k_obj + 1
        z = torch.from_numpy(rng.normal(size=(n_tok, SMALL.d)))
        out, _ = net.fuse_frame(z)
        perm = rng.permutation(n_tok)
        out_p, _ = net.fuse_frame(z[perm])
        np.testing.assert_allclose(out_p.detach().numpy(),
                                   out.detach().numpy()[perm],
                                   rtol=1e-12, atol=1e-12)

    def test_fusion_zero_blocks_identity(self):
        net = TrajectoryRefiner(SMALL)
        with torch.no_grad():
            for block in net.fusion:
                block.attn.out_proj.weight.zero_()
                block.attn.out_proj.bias.zero_()
                block.ffn.fc2.weight.zero_()
                block.ffn.fc2.bias.zero_()
        rng = np.random.default_rng(7)
        n_tok = SMALL.k_hand + SMALL.k_obj + 1
        z = torch.from_numpy(rng.normal(size=(n_tok, SMALL.d)))
        out, _ = net.fuse_frame(z)
        np.testing.assert_allclose(out.detach().numpy(), z.numpy(), atol=0)


class TestDeterminismAndGradients:
    def test_forward_bit_identical_across_runs(self):
        item = make_item(5)
        out1 = refine_trajectory(randomize(TrajectoryRefiner(SMALL), 11),
                                 item.noisy, item.mesh, MODEL)
        out2 = refine_trajectory(randomize(TrajectoryRefiner(SMALL), 11),
                                 item.noisy, item.mesh, MODEL)
        assert out1.wrist_trans.tobytes() == out2.wrist_trans.tobytes()
        assert out1.wrist_quat.tobytes() == out2.wrist_quat.tobytes()
        assert out1.joints.tobytes() == out2.joints.tobytes()

    def test_gradients_bit_identical_across_runs(self):
        item = make_item(6, frames=16)
        feats = extract_features([item.noisy], item.mesh, SMALL, MODEL,
                                 scales=[item.scale])
        tracks = TensorTracks.from_trajectories([item.noisy])
        grads = []
        for _ in range(2):
            net = randomize(TrajectoryRefiner(SMALL), 13)
            out = net(tracks, feats)
            loss = (out.wrist_trans ** 2).sum() + (out.joints ** 2).sum() \
                + (out.wrist_quat ** 2).sum() + (out.object_trans ** 2).sum() \
                + (out.object_quat ** 2).sum()
            loss.backward()
            grads.append(torch.cat([p.grad.flatten() for p in net.parameters()]))
        assert torch.equal(grads[0], grads[1])

    def test_finite_difference_param_gradients(self):
        # quadratic functional of the full forward pass, random nonzero params
        item = make_item(7, frames=16)
        net = randomize(TrajectoryRefiner(SMALL), 17)
        feats = extract_features([item.noisy], item.mesh, SMALL, MODEL,
                                 scales=[item.scale])
        tracks = TensorTracks.from_trajectories([item.noisy])
        target = tracks.wrist_trans + 0.01

        def value():
            out = net(tracks, feats)
            return ((out.wrist_trans - target) ** 2).sum() \
                + (out.wrist_quat ** 2).sum() + (out.joints ** 2).sum() \
                + (out.object_trans ** 2).sum()

        loss = value()
        net.zero_grad()
        loss.backward()

        params = list(net.parameters())
        sizes = np.array([p.numel() for p in params])
        cum = np.cumsum(sizes)
        rng = np.random.default_rng(23)
        picks = rng.choice(int(cum[-1]), size=60, replace=False)
        h = 1e-5
        bad = []
        for flat_idx in picks:
            pi = int(np.searchsorted(cum, flat_idx, side="right"))
            local = int(flat_idx - (cum[pi - 1] if pi else 0))
            p = params[pi]
            with torch.no_grad():
                orig = p.view(-1)[local].item()
                p.view(-1)[local] = orig + h
                up = float(value())
                p.view(-1)[local] = orig - h
                dn = float(value())
                p.view(-1)[local] = orig
            fd = (up - dn) / (2 * h)
            an = float(p.grad.view(-1)[local])
            # rtol 1e-4 with an absolute floor at double-precision FD noise
            if abs(fd - an) > 1e-8 + 1e-4 * max(abs(fd), abs(an)):
                bad.append((pi, local, fd, an))
        assert not bad, bad[:5]


class TestTraining:
    def make_items(self, n, frames=16):
        return [make_item(100 + i, frames=frames) for i in range(n)]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty dataset"):
            train([], MODEL, TrainConfig(epochs=1))

    def test_finetune_requires_checkpoint(self):
        items = self.make_items(2)
        with pytest.raises(ValueError, match="checkpoint"):
            train(items, MODEL, TrainConfig(stage="finetune", epochs=1))

    def test_lr_zero_parameters_unchanged_curve_flat(self, tmp_path):
        items = self.make_items(4)
        cfg = TrainConfig(lr=0.0, batch_size=2, epochs=3,
                          loss=LossConfig(cloud_points=32, pene_points=32))
        net, curve = train(items, MODEL, cfg, net_config=SMALL)
        ref = TrajectoryRefiner(SMALL)
        for p, q in zip(net.parameters(), ref.parameters()):
            assert torch.equal(p, q)
        totals = [row["L_total"] for row in curve]
        assert max(totals) - min(totals) < 1e-12

    def test_same_seed_same_curve_and_checkpoint_bytes(self, tmp_path):
        items = self.make_items(3, frames=16)
        cfg = TrainConfig(batch_size=2, epochs=2, seed=5,
                          loss=LossConfig(cloud_points=32, pene_points=32))
        d1, d2 = tmp_path / "a", tmp_path / "b"
        _, c1 = train(items, MODEL, cfg, net_config=SMALL, out_dir=d1)
        _, c2 = train(items, MODEL, cfg, net_config=SMALL, out_dir=d2)
        assert c1 == c2
        for name in ("checkpoint_ep001.bin", "checkpoint_ep002.bin",
                     "loss_curve.csv"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_checkpoint_round_trip(self, tmp_path):
        net = randomize(TrajectoryRefiner(SMALL), 29)
        path = tmp_path / "ck.bin"
        save_checkpoint(path, net, epoch=4, stage="pretrain", seed=9,
                        train_fields={"lr": 1e-4, "batch_size": 16})
        loaded, info = load_checkpoint(path)
        assert info["epoch"] == 4 and info["stage"] == "pretrain"
        assert info["seed"] == 9 and info["next_epoch"] == 5
        assert loaded.config == SMALL
        for p, q in zip(net.state_dict().values(),
                        loaded.state_dict().values()):
            assert torch.equal(p, q)

    def test_finetune_inits_from_checkpoint(self, tmp_path):
        items = self.make_items(2, frames=16)
        small_loss = LossConfig(cloud_points=32, pene_points=32)
        cfg = TrainConfig(batch_size=2, epochs=1, loss=small_loss)
        _, _ = train(items, MODEL, cfg, net_config=SMALL, out_dir=tmp_path)
        fin = [TrainItem(noisy=perturb(it.target, parsing_surrogate(),
                                       seed=[3, i])[0],
                         target=it.target, mesh=it.mesh, scale=it.scale)
               for i, it in enumerate(items)]
        cfg2 = TrainConfig(stage="finetune", batch_size=2, epochs=1,
                           loss=small_loss)
        net2, curve = train(fin, MODEL, cfg2,
                            init_from=tmp_path / "checkpoint_ep001.bin")
        assert curve[0]["stage"] == "finetune"

    def test_loss_decreases_on_tiny_overfit(self):
        # a handful of items, enough epochs to see clear descent
        items = self.make_items(2, frames=16)
        cfg = TrainConfig(lr=3e-4, batch_size=2, epochs=15,
                          loss=LossConfig(cloud_points=32, pene_points=32))
        _, curve = train(items, MODEL, cfg, net_config=SMALL)
        assert curve[-1]["L_total"] < curve[0]["L_total"]


class TestEstimator:
    def test_get_params_round_trip(self):
        opt = TrajectoryOptimizer(epochs=2, seed=3)
        params = opt.get_params()
        assert params["epochs"] == 2 and params["seed"] == 3
        opt2 = TrajectoryOptimizer(**params)
        assert opt2.get_params() == params

    def test_fit_transform_smoke(self):
        items = [make_item(200 + i, frames=16) for i in range(2)]
        opt = TrajectoryOptimizer(epochs=1, batch_size=2, d=16, heads=2,
                                  cloud_points=32, pene_points=32)
        opt.fit([it.noisy for it in items], [it.target for it in items],
                meshes=[it.mesh for it in items], model=MODEL)
        out = opt.transform([items[0].noisy], meshes=[items[0].mesh])
        assert out[0].num_frames == items[0].noisy.num_frames

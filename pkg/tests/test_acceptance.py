"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
(run with ``pytest tests/test_acceptance.py -v -s`` to see them live).

The two training-based criteria use small calibrated budgets; everything is
seeded, so reruns reproduce the reported numbers exactly.
"""

import math
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from iprrn.blocks import (
    ResidualBlock,
    ResidualDenseBlock,
    SEBlock,
    bicubic_resize,
    init_weights,
    pixel_shuffle,
    pixel_unshuffle,
)
from iprrn.config import (
    AblationPlan,
    AblationVariant,
    DegradationSpec,
    ModelConfig,
    RunConfig,
    TrainConfig,
)
from iprrn.data import ClipRecord, degrade, make_synthetic_dataset, synth_sequence
from iprrn.metrics import gap_report, psnr, ssim
from iprrn.model import build_model
from iprrn.rrnet import HiddenState, RRNet
from iprrn.trainer import (
    ablate,
    count_params,
    evaluate,
    l1_loss,
    restore_model,
    train,
)

from conftest import randomize_params
from oracles import (
    pixel_shuffle_loops,
    rdb_loops,
    residual_block_loops,
    se_loops,
    ssim_loops,
)


@contextmanager
def criterion(number: int, name: str):
    try:
        yield
    except BaseException:
        print(f"\n[criterion {number:02d}] {name}: FAIL")
        raise
    print(f"\n[criterion {number:02d}] {name}: PASS")


def rand64(*shape, gen):
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def test_c01_block_oracle_equivalence():
    with criterion(1, "block oracle equivalence (>=20 random inputs, 1e-6)"):
        gen = torch.Generator().manual_seed(101)
        for trial in range(20):
            se = SEBlock(4, reduction=2).double()
            with torch.no_grad():
                se.w1.copy_(0.4 * rand64(2, 4, gen=gen))
                se.w2.copy_(0.4 * rand64(4, 2, gen=gen))
            x = rand64(4, 3, 3, gen=gen)
            expected = se_loops(x.numpy(), se.w1.detach().numpy(),
                                se.w2.detach().numpy())
            torch.testing.assert_close(se(x), torch.from_numpy(expected),
                                       rtol=0, atol=1e-6)

            res = ResidualBlock(3).double()
            init_weights(res, gen)
            with torch.no_grad():
                res.conv1.bias.normal_(0, 0.1, generator=gen)
                res.conv2.bias.normal_(0, 0.1, generator=gen)
            x = rand64(3, 4, 4, gen=gen)
            expected = residual_block_loops(
                x.numpy(),
                res.conv1.weight.detach().numpy(), res.conv1.bias.detach().numpy(),
                res.conv2.weight.detach().numpy(), res.conv2.bias.detach().numpy(),
            )
            torch.testing.assert_close(res(x), torch.from_numpy(expected),
                                       rtol=0, atol=1e-6)

            rdb = ResidualDenseBlock(8, 8).double()
            init_weights(rdb, gen)
            with torch.no_grad():
                for conv in (rdb.stage1, rdb.stage2, rdb.stage3, rdb.fuse):
                    conv.bias.normal_(0, 0.1, generator=gen)
            x = rand64(8, 4, 4, gen=gen)
            stages = [(c.weight.detach().numpy(), c.bias.detach().numpy())
                      for c in (rdb.stage1, rdb.stage2, rdb.stage3)]
            expected = rdb_loops(x.numpy(), stages,
                                 rdb.fuse.weight.detach().numpy(),
                                 rdb.fuse.bias.detach().numpy())
            torch.testing.assert_close(rdb(x), torch.from_numpy(expected),
                                       rtol=0, atol=1e-6)

            x = rand64(12, 3, 2, gen=gen)
            expected = pixel_shuffle_loops(x.numpy(), 2)
            assert torch.equal(pixel_shuffle(x, 2), torch.from_numpy(expected))


def test_c02_finite_difference_gradients():
    with criterion(2, "analytic vs central-difference gradients, full step"):
        net = RRNet(scale=2, frame_channels=3, hidden_temporal=8,
                    hidden_spatial=12, trunk_width=8, rdb_growth=8,
                    n_rdb=1).double()
        randomize_params(net, seed=202, std=0.1)
        gen = torch.Generator().manual_seed(203)
        h0 = HiddenState(0.5 * rand64(8, 4, 4, gen=gen),
                         0.5 * rand64(12, 4, 4, gen=gen))
        # two steps so the temporal head (which only feeds the next unit)
        # contributes to the loss as well
        frames = torch.rand(2, 3, 4, 4, generator=gen, dtype=torch.float64)
        target = torch.rand(2, 3, 8, 8, generator=gen, dtype=torch.float64)

        def loss_value():
            return l1_loss(net.run_sequence(frames, h0), target)

        loss = loss_value()
        analytic = torch.autograd.grad(loss, list(net.parameters()))

        eps = 1e-6
        worst = 0.0
        n_params = 0
        with torch.no_grad():
            for p, grad in zip(net.parameters(), analytic):
                flat = p.data.view(-1)
                gflat = grad.view(-1)
                for i in range(flat.numel()):
                    saved = flat[i].item()
                    flat[i] = saved + eps
                    up = float(loss_value())
                    flat[i] = saved - eps
                    down = float(loss_value())
                    flat[i] = saved
                    fd = (up - down) / (2 * eps)
                    a = float(gflat[i])
                    rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
                    worst = max(worst, rel)
                    n_params += 1
        assert n_params == sum(p.numel() for p in net.parameters())
        assert worst < 1e-4, f"worst relative error {worst:.3e} over {n_params} params"


def test_c03_zero_parameter_identity():
    with criterion(3, "zero parameters reduce to exact bicubic; shuffle bijective"):
        cfg = ModelConfig(scale=4, hidden_temporal=8, hidden_spatial=48,
                          trunk_width=8, rdb_growth=8, n_rdb=2, ipnet_frames=3,
                          shallow_group_width=4, ipnet_width=8, n_res_blocks=1,
                          se_reduction=2)
        model = build_model(cfg)
        for p in model.parameters():
            p.data.zero_()
        frames = torch.rand(6, 3, 4, 4)
        sr = model(frames)
        expected = torch.stack([bicubic_resize(f, 4) for f in frames])
        assert torch.equal(sr, expected)

        x = torch.randn(48, 5, 7)
        assert torch.equal(pixel_unshuffle(pixel_shuffle(x, 4), 4), x)
        y = torch.randn(2, 8, 12)
        assert torch.equal(pixel_shuffle(pixel_unshuffle(y, 2), 2), y)


def test_c04_causality_suite():
    with criterion(4, "causality: strict without prebuilder, widened with it"):
        torch.manual_seed(404)
        frames = torch.rand(7, 3, 4, 4)

        plain = randomize_params(
            build_model(ModelConfig(
                scale=2, hidden_temporal=8, hidden_spatial=12, trunk_width=8,
                rdb_growth=8, n_rdb=1, ipnet_frames=0)), seed=404)
        base = plain(frames)
        for t in range(1, 7):
            for k in range(1, 7 - t + 1):
                if t + k > 6:
                    continue
                perturbed = frames.clone()
                perturbed[t + k] += 0.2
                out = plain(perturbed)
                assert torch.equal(out[: t + k], base[: t + k])

        with_pre = randomize_params(
            build_model(ModelConfig(
                scale=2, hidden_temporal=8, hidden_spatial=12, trunk_width=8,
                rdb_growth=8, n_rdb=1, ipnet_frames=3, shallow_group_width=4,
                ipnet_width=8, n_res_blocks=1, se_reduction=2)), seed=405)
        perturbed = frames.clone()
        perturbed[1] += 0.2
        a, b = with_pre(frames), with_pre(perturbed)
        assert (a[0] - b[0]).abs().sum() > 0


def test_c05_baseline_equivalence():
    with criterion(5, "disabled prebuilder == hard-coded zero initial state"):
        cfg = ModelConfig(scale=2, hidden_temporal=8, hidden_spatial=12,
                          trunk_width=8, rdb_growth=8, n_rdb=1, ipnet_frames=0)
        model = randomize_params(build_model(cfg), seed=505)
        frames = torch.rand(5, 3, 6, 6)
        h0 = model.prebuild(frames)
        assert torch.equal(h0.temporal, torch.zeros(8, 6, 6))
        assert torch.equal(h0.spatial, torch.zeros(12, 6, 6))
        hard_coded = HiddenState(torch.zeros(8, 6, 6), torch.zeros(12, 6, 6))
        assert torch.equal(model(frames),
                           model.core.run_sequence(frames, hard_coded))


def overfit_clip():
    spec = DegradationSpec(blur_sigma=1.2, kernel_size=9, scale=2)
    hr = synth_sequence("translating_texture", 10, 32, 32, seed=123,
                        velocity=(0.6, 0.3))
    return ClipRecord("overfit", hr, degrade(hr, spec))


def test_c06_overfit_smoke():
    with criterion(6, "overfit one clip: >40 dB within 2000 steps, "
                      "monotone epoch losses"):
        clip = overfit_clip()
        cfg = ModelConfig(scale=2, hidden_temporal=16, hidden_spatial=12,
                          trunk_width=16, rdb_growth=16, n_rdb=2,
                          ipnet_frames=3, shallow_group_width=8,
                          ipnet_width=16, n_res_blocks=1, se_reduction=4,
                          seed=0)
        tcfg = TrainConfig(max_epochs=80, batch_size=1, lr0=3e-3,
                           decay_every=30, seq_len=10, seed=0)
        steps = tcfg.max_epochs * 20
        assert steps <= 2000
        result = train([clip] * 20, cfg, tcfg)
        report = evaluate(result.model, [clip])[0]
        losses = [e.loss for e in result.history]
        increases = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
        frac = increases / (len(losses) - 1)
        print(f"\n  overfit: {report.mean_psnr:.2f} dB after {steps} steps, "
              f"{increases} non-monotone epoch transitions ({frac:.1%})")
        assert report.mean_psnr > 40.0
        assert frac <= 0.05


def test_c07_metric_oracles():
    with criterion(7, "metric oracles: PSNR closed form, SSIM, gap arithmetic"):
        ref = torch.full((3, 16, 16), 0.4, dtype=torch.float64)
        value = psnr(ref, ref + 16.0 / 255.0, channel_mode="RGB")
        assert value == pytest.approx(24.05, abs=0.01)

        x = torch.rand(3, 16, 16)
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

        rng = np.random.default_rng(77)
        a = rng.random((1, 32, 32))
        b = np.clip(a + 0.15 * rng.standard_normal((1, 32, 32)), 0, 1)
        assert ssim(a, b, channel_mode="RGB") == pytest.approx(
            ssim_loops(a[0], b[0]), abs=1e-6
        )

        city = gap_report([25.37, 27.0, 32.14])
        assert city.gap_psnr == pytest.approx(32.14 - 25.37, abs=1e-12)
        assert city.gap_psnr == pytest.approx(6.77, abs=1e-9)
        calendar = gap_report([24.18, 25.26])
        assert calendar.gap_psnr == pytest.approx(1.08, abs=1e-9)


def test_c08_directional_prebuilder_benefit():
    with criterion(8, "prebuilder first-frame benefit on a 50-clip corpus"):
        spec = DegradationSpec(blur_sigma=1.2, kernel_size=9, scale=2)
        train_clips = make_synthetic_dataset(50, 8, 32, spec, seed=100)
        eval_clips = make_synthetic_dataset(12, 8, 32, spec, seed=999)
        base = RunConfig(
            model=ModelConfig(scale=2, hidden_temporal=16, hidden_spatial=12,
                              trunk_width=16, rdb_growth=16, n_rdb=2,
                              ipnet_frames=3, shallow_group_width=8,
                              ipnet_width=16, n_res_blocks=1, se_reduction=4,
                              seed=0),
            train=TrainConfig(max_epochs=60, batch_size=8, lr0=2e-3,
                              seq_len=8, seed=0),
            degradation=spec,
        )
        plan = AblationPlan("directional", [
            AblationVariant("without_prebuilder", {"model.ipnet_frames": "0"}),
            AblationVariant("with_prebuilder", {"model.ipnet_frames": "3"}),
        ])
        without, with_pre = ablate(base, plan, train_clips,
                                   eval_clips=eval_clips)
        assert without.error is None and with_pre.error is None
        print(f"\n  first-frame PSNR: with={with_pre.first_frame_psnr:.3f} dB, "
              f"without={without.first_frame_psnr:.3f} dB "
              f"(delta {with_pre.first_frame_psnr - without.first_frame_psnr:+.3f})")
        print(f"  PSNR gap:         with={with_pre.gap_psnr:.3f} dB, "
              f"without={without.gap_psnr:.3f} dB")
        # hard gate: tolerate training noise
        assert with_pre.first_frame_psnr >= without.first_frame_psnr - 0.05
        # reported directional content
        assert with_pre.first_frame_psnr > without.first_frame_psnr
        assert with_pre.gap_psnr < without.gap_psnr


def test_c09_parameter_accounting():
    with criterion(9, "parameter counts within 25% of reported magnitudes"):
        full = count_params(ModelConfig())
        without = count_params(ModelConfig(ipnet_frames=0))
        print(f"\n  params: full={full / 1e6:.3f}M (target 6.10M), "
              f"reconstructor-only={without / 1e6:.3f}M (target 4.14M)")
        assert abs(full - 6.10e6) / 6.10e6 <= 0.25
        assert abs(without - 4.14e6) / 4.14e6 <= 0.25


def test_c10_determinism_and_checkpointing(tmp_path):
    with criterion(10, "seeded determinism and bit-exact checkpoint round trip"):
        spec = DegradationSpec(blur_sigma=1.2, kernel_size=9, scale=2)
        dataset = make_synthetic_dataset(3, 4, 16, spec, seed=10)
        cfg = ModelConfig(scale=2, hidden_temporal=8, hidden_spatial=12,
                          trunk_width=8, rdb_growth=8, n_rdb=1, ipnet_frames=2,
                          shallow_group_width=4, ipnet_width=8, n_res_blocks=1,
                          se_reduction=2, seed=3)
        tcfg = TrainConfig(max_epochs=3, batch_size=2, lr0=1e-3, seq_len=4,
                           seed=3)
        a = train(dataset, cfg, tcfg, out_dir=tmp_path / "a")
        b = train(dataset, cfg, tcfg, out_dir=tmp_path / "b")
        assert [e.loss for e in a.history] == [e.loss for e in b.history]
        assert (tmp_path / "a" / "train_log.csv").read_bytes() == \
            (tmp_path / "b" / "train_log.csv").read_bytes()

        frames = dataset[0].lr_frames
        with torch.no_grad():
            before = a.model(frames)
        restored, _ = restore_model(a.checkpoint_path)
        with torch.no_grad():
            after = restored(frames)
        assert torch.equal(before, after)
        for pa, pb in zip(a.model.parameters(), restored.parameters()):
            assert torch.equal(pa, pb)

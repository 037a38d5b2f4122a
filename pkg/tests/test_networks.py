import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from hw2mp.networks import (BiLSTMCTCHead, Recognizer, RecognitionPath, UNetGenerator,
                            extract_characters, joint_attention, masked_image,
                            recognition_features, unet_generate)

from .helpers import central_difference_grad, relative_error


class TestGenerator:
    def test_output_shape(self):
        torch.manual_seed(0)
        g = UNetGenerator(levels=5, base_channels=4, max_channels=16, z_channels=2)
        hw = torch.randn(3, 1, 32, 128)
        z = torch.randn(g.noise_shape(3))
        assert unet_generate(hw, z, g).shape == hw.shape

    def test_deterministic(self):
        torch.manual_seed(0)
        g = UNetGenerator(levels=5, base_channels=4, max_channels=16, z_channels=2)
        hw, z = torch.randn(2, 1, 32, 128), torch.randn(g.noise_shape(2))
        assert torch.equal(g(hw, z), g(hw, z))

    def test_zero_noise_default(self):
        g = UNetGenerator(levels=3, base_channels=4, z_channels=2)
        hw = torch.randn(2, 1, 32, 128)
        assert torch.equal(g(hw), g(hw, torch.zeros(g.noise_shape(2))))

    def test_bad_noise_shape(self):
        g = UNetGenerator(levels=3, base_channels=4, z_channels=2)
        with pytest.raises(ValueError):
            g(torch.randn(2, 1, 32, 128), torch.randn(2, 3, 4, 16))
        with pytest.raises(ValueError):
            g(torch.randn(2, 1, 30, 128))

    def test_plain_variant_has_no_normalization(self):
        g = UNetGenerator(levels=3, base_channels=4, z_channels=2, norm=False)
        assert not any(isinstance(m, torch.nn.BatchNorm2d) for m in g.modules())

    def test_noise_changes_output(self):
        torch.manual_seed(1)
        g = UNetGenerator(levels=3, base_channels=4, z_channels=2)
        hw = torch.randn(1, 1, 32, 128)
        assert not torch.allclose(g(hw, torch.randn(g.noise_shape(1))), g(hw))

    def test_skip_path_surgery(self):
        # cutting the innermost decoder stage leaves a function of the skip activations only,
        # so the bottleneck noise has no effect any more
        torch.manual_seed(2)
        g = UNetGenerator(levels=4, base_channels=4, z_channels=3)
        with torch.no_grad():
            g.up[-1].weight.zero_()
            g.up[-1].bias.zero_()
        hw = torch.randn(2, 1, 32, 128)
        a = g(hw, torch.randn(g.noise_shape(2)))
        b = g(hw, torch.randn(g.noise_shape(2)))
        assert torch.equal(a, b)
        assert a.abs().sum() > 0

    def test_gradient_two_level_toy(self):
        torch.manual_seed(3)
        for _ in range(3):
            g = UNetGenerator(levels=2, base_channels=2, z_channels=1).double()
            with torch.no_grad():
                for m in g.modules():
                    if isinstance(m, torch.nn.BatchNorm2d):
                        m.running_mean.normal_()
                        m.running_var.uniform_(0.5, 2)
                        m.weight.normal_()
            g.eval()      # frozen normalization statistics
            hw = torch.randn(2, 1, 4, 8, dtype=torch.float64)
            z = torch.randn(g.noise_shape(2, 4, 8), dtype=torch.float64)
            wts = torch.randn(2, 1, 4, 8, dtype=torch.float64)
            f = lambda: (g(hw, z) * wts).sum()
            g.zero_grad()
            f().backward()
            for p in g.parameters():
                assert relative_error(p.grad, central_difference_grad(f, p)) <= 1e-6


def resize_reference(img, boxes, cell):
    out = []
    for b, word in enumerate(boxes):
        for x0, x1 in word:
            crop = img[b:b + 1, :, :, x0:x1]
            out.append(F.interpolate(crop, size=(cell, cell), mode="bilinear", align_corners=False))
    return torch.cat(out)


class TestCharacters:
    def test_single_full_width_character(self):
        img = torch.randn(1, 1, 32, 32)
        slices = extract_characters(img, [[(0, 32)]])
        torch.testing.assert_close(slices.pixels, img)

    def test_count_matches_label_lengths(self):
        img = torch.randn(2, 1, 32, 128)
        boxes = [[(10, 20), (20, 30)], [(0, 10), (10, 20), (50, 60)]]
        slices = extract_characters(img, boxes, labels=["ab", "cde"])
        assert len(slices) == 5
        assert slices.labels == list("abcde")
        assert slices.k.tolist() == [0, 1, 0, 1, 2]
        assert slices.word_index.tolist() == [0, 0, 1, 1, 1]

    def test_matches_per_slice_bilinear_resize(self):
        torch.manual_seed(4)
        img = torch.randn(2, 1, 32, 128, dtype=torch.float64)
        boxes = [[(3, 13), (13, 23), (40, 47)], [(100, 128), (0, 1)]]
        torch.testing.assert_close(extract_characters(img, boxes).pixels, resize_reference(img, boxes, 32))

    def test_background_never_contributes(self):
        img = torch.randn(1, 1, 32, 128)
        boxes = [[(20, 30), (30, 40), (60, 70)]]
        other = img.clone()
        other[..., :20] = 99
        other[..., 40:60] = -99
        other[..., 70:] = 5
        torch.testing.assert_close(extract_characters(img, boxes).pixels,
                                   extract_characters(other, boxes).pixels)

    def test_reassembly_reproduces_masked_image(self):
        img = torch.randn(2, 1, 32, 128)
        boxes = [[(0, 32), (64, 96)], [(32, 64), (96, 128)]]
        slices = extract_characters(img, boxes)
        canvas = torch.zeros_like(img)
        for n in range(len(slices)):
            b = slices.word_index[n]
            x0, x1 = slices.boxes[n].tolist()
            canvas[b, :, :, x0:x1] = slices.pixels[n]
        torch.testing.assert_close(canvas, masked_image(img, boxes))

    def test_out_of_bounds(self):
        with pytest.raises(ValueError):
            extract_characters(torch.zeros(1, 1, 32, 128), [[(120, 130)]])
        with pytest.raises(ValueError):
            extract_characters(torch.zeros(1, 1, 32, 128), [[(10, 10)]])

    def test_gradient_flows_only_into_boxes(self):
        img = torch.randn(1, 1, 32, 128, requires_grad=True)
        extract_characters(img, [[(10, 20)]]).pixels.sum().backward()
        g = img.grad[0, 0].abs().sum(0)
        assert g[10:20].min() > 0
        assert g[:10].sum() == 0 and g[20:].sum() == 0


class TestRecognitionPath:
    def test_both_paths_same_length(self):
        r = Recognizer(10, mode="joint")
        x = torch.randn(2, 1, 32, 128)
        assert r.path_h(x).shape[1] == r.path_p(x).shape[1] == r.path_h.seq_len()

    def test_zero_input_zero_bias(self):
        path = RecognitionPath()
        for m in path.modules():
            if isinstance(m, torch.nn.Conv2d):
                m.bias.data.zero_()
        path.eval()
        out = recognition_features(torch.zeros(2, 1, 32, 128), path)
        assert torch.all(out == 0)

    def test_toy_downsampling(self):
        # 128 columns halved by four pools -> 8 steps
        path = RecognitionPath(channels=(4, 8, 8, 16, 16), width_pools=4)
        assert path(torch.randn(3, 1, 32, 128)).shape == (3, 8, 16)

    def test_shape_error(self):
        with pytest.raises(ValueError):
            RecognitionPath()(torch.randn(1, 1, 30, 128))


def attention_reference(H, P, W):
    T, T2 = H.shape[0], P.shape[0]
    N = [[math.tanh(sum(H[i, a] * W[a, b] * P[j, b] for a in range(H.shape[1]) for b in range(P.shape[1])))
          for j in range(T2)] for i in range(T)]
    alpha = [[math.exp(N[i][j]) / sum(math.exp(v) for v in N[i]) for j in range(T2)] for i in range(T)]
    Hhat = [[sum(alpha[i][j] * P[j, b] for j in range(T2)) for b in range(P.shape[1])] for i in range(T)]
    return np.concatenate([H, np.array(Hhat)], axis=1), np.array(alpha)


class TestJointAttention:
    def test_zero_weight_is_mean(self):
        H, P = torch.randn(5, 3), torch.randn(5, 4)
        A, alpha = joint_attention(H, P, torch.zeros(3, 4), return_weights=True)
        torch.testing.assert_close(alpha, torch.full((5, 5), 0.2))
        torch.testing.assert_close(A[:, 3:], P.mean(0).expand(5, 4))
        torch.testing.assert_close(A[:, :3], H)

    def test_single_step(self):
        H, P = torch.randn(1, 3), torch.randn(1, 2)
        A, alpha = joint_attention(H, P, torch.randn(3, 2), return_weights=True)
        assert alpha.item() == 1
        torch.testing.assert_close(A, torch.cat([H, P], 1))

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            T, d1, d2 = rng.integers(1, 6, size=3)
            H, P, W = rng.normal(size=(T, d1)), rng.normal(size=(T, d2)), rng.normal(size=(d1, d2))
            A, alpha = joint_attention(*(torch.from_numpy(a) for a in (H, P, W)), return_weights=True)
            A_ref, alpha_ref = attention_reference(H, P, W)
            np.testing.assert_allclose(A.numpy(), A_ref, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(alpha.sum(-1).numpy(), 1, atol=1e-6)
            np.testing.assert_allclose(alpha.numpy(), alpha_ref, rtol=1e-10)

    def test_batched(self):
        H, P, W = torch.randn(3, 6, 4), torch.randn(3, 6, 5), torch.randn(4, 5)
        A = joint_attention(H, P, W)
        for b in range(3):
            torch.testing.assert_close(A[b], joint_attention(H[b], P[b], W))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            joint_attention(torch.randn(4, 3), torch.randn(4, 2), torch.randn(3, 3))

    def test_gradients(self):
        torch.manual_seed(5)
        for _ in range(5):
            H = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
            P = torch.randn(4, 2, dtype=torch.float64, requires_grad=True)
            W = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
            wts = torch.randn(4, 5, dtype=torch.float64)
            f = lambda: (joint_attention(H, P, W) * wts).sum()
            f().backward()
            for t in (H, P, W):
                assert relative_error(t.grad, central_difference_grad(f, t)) <= 1e-6


class TestHead:
    def test_log_normalized(self):
        head = BiLSTMCTCHead(6, 8, 5)
        out = head(torch.randn(3, 7, 6))
        torch.testing.assert_close(out.logsumexp(-1), torch.zeros(3, 7), atol=1e-6, rtol=0)

    def test_bidirectional_effect(self):
        torch.manual_seed(6)
        head = BiLSTMCTCHead(6, 8, 5)
        A = torch.randn(1, 7, 6)
        fwd = head(A)
        rev = head(A.flip(1)).flip(1)
        assert not torch.allclose(fwd, rev, atol=1e-4)

    def test_hidden_width_does_not_change_shape(self):
        A = torch.randn(2, 16, 6)
        assert BiLSTMCTCHead(6, 16, 9)(A).shape == BiLSTMCTCHead(6, 256, 9)(A).shape == (2, 16, 9)

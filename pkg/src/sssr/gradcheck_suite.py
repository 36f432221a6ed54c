"""Named gradient checks covering every primitive and all three data terms.

Each check compares an analytic gradient (reverse mode, or the closed form
where one exists) against central finite differences in float64 on a small
random instance.  The CLI ``gradcheck`` command runs the whole table; the
acceptance suite repeats the three fidelity checks over several seeds.
"""

from __future__ import annotations

import numpy as np

from . import imageops as I
from . import tensor as T
from .attention import AttnConfig, Mha, head_attention
from .fusion import FusionContext, fusion_gradient
from .nn import ProxNet, Rcab
from .spatial import SrStage, tie_adjoint
from .spectral import ClusterMlp, apply_cluster_mlps, trivial_map, kmeans_assign
from .tensor import GradCheckReport, Tensor, compare_gradients, finite_difference, gradient_check

TOL = 1e-5


def _rng(seed):
    return np.random.default_rng([seed, 9])


def sr_fidelity_check(seed: int = 0, size: int = 6, s: int = 2,
                      tol: float = TOL) -> GradCheckReport:
    """0.5*||D(u)-f||^2 with the adjoint-tied upsampler as analytic gradient."""
    rng = _rng(seed)
    stage = tie_adjoint(SrStage(2, s, 8, 1, rng)).astype(np.float64)
    u = rng.random((size, size, 2))
    f = Tensor(rng.random((size // s, size // s, 2)), dtype=np.float64)

    def fidelity(t):
        r = T.sub(stage.down(t), f)
        return T.mul(T.tsum(T.mul(r, r)), 0.5)

    with T.no_grad():
        analytic = stage.direction(Tensor(u, dtype=np.float64), f).data
    numeric = finite_difference(fidelity, u)
    return compare_gradients(f"sr_fidelity[seed={seed}]", analytic, numeric, tol)


def ssr_fidelity_check(seed: int = 0, size: int = 6, tol: float = TOL) -> GradCheckReport:
    """0.5*||S(u)-f||^2 through cluster-routed band integration MLPs."""
    rng = _rng(seed)
    c_hs, c_ms, clusters = 5, 2, 2
    mlps = [ClusterMlp(c_hs, c_ms, 6, rng).astype(np.float64)
            for _ in range(clusters)]
    centroids = rng.random((clusters, c_hs))
    probe = rng.random((size, size, c_hs))
    cmap = kmeans_assign(probe, centroids)
    f = Tensor(rng.random((size, size, c_ms)), dtype=np.float64)

    def fidelity(t):
        r = T.sub(apply_cluster_mlps(t, cmap, mlps), f)
        return T.mul(T.tsum(T.mul(r, r)), 0.5)

    return gradient_check(fidelity, probe, tol=tol, name=f"ssr_fidelity[seed={seed}]")


def fusion_fidelity_check(seed: int = 0, size: int = 6, tol: float = TOL) -> GradCheckReport:
    """Radiometric data term: closed-form gradient vs finite differences."""
    rng = _rng(seed)
    bands = 3
    ctx = FusionContext(
        low_guide=Tensor(rng.uniform(0.5, 1.5, (size, size, bands)), dtype=np.float64),
        low_spectral=Tensor(rng.uniform(0.2, 1.0, (size, size, bands)), dtype=np.float64),
        high_guide=Tensor(rng.uniform(0.2, 1.0, (size, size, bands)), dtype=np.float64),
    )
    u = rng.random((size, size, bands))

    def energy(t):
        d = T.sub(T.mul(t, ctx.low_guide), T.mul(ctx.low_spectral, ctx.high_guide))
        return T.mul(T.tsum(T.mul(d, d)), 0.5)

    with T.no_grad():
        analytic = fusion_gradient(Tensor(u, dtype=np.float64), ctx).data
    numeric = finite_difference(energy, u)
    return compare_gradients(f"fusion_fidelity[seed={seed}]", analytic, numeric, tol)


def _away_from_kinks(rng, shape, margin=0.05):
    """Random values bounded away from ReLU kinks so FD probes stay one-sided."""
    signs = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return signs * rng.uniform(margin, 1.0, shape)


def run_checks(only: str | None = None, tol: float = TOL, seed: int = 0) -> list:
    """Run the named check table, optionally filtered by substring."""
    rng = _rng(seed)

    def conv_input(t):
        kern = Tensor(_rng(seed + 1).standard_normal((3, 3, 2, 3)), dtype=np.float64)
        ref = Tensor(_rng(seed + 2).random((3, 3, 3)), dtype=np.float64)
        r = T.sub(I.conv2d(t, kern, stride=2, pad=1), ref)
        return T.mul(T.tsum(T.mul(r, r)), 0.5)

    def conv_kernel(t):
        x = Tensor(_rng(seed + 3).random((5, 5, 2)), dtype=np.float64)
        w = Tensor(_rng(seed + 4).random((5, 5, 3)), dtype=np.float64)
        return T.tsum(T.mul(I.conv2d(x, t, stride=1, pad=1), w))

    def conv_bias(t):
        x = Tensor(_rng(seed + 5).random((4, 4, 2)), dtype=np.float64)
        kern = Tensor(_rng(seed + 6).standard_normal((3, 3, 2, 3)), dtype=np.float64)
        y = I.conv2d(x, kern, bias=t, pad=1)
        return T.tsum(T.mul(y, y))

    def deconv_input(t):
        kern = Tensor(_rng(seed + 7).standard_normal((5, 5, 2, 3)), dtype=np.float64)
        y = I.conv_transpose2d(t, kern, stride=2)
        return T.mul(T.tsum(T.mul(y, y)), 0.5)

    def deconv_kernel(t):
        x = Tensor(_rng(seed + 8).random((3, 3, 3)), dtype=np.float64)
        y = I.conv_transpose2d(x, t, stride=2)
        return T.mul(T.tsum(T.mul(y, y)), 0.5)

    def bicubic(t):
        y = I.bicubic_resize(t, 1.5)
        return T.tsum(T.mul(y, y))

    def softmax_fn(t):
        w = Tensor(_rng(seed + 10).random((4, 5, 3)), dtype=np.float64)
        return T.tsum(T.mul(T.softmax(t, axis=2), w))

    def linear_relu(t):
        w = Tensor(_rng(seed + 11).standard_normal((4, 3)), dtype=np.float64)
        return T.tsum(T.relu(T.matmul(t, w)))

    def prox_res(t):
        net = ProxNet(2, 6, 2, _rng(seed + 12), block_kind="res").astype(np.float64)
        w = Tensor(_rng(seed + 13).random((5, 5, 2)), dtype=np.float64)
        return T.tsum(T.mul(net(t), w))

    def rcab(t):
        block = Rcab(4, 2, _rng(seed + 14)).astype(np.float64)
        w = Tensor(_rng(seed + 15).random((4, 4, 4)), dtype=np.float64)
        return T.tsum(T.mul(block(t), w))

    def attention(t):
        cfg = AttnConfig(window=3, patch=3, embed_dim=4, heads=2, topk_ratio=0.5)
        net = Mha(2, cfg, _rng(seed + 16)).astype(np.float64)
        w = Tensor(_rng(seed + 17).random((5, 5, 2)), dtype=np.float64)
        return T.tsum(T.mul(net(t), w))

    table = [
        ("conv2d_input", lambda: gradient_check(conv_input, rng.random((5, 5, 2)),
                                                tol=tol, name="conv2d_input")),
        ("conv2d_kernel", lambda: gradient_check(conv_kernel,
                                                 rng.standard_normal((3, 3, 2, 3)),
                                                 tol=tol, name="conv2d_kernel")),
        ("conv2d_bias", lambda: gradient_check(conv_bias, rng.random(3),
                                               tol=tol, name="conv2d_bias")),
        ("conv_transpose_input", lambda: gradient_check(
            deconv_input, rng.random((3, 3, 3)), tol=tol, name="conv_transpose_input")),
        ("conv_transpose_kernel", lambda: gradient_check(
            deconv_kernel, rng.standard_normal((5, 5, 2, 3)), tol=tol,
            name="conv_transpose_kernel")),
        ("bicubic_resize", lambda: gradient_check(bicubic, rng.random((6, 6, 2)),
                                                  tol=tol, name="bicubic_resize")),
        ("softmax", lambda: gradient_check(softmax_fn, rng.standard_normal((4, 5, 3)),
                                           tol=tol, name="softmax")),
        ("linear_relu", lambda: gradient_check(linear_relu,
                                               _away_from_kinks(rng, (6, 4)),
                                               tol=tol, name="linear_relu")),
        ("prox_residual", lambda: gradient_check(prox_res, rng.random((5, 5, 2)),
                                                 tol=tol, name="prox_residual")),
        ("rcab", lambda: gradient_check(rcab, rng.random((4, 4, 4)),
                                        tol=tol, name="rcab")),
        ("attention_mha", lambda: gradient_check(attention, rng.random((5, 5, 2)),
                                                 tol=tol, name="attention_mha")),
        ("sr_fidelity", lambda: sr_fidelity_check(seed, tol=tol)),
        ("ssr_fidelity", lambda: ssr_fidelity_check(seed, tol=tol)),
        ("fusion_fidelity", lambda: fusion_fidelity_check(seed, tol=tol)),
    ]
    reports = []
    for name, run in table:
        if only is not None and only not in name:
            continue
        reports.append(run())
    return reports

"""Invariant self-checks runnable from the CLI (`histoscan check`).

Each check returns (name, passed, detail).  Oracles here are written
against independent reference paths (literal recurrence, pairwise AUC),
never against the code they validate.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels, reference
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .local_embed import LocalEmbed
from .metrics import binary_auc
from .mixer import ScanConvMixer, sep_conv_param_ratio, vanilla_scan_block_param_count
from .ops import cross_entropy, linear, silu
from .optim import AdamW, WarmupCosine
from .pretrain import make_mask
from .scan import discretize
from .tensor import Tensor, concat, mean_, oracle_mode, split


def _check_primitive_grads() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    with oracle_mode():
        x = Tensor(rng.uniform(-1, 1, (5, 6)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (6, 4)), requires_grad=True)
        err = finite_diff_check(lambda a, b: mean_(silu(linear(a, b))), [x, w])
    return err < 1e-6, f"max rel err {err:.2e}"


def _check_scan_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        L, D, N = int(rng.integers(2, 32)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
        u = rng.standard_normal((1, L, D))
        delta = rng.uniform(0.01, 0.6, (1, L, D))
        A = rng.uniform(0.2, 3.0, N)
        Bs = rng.standard_normal((1, L, N))
        Cs = rng.standard_normal((1, L, N))
        y, _ = kernels.scan_forward(u, delta, A, Bs, Cs, False)
        y_ref = reference.scan_reference(u[0], delta[0], A, Bs[0], Cs[0])
        worst = max(worst, float(np.abs(y[0] - y_ref).max()))
    return worst < 1e-10, f"max |kernel - reference| {worst:.2e}"


def _check_discretize_range() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    ok = True
    for _ in range(200):
        A = rng.uniform(1e-3, 10.0, 8)
        dt = rng.uniform(1e-4, 5.0, 4)
        Abar, _ = discretize(A, rng.standard_normal(8), dt)
        ok &= bool(np.all(Abar > 0) and np.all(Abar < 1))
    return ok, "exp(-delta*A) in (0,1) over 200 draws"


def _check_split_concat() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((4, 10)).astype(np.float32))
    a, b = split(x, [5, 5], axis=-1)
    back = concat([a, b], axis=-1)
    ok = bool(np.array_equal(back.data, x.data))
    return ok, "split+concat bit-exact"


def _check_local_embed_identity() -> tuple[bool, str]:
    rng = np.random.default_rng(9)
    le = LocalEmbed(8, 3, np.random.default_rng(1))
    le.eval()
    x = Tensor(rng.standard_normal((3, 5, 5, 8)).astype(np.float32))
    y = le(x)
    ok = bool(np.array_equal(y.data, x.data))
    return ok, "zero-init expand conv gives output == input"


def _check_mixer_budget() -> tuple[bool, str]:
    m = ScanConvMixer(32, 16, 3, np.random.default_rng(2))
    ours = m.param_count()
    vanilla = vanilla_scan_block_param_count(32, 16, 3)
    ratio = sep_conv_param_ratio(32, 3)
    ok = ours <= vanilla and float(ratio) == 1120 / 3072
    return ok, f"{ours} <= {vanilla}, sep ratio {ratio}"


def _check_masking() -> tuple[bool, str]:
    ok = True
    for ratio in (0.25, 0.5, 0.75, 0.9):
        spec = make_mask((8, 8), ratio, np.random.default_rng(0))
        ok &= spec.n_masked == round(ratio * 64)
    a = make_mask((8, 8), 0.75, np.random.default_rng(42))
    b = make_mask((8, 8), 0.75, np.random.default_rng(42))
    ok &= bool(np.array_equal(a.indices, b.indices))
    return ok, "|M| exact and seed-deterministic"


def _check_auc() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    y = rng.integers(0, 2, 60)
    y[0], y[1] = 0, 1
    s = np.round(rng.uniform(0, 1, 60), 2)  # force some ties
    fast = binary_auc(y, s)
    slow = reference.pairwise_auc_reference(y, s)
    return fast == slow, f"rank {fast} vs pairwise {slow}"


def _check_checkpoint() -> tuple[bool, str]:
    import os
    import tempfile

    rng = np.random.default_rng(21)
    params = [("w", rng.standard_normal((3, 4)).astype(np.float32)),
              ("b", rng.standard_normal(4).astype(np.float32))]
    buffers = [("rm", rng.standard_normal(4))]
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.bin")
        save_checkpoint(path, "test", {"x": 1}, params, buffers)
        ck = load_checkpoint(path)
    ok = (ck.params["w"].tobytes() == params[0][1].tobytes()
          and ck.buffers["rm"].tobytes() == buffers[0][1].tobytes()
          and ck.config == {"x": 1})
    return ok, "round-trip bit-exact"


def _check_schedule() -> tuple[bool, str]:
    s = WarmupCosine(1e-3, 1e-5, 100, 1000)
    end_warm = s.lr_at(99)
    mid = s.lr_at(100 + 450)
    decreasing = all(s.lr_at(i) >= s.lr_at(i + 1) for i in range(100, 999))
    ok = (abs(end_warm - 1e-3) < 1e-15
          and abs(mid - (1e-3 + 1e-5) / 2) < 1e-9
          and decreasing and s.lr_at(0) > 0)
    return ok, f"warmup end {end_warm}, midpoint {mid}"


def _check_ce_uniform() -> tuple[bool, str]:
    with oracle_mode():
        logits = Tensor(np.zeros((4, 9)))
        loss = cross_entropy(logits, np.array([0, 3, 5, 8]))
    err = abs(loss.item() - math.log(9))
    return err < 1e-9, f"|CE - ln 9| = {err:.2e}"


def _check_adamw_decay() -> tuple[bool, str]:
    p = Tensor(np.full((2, 2), 2.0, dtype=np.float32), requires_grad=True)
    opt = AdamW([("p", p)], lr=0.1, weight_decay=0.5)
    p.grad = np.zeros_like(p.data)
    opt.step()
    expected = 2.0 * (1 - 0.1 * 0.5)
    ok = bool(np.allclose(p.data, expected, atol=1e-7))
    return ok, f"decay-only step: {p.data[0,0]} vs {expected}"


def _check_backends() -> tuple[bool, str]:
    try:
        cy = kernels.get_impl("cython")
    except ImportError:
        return True, "compiled backend unavailable; fallback active (skipped)"
    py = kernels.get_impl("python")
    rng = np.random.default_rng(17)
    u = rng.standard_normal((2, 9, 4)).astype(np.float32)
    d = rng.uniform(0.01, 0.5, (2, 9, 4)).astype(np.float32)
    A = rng.uniform(0.5, 2.0, 3).astype(np.float32)
    Bs = rng.standard_normal((2, 9, 3)).astype(np.float32)
    Cs = rng.standard_normal((2, 9, 3)).astype(np.float32)
    y1, _ = py.scan_forward(u, d, A, Bs, Cs, False)
    y2, _ = cy.scan_forward(u, d, A, Bs, Cs, False)
    diff = float(np.abs(y1 - y2).max())
    return diff < 1e-5, f"max backend diff {diff:.2e}"


CHECKS = [
    ("primitive-gradients", _check_primitive_grads),
    ("scan-vs-reference", _check_scan_oracle),
    ("discretize-range", _check_discretize_range),
    ("split-concat", _check_split_concat),
    ("local-embed-identity", _check_local_embed_identity),
    ("mixer-param-budget", _check_mixer_budget),
    ("mask-exactness", _check_masking),
    ("auc-vs-pairwise", _check_auc),
    ("checkpoint-roundtrip", _check_checkpoint),
    ("lr-schedule", _check_schedule),
    ("ce-uniform-lnK", _check_ce_uniform),
    ("adamw-decay", _check_adamw_decay),
    ("kernel-backends", _check_backends),
]


def run_all() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        results.append((name, ok, detail))
    return results

"""Self-checks against independent oracles; backs the ``himamba verify`` command.

Each check returns a :class:`CheckResult`. The oracles used here do not
share code with the paths they test: the recurrence is compared with the
convolution-kernel form, adjoints with central finite differences, parameter
counts with enumeration of initialized weights.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import grad as G
from ._threads import threads
from .config import HiMambaConfig, preset
from .inference import self_ensemble
from .metrics import psnr, ssim
from .network import (count_flops, count_params, dahmg_forward, himamba_forward, init_weights,
                      zero_residual_branches)
from .scan import (Direction, SelectiveParams, discretize_zoh, flatten_direction, lti_apply,
                   lti_kernel, selective_scan, selective_scan_chunked, unflatten_direction)
from .blocks import sub
from . import tensor as T
from .weightfile import decode, encode

__all__ = ["CheckResult", "CHECKS", "run_checks", "gradient_errors", "relative_error",
           "random_config", "model_gradient_errors", "toy_training", "SLOW_CHECKS"]

FD_EPS = 1e-5
MODEL_FD_EPS = 1e-4  # used with the 5-point stencil
GRAD_TOL = 1e-5
SCAN_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


# ------------------------------------------------------------------ finite differences

def relative_error(ad, fd, floor_frac=1e-3):
    """Largest per-coordinate ``|ad - fd| / max(|ad|, |fd|, floor)``.

    ``floor`` is ``floor_frac`` times the largest finite-difference magnitude
    in the tensor: components smaller than that are below what a central
    difference can resolve and are judged against the floor instead.
    """
    ad = np.asarray(ad, dtype=float).ravel()
    fd = np.asarray(fd, dtype=float).ravel()
    if ad.size == 0:
        return 0.0
    scale = max(np.abs(fd).max() * floor_frac, 1e-300)
    den = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), scale)
    return float(np.max(np.abs(ad - fd) / den))


def gradient_errors(fn, inputs, eps=FD_EPS, coords=None, points=3):
    """Compare tape gradients of scalar ``fn`` with central differences.

    ``fn`` takes a dict of arrays (or tape nodes) and returns a scalar.
    ``coords`` optionally maps an input name to the flat indices to probe
    (default: all). ``points`` selects the 3- or 5-point central stencil; the
    5-point one tolerates a larger step, which matters when the loss is a long
    cancelling sum and small steps drown in roundoff. Returns
    ``{name: relative_error}``.
    """
    if points not in (3, 5):
        raise ValueError("points must be 3 or 5")
    tape = G.Tape()
    nodes = tape.params(inputs)
    ad = tape.backward(fn(nodes))
    work = {k: np.array(v, dtype=float, copy=True) for k, v in inputs.items()}
    errs = {}
    for name, arr in work.items():
        flat = arr.reshape(-1)
        idx = range(flat.size) if coords is None or name not in coords else coords[name]
        idx = list(idx)
        fd = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]

            def f_at(step):
                flat[i] = orig + step
                return float(G.value_of(fn(work)))

            d1 = f_at(eps) - f_at(-eps)
            if points == 3:
                fd[j] = d1 / (2 * eps)
            else:
                d2 = f_at(2 * eps) - f_at(-2 * eps)
                fd[j] = (8 * d1 - d2) / (12 * eps)
            flat[i] = orig
        errs[name] = relative_error(ad[name].reshape(-1)[idx], fd)
    return errs


def _probe(x, rng):
    return rng.uniform(-1.0, 1.0, size=np.shape(x))


def primitive_cases(rng):
    """``(name, fn, inputs)`` triples covering every differentiable primitive."""
    u = lambda *s: rng.uniform(-1.0, 1.0, size=s)
    cases = []

    def add(name, fn, inputs):
        out_probe = {}

        def loss(p):
            y = fn(p)
            if "r" not in out_probe:
                out_probe["r"] = _probe(G.value_of(y), rng)
            return G.sum_all(G.mul(y, out_probe["r"]))

        cases.append((name, loss, inputs))

    add("linear", lambda p: G.linear(p["x"], p["w"], p["b"]), {"x": u(4, 3), "w": u(2, 3), "b": u(2)})
    add("linear(axis=-3)", lambda p: G.linear(p["x"], p["w"], p["b"], axis=-3),
        {"x": u(2, 3, 4, 5), "w": u(4, 3), "b": u(4)})
    add("conv2d", lambda p: G.conv2d(p["x"], p["w"], p["b"], pad=1),
        {"x": u(2, 3, 5, 4), "w": u(4, 3, 3, 3), "b": u(4)})
    add("conv2d(stride)", lambda p: G.conv2d(p["x"], p["w"], p["b"], stride=2),
        {"x": u(3, 6, 6), "w": u(2, 3, 2, 2), "b": u(2)})
    add("conv2d(depthwise)", lambda p: G.conv2d(p["x"], p["w"], p["b"], pad=1, groups=3),
        {"x": u(2, 3, 4, 4), "w": u(3, 1, 3, 3), "b": u(3)})
    add("conv2d(groups)", lambda p: G.conv2d(p["x"], p["w"], p["b"], pad=1, groups=2),
        {"x": u(1, 4, 4, 3), "w": u(6, 2, 3, 3), "b": u(6)})
    add("layernorm", lambda p: G.layernorm(p["x"], p["g"], p["b"]), {"x": u(3, 4, 5), "g": u(5), "b": u(5)})
    add("layernorm(axis=-3)", lambda p: G.layernorm(p["x"], p["g"], p["b"], axis=-3),
        {"x": u(2, 4, 3, 3), "g": u(4), "b": u(4)})
    add("silu", lambda p: G.silu(p["x"]), {"x": u(3, 7) * 3})
    add("softplus", lambda p: G.softplus(p["x"]), {"x": u(3, 7) * 3})
    add("pixel_shuffle", lambda p: G.pixel_shuffle(p["x"], 2), {"x": u(2, 8, 3, 2)})
    add("repeat_regions", lambda p: G.repeat_regions(p["x"], 3), {"x": u(2, 2, 2, 3)})
    add("add/sub/mul broadcast", lambda p: G.sub(G.mul(p["x"], p["s"]), G.add(p["x"], p["t"])),
        {"x": u(2, 3, 4, 4), "s": u(3, 1, 1), "t": u(4)})
    add("clamp", lambda p: G.clamp(p["x"], -0.5, 0.5),
        {"x": np.array([-0.9, -0.3, 0.1, 0.45, 0.8, -0.7])})
    add("reshape+slice+crop", lambda p: G.crop(G.channel_slice(G.reshape(p["x"], (2, 6, 3, 3)), 1, 4), 2, 2),
        {"x": u(2, 2, 3, 3, 3)})
    add("flatten/unflatten",
        lambda p: G.mul(G.flatten_direction(p["x"], Direction.RV),
                        G.flatten_direction(G.unflatten_direction(p["s"], Direction.V, 3, 4), Direction.H)),
        {"x": u(2, 3, 4), "s": u(12, 2)})

    L, D, N = 6, 3, 4

    def scan_fn(p):
        delta = G.softplus(G.linear(p["u"], p["w_delta"], p["b_delta"]))
        b = G.linear(p["u"], p["w_b"])
        c = G.linear(p["u"], p["w_c"])
        return G.selective_scan(p["u"], delta, p["a_log"], b, c, p["d_skip"])

    add("selective_scan", scan_fn, {
        "u": u(2, L, D), "w_delta": u(D, D), "b_delta": u(D), "w_b": u(N, D), "w_c": u(N, D),
        "a_log": u(D, N), "d_skip": u(D),
    })
    target = u(3, 5)
    pred = target + np.where(u(3, 5) > 0, 1.0, -1.0) * rng.uniform(0.1, 0.5, (3, 5))
    cases.append(("l1_loss", lambda p: G.l1_loss(p["x"], target), {"x": pred}))
    return cases


def model_check_weights(cfg, seed=0):
    """Randomized weights with every path active (step sizes near 1, fusion weights inside (0, 1))."""
    rng = np.random.default_rng(seed)
    w = init_weights(cfg, seed)
    for k, v in w.params.items():
        if k.endswith("delta.bias"):
            w.params[k] = rng.uniform(-1.0, 1.0, v.shape)
        elif k.endswith("s_f"):
            w.params[k] = rng.uniform(0.2, 0.8, v.shape)
        else:
            w.params[k] = v + 0.1 * rng.uniform(-1.0, 1.0, v.shape)
    return w


def model_gradient_errors(cfg=None, seed=1, size=8, per_tensor=2):
    """Finite-difference check of the whole network at its ``per_tensor`` largest-gradient coordinates."""
    cfg = cfg or preset("tiny")
    rng = np.random.default_rng(seed)
    w = model_check_weights(cfg, seed)
    x = rng.uniform(-1.0, 1.0, (1, 3, size, size))
    r = rng.uniform(-1.0, 1.0, (1, 3, cfg.scale * size, cfg.scale * size))

    def loss(p):
        return G.sum_all(G.mul(himamba_forward(x, p, cfg), r))

    tape = G.Tape()
    ad = tape.backward(loss(tape.params(w.params)))
    coords = {k: np.argsort(-np.abs(g).ravel(), kind="stable")[:per_tensor] for k, g in ad.items()}
    return gradient_errors(loss, w.params, eps=MODEL_FD_EPS, coords=coords, points=5)


# ------------------------------------------------------------------ checks

def check_scan_oracle(trials=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        L, D, N = rng.integers(1, 65), rng.integers(1, 5), rng.integers(1, 9)
        a_log = rng.normal(size=(D, N))
        dt = rng.uniform(0.01, 2.0, D)
        b, c = rng.normal(size=N), rng.normal(size=N)
        d_skip = rng.normal(size=D)
        u = rng.normal(size=(L, D))
        p = SelectiveParams(a_log, np.tile(dt, (L, 1)), np.tile(b, (L, 1)), np.tile(c, (L, 1)), d_skip)
        y = selective_scan(u, p)
        for ch in range(D):
            a_bar, b_bar = discretize_zoh(dt[ch], -np.exp(a_log[ch]), b)
            ref = lti_apply(u[:, ch], lti_kernel(a_bar, b_bar, c, L), d_skip[ch])
            err = np.abs(y[:, ch] - ref).max() / max(np.abs(ref).max(), 1e-300)
            worst = max(worst, err)
    return worst <= SCAN_TOL, f"max relative error {worst:.2e} over {trials} LTI systems (tol {SCAN_TOL:g})"


def check_scan_chunked(seed=0):
    rng = np.random.default_rng(seed)
    L, D, N = 200, 12, 8
    p = SelectiveParams(rng.normal(size=(D, N)), rng.uniform(0.01, 1, (2, L, D)),
                        rng.normal(size=(2, L, N)), rng.normal(size=(2, L, N)), rng.normal(size=D))
    u = rng.normal(size=(2, L, D))
    y = selective_scan(u, p)
    ok = all(np.array_equal(y, selective_scan_chunked(u, p, c)) for c in (1, 7, 64, 500))
    return ok, "chunked scan bit-identical to sequential scan" if ok else "chunked scan differs"


def check_gradients_primitives(seed=0):
    rng = np.random.default_rng(seed)
    worst, where = 0.0, ""
    for name, fn, inputs in primitive_cases(rng):
        for arg, err in gradient_errors(fn, inputs).items():
            if err > worst:
                worst, where = err, f"{name}:{arg}"
    return worst < GRAD_TOL, f"max relative error {worst:.2e} at {where} (tol {GRAD_TOL:g})"


def check_gradients_model(seed=1):
    errs = model_gradient_errors(seed=seed)
    name = max(errs, key=errs.get)
    return errs[name] < GRAD_TOL, (f"tiny model, {len(errs)} tensors: max relative error "
                                   f"{errs[name]:.2e} at {name} (tol {GRAD_TOL:g})")


def check_cost_neutrality():
    single = preset("tiny", dir_cycle=("H", "H", "H", "H"))
    alt = preset("tiny", dir_cycle=("H", "V", "RH", "RV"))
    two = preset("tiny", dir_cycle=("H", "V"))
    p = {count_params(c) for c in (single, alt, two)}
    f = {count_flops(c, 64, 64) for c in (single, alt, two)}
    ok = len(p) == 1 and len(f) == 1
    return ok, f"params {sorted(p)}, FLOPs@64x64 {sorted(f)} across scan modes"


def check_residual_identity(seed=0):
    cfg = preset("tiny")
    w = zero_residual_branches(init_weights(cfg, seed))
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (3, 16, 16))
    feat = T.conv2d(x, w.params["head.weight"], w.params["head.bias"], pad=1)
    groups_ok = all(np.array_equal(dahmg_forward(feat, sub(w.params, f"groups.{g}"), cfg), feat)
                    for g in range(cfg.groups))
    ref = T.pixel_shuffle(T.conv2d(feat + feat, w.params["recon.weight"], w.params["recon.bias"], pad=1), cfg.scale)
    model_ok = np.array_equal(himamba_forward(x, w), ref)
    return groups_ok and model_ok, f"groups identity: {groups_ok}, model == shuffle(conv(2 head)): {model_ok}"


def check_direction_bijection(trials=1000, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        c, h, w = (int(v) for v in rng.integers(1, 9, 3))
        x = rng.normal(size=(c, h, w))
        seqs = {d: flatten_direction(x, d) for d in Direction}
        for d, s in seqs.items():
            if not np.array_equal(unflatten_direction(s, d, h, w), x):
                return False, f"round trip failed for {d.value} on {x.shape}"
        if not (np.array_equal(seqs[Direction.RH], seqs[Direction.H][::-1])
                and np.array_equal(seqs[Direction.RV], seqs[Direction.V][::-1])
                and np.array_equal(seqs[Direction.V], flatten_direction(x.swapaxes(1, 2), Direction.H))):
            return False, f"direction identity failed on {x.shape}"
    return True, f"{trials} random shapes, all four orders"


def random_config(rng):
    cycle = [Direction.from_code(int(t)) for t in rng.integers(0, 4, rng.integers(1, 5))]
    c = int(rng.integers(1, 9))
    return HiMambaConfig(scale=int(rng.integers(2, 5)), channels=c, region_channels=int(rng.integers(1, 9)),
                         region_size=int(rng.integers(1, 5)), blocks_per_group=int(rng.integers(1, 4)),
                         groups=int(rng.integers(0, 3)), expand=float(rng.choice([1.0, 1.5, 2.0])),
                         state_size=int(rng.integers(1, 9)), ffn_channels=int(rng.integers(1, 9)),
                         dir_cycle=cycle)


def check_serialization(trials=20, seed=0):
    rng = np.random.default_rng(seed)
    for t in range(trials):
        cfg = random_config(rng)
        w = init_weights(cfg, seed=t)
        first = encode(w)
        again = encode(decode(first))
        if first != again:
            return False, f"save->load->save differs for {cfg}"
        if count_params(cfg) != decode(first).num_elements():
            return False, f"count_params mismatch for {cfg}"
    return True, f"{trials} random configs byte-identical; count_params == serialized elements"


def check_metrics():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.1, 0.9, (32, 32))
    p = psnr(a, a + 1.0 / 255.0)
    s = ssim(a, a)

    def nn_up(img):
        return np.repeat(np.repeat(img, 2, axis=-2), 2, axis=-1)

    img = np.round(rng.uniform(0, 1, (3, 12, 9)) * 255) / 255
    ens_ok = np.array_equal(self_ensemble(img, nn_up), nn_up(img))
    ok = abs(p - 48.1308) <= 1e-3 and s == 1.0 and ens_ok
    return ok, f"psnr(1/255 offset)={p:.4f} dB, ssim(a,a)={s!r}, equivariant ensemble exact: {ens_ok}"


def check_thread_determinism(seed=0):
    cfg = preset("tiny")
    w = init_weights(cfg, seed)
    x = np.random.default_rng(seed).uniform(0, 1, (3, 20, 24))
    outs = []
    for n in (1, 4, 16):
        with threads(n):
            outs.append(himamba_forward(x, w).tobytes())
    ok = outs[0] == outs[1] == outs[2]
    return ok, "forward bit-identical with thread caps 1, 4, 16" if ok else "outputs differ across thread caps"


def toy_training(iters=1000, seed=0, lr=1e-3, batch_size=8, patch_size=16):
    """Train the tiny preset on synthetic x2 textures and score it on a held-out set.

    Returns ``(initial_l1, final_l1, psnr_model, psnr_bicubic)``; the L1 values
    average the first 10 and last 20 logged iterations.
    """
    from .data import make_pairs, synthetic_textures
    from .inference import evaluate_image, upscaler
    from .train import TrainSchedule, train

    cfg = preset("tiny")
    pairs = make_pairs(synthetic_textures(64, 64, seed=seed), cfg.scale)
    held_out = synthetic_textures(8, 64, seed=seed + 1)
    sched = TrainSchedule(iters=iters, lr=lr, batch_size=batch_size, patch_size=patch_size,
                          seed=seed, log_every=0)
    weights, curve = train(cfg, pairs, sched)
    losses = [row[2] for row in curve]
    sr = upscaler(weights)
    scores = np.array([evaluate_image(hr, sr, cfg.scale) for hr in held_out])
    return (float(np.mean(losses[:10])), float(np.mean(losses[-20:])),
            float(scores[:, 0].mean()), float(scores[:, 2].mean()))


def check_toy_training():
    l0, l1, p, pb = toy_training()
    ok = l1 < 0.5 * l0 and p - pb >= 0.3
    return ok, (f"L1 {l0:.4f} -> {l1:.4f} (ratio {l1 / l0:.3f}); PSNR {p:.2f} dB vs bicubic {pb:.2f} dB "
                f"(gain {p - pb:+.2f} dB)")


CHECKS = {
    "scan_oracle": check_scan_oracle,
    "scan_chunked": check_scan_chunked,
    "gradients_primitives": check_gradients_primitives,
    "gradients_model": check_gradients_model,
    "cost_neutrality": check_cost_neutrality,
    "residual_identity": check_residual_identity,
    "direction_bijection": check_direction_bijection,
    "serialization": check_serialization,
    "metrics": check_metrics,
    "thread_determinism": check_thread_determinism,
}

# minutes rather than seconds; run only on request
SLOW_CHECKS = {
    "toy_training": check_toy_training,
}


def run_checks(filter_=None, out=None, slow=False):
    results = []
    table = {**CHECKS, **SLOW_CHECKS} if slow else CHECKS
    for name, fn in table.items():
        if filter_ and filter_ not in name:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as e:  # report and keep going
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        res = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        if out is not None:
            print(res.line(), file=out, flush=True)
        results.append(res)
    return results

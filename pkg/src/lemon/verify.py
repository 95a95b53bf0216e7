"""Checkpoint-level verification: losslessness, symmetry, fixtures.

``verify_lossless`` evaluates two checkpoints on seeded random inputs
and reports the worst logit difference; ``symmetry_report`` measures how
far apart the fan-out vectors of replicated units ended up; and
``init_random_model`` writes deterministic random fixtures.  The
hand-written gradient step for the two-layer toy network lives here too,
for demonstrating that unequal fan-out makes replicated units diverge
under training while equal fan-out keeps them locked together.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .container import read_checkpoint, write_checkpoint
from .errors import PlanError
from .model import ModelSpec, model_forward, random_weights
from .rng import substream

#: environment variable capping verification parallelism
THREADS_ENV = "LEMON_THREADS"


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SampleDiff:
    index: int
    worst_position: tuple[int, ...]
    abs_diff: float


@dataclass(frozen=True)
class VerifyReport:
    max_abs_diff: float
    tol: float
    samples: list[SampleDiff]

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tol

    def to_dict(self) -> dict:
        return {"max_abs_diff": self.max_abs_diff, "tol": self.tol,
                "passed": self.passed,
                "samples": [{"index": s.index,
                             "worst_position": list(s.worst_position),
                             "abs_diff": s.abs_diff} for s in self.samples]}


def _compatible(a: ModelSpec, b: ModelSpec) -> None:
    same = (a.input_kind == b.input_kind
            and a.vocab_or_classes == b.vocab_or_classes
            and a.patch_dim == b.patch_dim
            and a.num_patches == b.num_patches)
    if not same:
        raise PlanError("checkpoints accept different inputs or emit different logits")


def _draw_input(spec: ModelSpec, rng: np.random.Generator, seq_len: int):
    if spec.input_kind == "token":
        return rng.integers(0, spec.vocab_or_classes, size=seq_len)
    return rng.standard_normal((spec.num_patches, spec.patch_dim))


def verify_lossless(small_path, big_path, samples: int, seed: int,
                    tol: float, seq_len: int = 16) -> VerifyReport:
    """Compare two checkpoints on ``samples`` seeded random inputs.

    Evaluation runs in float64 regardless of the stored dtype.  The
    report carries the per-sample worst logit positions; it is a pure
    function of (checkpoints, samples, seed), independent of the thread
    count set via ``LEMON_THREADS``.
    """
    small_w, small_spec = read_checkpoint(small_path)
    big_w, big_spec = read_checkpoint(big_path)
    _compatible(small_spec, big_spec)
    small64 = _as64(small_w)
    big64 = _as64(big_w)

    def one(i: int) -> SampleDiff:
        x = _draw_input(small_spec, substream(seed, "verify", i), seq_len)
        diff = np.abs(model_forward(x, big64, big_spec)
                      - model_forward(x, small64, small_spec))
        pos = np.unravel_index(int(np.argmax(diff)), diff.shape)
        return SampleDiff(i, tuple(int(p) for p in pos), float(diff[pos]))

    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(samples)))
    else:
        results = [one(i) for i in range(samples)]
    worst = max((s.abs_diff for s in results), default=0.0)
    return VerifyReport(worst, tol, results)


def _as64(w):
    from .expander import map_arrays
    return map_arrays(w, lambda a: a.astype(np.float64))


# ---------------------------------------------------------------------------
# symmetry report


def symmetry_report(ckpt_path, duplicate_map: dict) -> list[dict]:
    """Minimum pairwise fan-out distance for every replicated-unit group.

    For MLP hidden units the fan-out is the unit's column of the second
    layer; for attention heads it is the head's row block of the output
    projection.  Groups expanded with equal splits report exactly 0;
    symmetry-broken groups report a positive distance.
    """
    weights, spec = read_checkpoint(ckpt_path)
    if duplicate_map.get("version") != 1:
        raise PlanError("unsupported duplicate map version")
    hd = spec.head_dim
    entries: list[dict] = []
    for blk_entry in duplicate_map.get("blocks", []):
        bi = blk_entry["index"]
        if not 0 <= bi < len(weights.blocks):
            raise PlanError(f"duplicate map references missing block {bi}")
        blk = weights.blocks[bi]
        for kind, groups in (("attn_head", blk_entry.get("attn_head_groups", {})),
                             ("mlp_hidden", blk_entry.get("mlp_hidden_groups", {}))):
            for src, members in groups.items():
                if kind == "attn_head":
                    vecs = [blk.attn.wo[m * hd:(m + 1) * hd, :].ravel() for m in members]
                else:
                    vecs = [blk.mlp.w2[:, m] for m in members]
                dist = min(float(np.abs(a - b).max())
                           for i, a in enumerate(vecs) for b in vecs[i + 1:])
                entries.append({"block": bi, "kind": kind, "source": int(src),
                                "replicas": list(members), "min_distance": dist})
    return entries


def load_duplicate_map(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise PlanError(f"{path}: duplicate map must be a JSON object")
    return data


def duplicate_map_path(ckpt_path) -> str:
    """Sidecar path the expand command writes next to a checkpoint."""
    return f"{ckpt_path}.duplicates.json"


# ---------------------------------------------------------------------------
# fixtures


def init_random_model(spec: ModelSpec, seed: int, out_path, dtype=np.float64) -> None:
    """Write a deterministic random checkpoint for a spec."""
    spec.validate()
    weights = random_weights(spec, substream(seed, "init"), dtype=dtype)
    write_checkpoint(weights, spec, out_path)


# ---------------------------------------------------------------------------
# toy-network gradient step (symmetry-breaking demonstration)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return 0.5 * z * (1.0 + erf(z / math.sqrt(2.0)))


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    # d/dz [z * Phi(z)] = Phi(z) + z * phi(z)
    return (0.5 * (1.0 + erf(z / math.sqrt(2.0)))
            + z * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))


def toy_mlp_gradient_step(w1: np.ndarray, v: np.ndarray, x: np.ndarray,
                          target: float, lr: float,
                          kind: str = "gelu") -> tuple[np.ndarray, np.ndarray]:
    """One gradient-descent step on ``(v . act(w1 @ x) - target)^2``.

    Hand-written gradients (no autodiff anywhere in this package):
    with ``h = w1 @ x`` and residual ``g = 2 (v . act(h) - target)``,
    ``dL/dv = g * act(h)`` and ``dL/dw1[j] = g * v[j] * act'(h[j]) * x``.
    Replicated hidden units with equal fan-in receive gradients scaled
    by their fan-out weights, so equal fan-out keeps them identical and
    unequal fan-out drives them apart.
    """
    h = w1 @ x
    a = _act(h, kind)
    g = 2.0 * (float(v @ a) - target)
    grad_v = g * a
    grad_w1 = (g * v * _act_grad(h, kind))[:, None] * x[None, :]
    return w1 - lr * grad_w1, v - lr * grad_v

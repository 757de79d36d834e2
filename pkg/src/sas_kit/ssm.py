"""Toy recurrent blocks and the hierarchical prompt/query fusion stack.

Each block runs z_t = g(A z_{t-1} + B x_t + b) with z_0 = 0 over a sequence,
forward, backward, or both summed. Gradients are written out by hand
(backpropagation through time) and checked against finite differences in
the tests.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.special import expit

from .config import ModelConfig
from .errors import DimensionMismatchError, MissingCacheError, NonFiniteError, SasKitError
from .serialization import SasSequence

logger = logging.getLogger("sas_kit.ssm")

GATES = ("identity", "sigmoid_gate")
DIRECTIONS = ("forward", "backward", "bidirectional")
PARAMS_FORMAT = "sas-kit/ssm-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class SsmBlock:
    """Parameters of one recurrent block."""
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    gate: str = "sigmoid_gate"
    direction: str = "bidirectional"

    def __post_init__(self) -> None:
        d = self.A.shape[0]
        if self.A.shape != (d, d) or self.B.shape != (d, d) or self.b.shape != (d,):
            raise DimensionMismatchError(
                f"block shapes disagree: A {self.A.shape}, B {self.B.shape}, b {self.b.shape}"
            )
        if self.gate not in GATES:
            raise SasKitError(f"unknown gate {self.gate!r}")
        if self.direction not in DIRECTIONS:
            raise SasKitError(f"unknown direction {self.direction!r}")
        for name in ("A", "B", "b"):
            value = getattr(self, name)
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"block parameter {name} is not finite")

    @property
    def dim(self) -> int:
        return int(self.A.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {"A": self.A, "B": self.B, "b": self.b}

    def stepped(self, grads: "BlockGrads", lr: float) -> "SsmBlock":
        """A new block after one gradient-descent step."""
        return replace(self, A=self.A - lr * grads.A, B=self.B - lr * grads.B, b=self.b - lr * grads.b)


@dataclass
class BlockGrads:
    """Gradients of a scalar loss w.r.t. one block and its input sequence."""
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    inputs: np.ndarray

    def add_(self, other: "BlockGrads") -> None:
        self.A += other.A
        self.B += other.B
        self.b += other.b

    def scaled(self, factor: float) -> "BlockGrads":
        return BlockGrads(self.A * factor, self.B * factor, self.b * factor, self.inputs * factor)


@dataclass(frozen=True)
class ScanCache:
    """Everything ``ssm_backward`` needs from one forward pass."""
    inputs: np.ndarray
    # direction -> (pre-activations, states), both in scan order
    passes: dict[str, tuple[np.ndarray, np.ndarray]]


def identity_block(dim: int, direction: str = "forward") -> SsmBlock:
    """A = 0, B = I, b = 0 with identity gate: the memoryless identity map."""
    return SsmBlock(np.zeros((dim, dim)), np.eye(dim), np.zeros(dim), "identity", direction)


def init_block(dim: int, seed: int | list[int], a_norm: float = 0.9, gate: str = "sigmoid_gate",
               direction: str = "bidirectional") -> SsmBlock:
    """Seeded orthogonal A rescaled to ‖A‖_F = a_norm, B = I, b = 0."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    a = q * (a_norm / np.linalg.norm(q))
    return SsmBlock(a, np.eye(dim), np.zeros(dim), gate, direction)


def _activate(pre: np.ndarray, gate: str) -> np.ndarray:
    return pre if gate == "identity" else expit(pre)


def _gate_slope(pre: np.ndarray, state: np.ndarray, gate: str) -> np.ndarray:
    return np.ones_like(pre) if gate == "identity" else state * (1.0 - state)


def _scan(block: SsmBlock, x: np.ndarray, reverse: bool) -> tuple[np.ndarray, np.ndarray]:
    """One directional pass; returns (pre, states) in scan order."""
    seq = x[::-1] if reverse else x
    length, d = seq.shape
    pre = np.empty((length, d))
    states = np.empty((length, d))
    drive = seq @ block.B.T + block.b
    z = np.zeros(d)
    for t in range(length):
        pre[t] = block.A @ z + drive[t]
        z = _activate(pre[t], block.gate)
        if not np.all(np.isfinite(z)):
            step = length - 1 - t if reverse else t
            raise NonFiniteError("recurrence produced a non-finite state", step=step)
        states[t] = z
    return pre, states


def _passes(block: SsmBlock) -> tuple[str, ...]:
    if block.direction == "bidirectional":
        return ("forward", "backward")
    return (block.direction,)


def ssm_forward_cached(block: SsmBlock, sequence: np.ndarray) -> tuple[np.ndarray, ScanCache]:
    """Run a block over an (L, d) sequence and keep what the backward pass needs."""
    x = np.asarray(sequence, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != block.dim:
        raise DimensionMismatchError(f"sequence shape {x.shape} does not match block dimension {block.dim}")
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
        raise NonFiniteError("input sequence is not finite", step=bad)
    out = np.zeros_like(x)
    passes = {}
    for name in _passes(block):
        reverse = name == "backward"
        pre, states = _scan(block, x, reverse)
        passes[name] = (pre, states)
        out += states[::-1] if reverse else states
    return out, ScanCache(x, passes)


def ssm_forward(block: SsmBlock, sequence: np.ndarray) -> np.ndarray:
    """Run a block over an (L, d) sequence."""
    return ssm_forward_cached(block, sequence)[0]


def ssm_backward(block: SsmBlock, cache: ScanCache | None, upstream: np.ndarray) -> BlockGrads:
    """Reverse-mode gradients of sum(upstream * output) for A, B, b and the inputs."""
    if cache is None:
        raise MissingCacheError("ssm_backward needs the cache of a forward pass")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.inputs.shape:
        raise DimensionMismatchError(f"upstream shape {upstream.shape} vs cached output {cache.inputs.shape}")
    if set(cache.passes) != set(_passes(block)):
        raise MissingCacheError(f"cache holds passes {sorted(cache.passes)}, block runs {list(_passes(block))}")

    d = block.dim
    grads = BlockGrads(np.zeros((d, d)), np.zeros((d, d)), np.zeros(d), np.zeros_like(cache.inputs))
    for name, (pre, states) in cache.passes.items():
        reverse = name == "backward"
        x = cache.inputs[::-1] if reverse else cache.inputs
        g = upstream[::-1] if reverse else upstream
        length = x.shape[0]
        d_pre = np.empty_like(pre)
        carry = np.zeros(d)
        for t in range(length - 1, -1, -1):
            d_pre[t] = (g[t] + carry) * _gate_slope(pre[t], states[t], block.gate)
            carry = block.A.T @ d_pre[t]
        previous = np.vstack([np.zeros((1, d)), states[:-1]])
        grads.A += d_pre.T @ previous
        grads.B += d_pre.T @ x
        grads.b += d_pre.sum(axis=0)
        d_x = d_pre @ block.B
        grads.inputs += d_x[::-1] if reverse else d_x
    return grads


def run_chain(blocks: list[SsmBlock], sequence: np.ndarray) -> tuple[np.ndarray, list[ScanCache]]:
    """Apply blocks one after another."""
    caches = []
    h = sequence
    for block in blocks:
        h, cache = ssm_forward_cached(block, h)
        caches.append(cache)
    return h, caches


def backward_chain(blocks: list[SsmBlock], caches: list[ScanCache], upstream: np.ndarray) -> tuple[list[BlockGrads], np.ndarray]:
    """Backpropagate through ``run_chain``; returns per-block grads and the input gradient."""
    if len(caches) != len(blocks):
        raise MissingCacheError(f"{len(caches)} caches for {len(blocks)} blocks")
    grads: list[BlockGrads] = [None] * len(blocks)  # type: ignore[list-item]
    g = upstream
    for i in range(len(blocks) - 1, -1, -1):
        grads[i] = ssm_backward(blocks[i], caches[i], g)
        g = grads[i].inputs
    return grads, g


@dataclass(frozen=True)
class InterleavedSequence:
    """Prompt and query rows alternating slot by slot: p0, q0, p1, q1, ..."""
    tokens: np.ndarray
    origin: tuple[tuple[str, int], ...]

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])


def interleave(prompt: np.ndarray, query: np.ndarray) -> InterleavedSequence:
    """Slot 2t holds prompt row t, slot 2t+1 holds query row t."""
    prompt = np.asarray(prompt, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if prompt.shape != query.shape:
        raise DimensionMismatchError(f"prompt {prompt.shape} and query {query.shape} must share a shape")
    n, d = prompt.shape
    tokens = np.empty((2 * n, d))
    tokens[0::2] = prompt
    tokens[1::2] = query
    origin = tuple((tag, t) for t in range(n) for tag in ("p", "q"))
    return InterleavedSequence(tokens, origin)


def deinterleave(sequence: InterleavedSequence | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tokens = sequence.tokens if isinstance(sequence, InterleavedSequence) else np.asarray(sequence)
    if tokens.shape[0] % 2:
        raise DimensionMismatchError(f"interleaved length {tokens.shape[0]} is odd")
    return tokens[0::2].copy(), tokens[1::2].copy()


@dataclass(frozen=True)
class SsmStack:
    """Prompt branch, query branch and the shared fusion branch."""
    branch_p: tuple[SsmBlock, ...]
    branch_q: tuple[SsmBlock, ...]
    fusion: tuple[SsmBlock, ...]

    def __post_init__(self) -> None:
        dims = {b.dim for b in self.blocks()}
        if len(dims) != 1:
            raise DimensionMismatchError(f"stack blocks disagree on dimension: {sorted(dims)}")

    @property
    def embed_dim(self) -> int:
        return self.branch_p[0].dim

    @property
    def enc_layers(self) -> int:
        return len(self.branch_p)

    @property
    def dec_layers(self) -> int:
        return len(self.fusion)

    def blocks(self) -> list[SsmBlock]:
        return [*self.branch_p, *self.branch_q, *self.fusion]

    def named_blocks(self) -> list[tuple[str, SsmBlock]]:
        return (
            [(f"branch_p.{i}", b) for i, b in enumerate(self.branch_p)]
            + [(f"branch_q.{i}", b) for i, b in enumerate(self.branch_q)]
            + [(f"fusion.{i}", b) for i, b in enumerate(self.fusion)]
        )

    def stepped(self, grads: "StackGrads", lr: float) -> "SsmStack":
        return SsmStack(
            tuple(b.stepped(g, lr) for b, g in zip(self.branch_p, grads.branch_p)),
            tuple(b.stepped(g, lr) for b, g in zip(self.branch_q, grads.branch_q)),
            tuple(b.stepped(g, lr) for b, g in zip(self.fusion, grads.fusion)),
        )


@dataclass
class StackGrads:
    branch_p: list[BlockGrads]
    branch_q: list[BlockGrads]
    fusion: list[BlockGrads]
    prompt_inputs: np.ndarray
    query_inputs: np.ndarray

    def add_(self, other: "StackGrads") -> None:
        for mine, theirs in zip(self.all(), other.all()):
            mine.add_(theirs)

    def all(self) -> list[BlockGrads]:
        return [*self.branch_p, *self.branch_q, *self.fusion]

    def scaled(self, factor: float) -> "StackGrads":
        return StackGrads(
            [g.scaled(factor) for g in self.branch_p],
            [g.scaled(factor) for g in self.branch_q],
            [g.scaled(factor) for g in self.fusion],
            self.prompt_inputs * factor,
            self.query_inputs * factor,
        )


def init_stack(cfg: ModelConfig | None = None, embed_dim: int | None = None) -> SsmStack:
    """Seeded stack: ``enc_layers`` blocks per branch and ``dec_layers`` fusion blocks."""
    cfg = cfg or ModelConfig()
    d = embed_dim or cfg.embed_dim

    def make(branch: int, count: int) -> tuple[SsmBlock, ...]:
        return tuple(
            init_block(d, [cfg.init_seed, branch, i], cfg.a_norm, cfg.gate, cfg.direction) for i in range(count)
        )

    return SsmStack(make(0, cfg.enc_layers), make(1, cfg.enc_layers), make(2, cfg.dec_layers))


def identity_stack(embed_dim: int, enc_layers: int = 4, dec_layers: int = 2) -> SsmStack:
    return SsmStack(
        tuple(identity_block(embed_dim) for _ in range(enc_layers)),
        tuple(identity_block(embed_dim) for _ in range(enc_layers)),
        tuple(identity_block(embed_dim) for _ in range(dec_layers)),
    )


@dataclass
class HdmOutput:
    """Fused features plus the caches for ``hdm_backward``."""
    fused: np.ndarray
    prompt: np.ndarray
    query: np.ndarray
    fusion_mode: str
    caches: dict[str, Any] = field(default_factory=dict, repr=False)


def _tokens(seq: SasSequence | np.ndarray) -> np.ndarray:
    return seq.tokens if isinstance(seq, SasSequence) else np.asarray(seq, dtype=np.float64)


def _split(fused: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    if mode == "interleave":
        return deinterleave(fused)
    half = fused.shape[0] // 2
    return fused[:half].copy(), fused[half:].copy()


def _hdm(stack: SsmStack, prompt_seq, query_seq, mode: str) -> HdmOutput:
    xp, xq = _tokens(prompt_seq), _tokens(query_seq)
    if xp.shape != xq.shape:
        raise DimensionMismatchError(f"prompt sequence {xp.shape} and query sequence {xq.shape} differ")
    if xp.shape[1] != stack.embed_dim:
        raise DimensionMismatchError(f"sequence dimension {xp.shape[1]} vs stack dimension {stack.embed_dim}")
    zp, caches_p = run_chain(list(stack.branch_p), xp)
    zq, caches_q = run_chain(list(stack.branch_q), xq)
    joined = interleave(zp, zq).tokens if mode == "interleave" else np.vstack([zp, zq])
    fused, caches_f = run_chain(list(stack.fusion), joined)
    prompt, query = _split(fused, mode)
    return HdmOutput(fused, prompt, query, mode, {"p": caches_p, "q": caches_q, "f": caches_f})


def hdm_forward(stack: SsmStack, prompt_seq: SasSequence | np.ndarray, query_seq: SasSequence | np.ndarray) -> HdmOutput:
    """Per-domain branches, interleaved slot by slot, then the shared fusion blocks."""
    return _hdm(stack, prompt_seq, query_seq, "interleave")


def hdm_concat_baseline(stack: SsmStack, prompt_seq: SasSequence | np.ndarray, query_seq: SasSequence | np.ndarray) -> HdmOutput:
    """Same branches, but the fusion input is [prompt rows; query rows]."""
    return _hdm(stack, prompt_seq, query_seq, "concat")


def hdm_backward(stack: SsmStack, output: HdmOutput, d_prompt: np.ndarray, d_query: np.ndarray) -> StackGrads:
    """Gradients given upstream gradients on the split prompt and query fused rows."""
    if not output.caches:
        raise MissingCacheError("hdm_backward needs the caches of an hdm forward pass")
    if output.fusion_mode == "interleave":
        d_fused = interleave(d_prompt, d_query).tokens
    else:
        d_fused = np.vstack([d_prompt, d_query])
    g_f, d_joined = backward_chain(list(stack.fusion), output.caches["f"], d_fused)
    d_zp, d_zq = _split(d_joined, output.fusion_mode)
    g_p, d_xp = backward_chain(list(stack.branch_p), output.caches["p"], d_zp)
    g_q, d_xq = backward_chain(list(stack.branch_q), output.caches["q"], d_zq)
    return StackGrads(g_p, g_q, g_f, d_xp, d_xq)


def array_entry(value: np.ndarray) -> dict[str, Any]:
    return {"shape": list(value.shape), "data": value.ravel().tolist()}


def array_from_entry(entry: dict[str, Any]) -> np.ndarray:
    return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])


def stack_to_dict(stack: SsmStack) -> dict[str, Any]:
    """Versioned JSON-ready document with shape-tagged flat arrays."""
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "embed_dim": stack.embed_dim,
        "blocks": [
            {
                "name": name,
                "gate": block.gate,
                "direction": block.direction,
                **{key: array_entry(value) for key, value in block.params().items()},
            }
            for name, block in stack.named_blocks()
        ],
    }


def stack_from_dict(data: dict[str, Any]) -> SsmStack:
    if data.get("format") != PARAMS_FORMAT:
        raise SasKitError(f"not an SSM parameter document: format={data.get('format')!r}")
    if data.get("version") != PARAMS_VERSION:
        raise SasKitError(f"unsupported parameter version {data.get('version')!r}")
    branches: dict[str, list[SsmBlock]] = {"branch_p": [], "branch_q": [], "fusion": []}
    for entry in data["blocks"]:
        arrays = {
            key: array_from_entry(entry[key]) for key in ("A", "B", "b")
        }
        branch = entry["name"].split(".")[0]
        branches[branch].append(SsmBlock(gate=entry["gate"], direction=entry["direction"], **arrays))
    return SsmStack(tuple(branches["branch_p"]), tuple(branches["branch_q"]), tuple(branches["fusion"]))


def save_stack(stack: SsmStack, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(stack_to_dict(stack), f)


def load_stack(path) -> SsmStack:
    with open(path, encoding="utf-8") as f:
        return stack_from_dict(json.load(f))


def parameter_checksum(arrays: list[np.ndarray]) -> str:
    """SHA-256 over the raw bytes of a list of parameter arrays."""
    digest = hashlib.sha256()
    for value in arrays:
        contiguous = np.ascontiguousarray(value, dtype=np.float64)
        digest.update(str(contiguous.shape).encode())
        digest.update(contiguous.tobytes())
    return digest.hexdigest()


def stack_checksum(stack: SsmStack) -> str:
    return parameter_checksum([p for block in stack.blocks() for p in block.params().values()])

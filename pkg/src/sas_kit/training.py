"""Masked-reconstruction head, the toy training loop and gradient checks."""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .align import SourceBank, align_pipeline, build_source_bank
from .config import AlignmentConfig, GraphConfig, ModelConfig, SasConfig, SerializationConfig
from .errors import DegenerateInputError, DimensionMismatchError, NonFiniteError
from .pointcloud import TokenSet, normalize_unit_sphere, tokenize
from .serialization import SerializationOrder, build_sequence, sas_orders, serialize
from .shapes import Perturbation, gen_shape, perturb
from .ssm import (
    SsmBlock,
    SsmStack,
    StackGrads,
    array_entry,
    array_from_entry,
    hdm_backward,
    hdm_concat_baseline,
    hdm_forward,
    init_block,
    init_stack,
    parameter_checksum,
    ssm_backward,
    ssm_forward_cached,
    stack_from_dict,
    stack_to_dict,
)

logger = logging.getLogger("sas_kit.training")

FUSION_MODES = ("interleave", "concat")
ORDER_VARIANTS = ("sas", "no_cds", "no_gcs", "zorder", "hilbert", "fps_order", "random")
QUERY_SEED_OFFSET = 10_000
FD_STEP = 1e-5
# gradients smaller than this are compared in absolute terms
GRAD_FLOOR = 1e-3
GRADCHECK_TOL = 1e-4


@dataclass(frozen=True)
class ReconstructionHead:
    """Linear map from a fused query row to S x 3 relative points, plus the mask vector."""
    weight: np.ndarray
    bias: np.ndarray
    mask_vector: np.ndarray

    @property
    def patch_size(self) -> int:
        return self.bias.shape[0] // 3


@dataclass(frozen=True)
class ToyModel:
    stack: SsmStack
    head: ReconstructionHead

    def checksum(self) -> str:
        params = [p for block in self.stack.blocks() for p in block.params().values()]
        params += [self.head.weight, self.head.bias, self.head.mask_vector]
        return parameter_checksum(params)

    def stepped(self, grads: "ModelGrads", lr: float) -> "ToyModel":
        head = ReconstructionHead(
            self.head.weight - lr * grads.weight,
            self.head.bias - lr * grads.bias,
            self.head.mask_vector - lr * grads.mask_vector,
        )
        return ToyModel(self.stack.stepped(grads.stack, lr), head)


@dataclass
class ModelGrads:
    stack: StackGrads
    weight: np.ndarray
    bias: np.ndarray
    mask_vector: np.ndarray

    def add_(self, other: "ModelGrads") -> None:
        self.stack.add_(other.stack)
        self.weight += other.weight
        self.bias += other.bias
        self.mask_vector += other.mask_vector

    def scaled(self, factor: float) -> "ModelGrads":
        return ModelGrads(self.stack.scaled(factor), self.weight * factor, self.bias * factor, self.mask_vector * factor)


def init_model(cfg: ModelConfig | None = None, patch_size: int = 32, embed_dim: int | None = None) -> ToyModel:
    cfg = cfg or ModelConfig()
    d = embed_dim or cfg.embed_dim
    rng = np.random.default_rng([cfg.init_seed, 99])
    head = ReconstructionHead(
        rng.standard_normal((3 * patch_size, d)) * (0.1 / np.sqrt(d)),
        np.zeros(3 * patch_size),
        np.zeros(d),
    )
    return ToyModel(init_stack(cfg, d), head)


def model_to_dict(model: ToyModel) -> dict:
    """Stack parameter document with the head stored alongside."""
    head = model.head
    return {
        **stack_to_dict(model.stack),
        "head": {name: array_entry(getattr(head, name)) for name in ("weight", "bias", "mask_vector")},
    }


def model_from_dict(data: dict) -> ToyModel:
    if "head" not in data:
        raise DegenerateInputError("parameter document has no reconstruction head")
    head = ReconstructionHead(**{name: array_from_entry(entry) for name, entry in data["head"].items()})
    return ToyModel(stack_from_dict(data), head)


def save_model(model: ToyModel, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)), encoding="utf-8")
    return path


def load_model(path: Path) -> ToyModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def mask_indices(num_tokens: int, mask_ratio: float, seed: int | list[int] = 0) -> np.ndarray:
    """Sorted indices of ceil(mask_ratio * G) seeded masked tokens."""
    count = math.ceil(round(mask_ratio * num_tokens, 9))
    if count <= 0 or count >= num_tokens:
        raise DegenerateInputError(
            f"mask ratio {mask_ratio} masks {count} of {num_tokens} tokens; need between 1 and G-1"
        )
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(num_tokens, size=count, replace=False))


def chamfer_loss_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Symmetric L2 Chamfer distance and its gradient w.r.t. ``pred``."""
    d_pt, i_pt = cKDTree(target).query(pred)
    d_tp, i_tp = cKDTree(pred).query(target)
    loss = float(np.mean(d_pt ** 2) + np.mean(d_tp ** 2))
    grad = 2.0 * (pred - target[i_pt]) / pred.shape[0]
    np.add.at(grad, i_tp, 2.0 * (pred[i_tp] - target) / target.shape[0])
    return loss, grad


@dataclass
class ReconstructionResult:
    masked: np.ndarray
    predictions: np.ndarray
    loss: float
    grads: ModelGrads | None = None


def _labels(orders: list[SerializationOrder]) -> list[str]:
    return [f"seg{i}" for i in range(len(orders))]


def masked_reconstruct(
    model: ToyModel,
    query: TokenSet,
    query_orders: list[SerializationOrder],
    mask_ratio: float = 0.7,
    seed: int | list[int] = 0,
    prompt: TokenSet | None = None,
    prompt_orders: list[SerializationOrder] | None = None,
    fusion_mode: str = "interleave",
    features: np.ndarray | None = None,
    need_grads: bool = False,
) -> ReconstructionResult:
    """Mask query tokens, run the HDM stack and predict the masked patches.

    Every sequence slot that holds a masked token carries the mask vector; the
    head reads the mean of those slots' fused query rows. The loss is the
    Chamfer distance to the true center-relative patch, averaged over masked
    tokens. Without a prompt the query is its own (unmasked) prompt.
    """
    if fusion_mode not in FUSION_MODES:
        raise DegenerateInputError(f"unknown fusion mode {fusion_mode!r}")
    head = model.head
    if head.patch_size != query.patch_size:
        raise DimensionMismatchError(f"head predicts {head.patch_size} points, patches have {query.patch_size}")
    prompt = prompt or query
    prompt_orders = prompt_orders or query_orders
    feats = np.asarray(query.features if features is None else features, dtype=np.float64)

    masked = mask_indices(query.size, mask_ratio, seed)
    masked_feats = feats.copy()
    masked_feats[masked] = head.mask_vector
    q_seq = build_sequence(masked_feats, query_orders, _labels(query_orders))
    p_seq = build_sequence(prompt.features, prompt_orders, _labels(prompt_orders))
    run = hdm_forward if fusion_mode == "interleave" else hdm_concat_baseline
    out = run(model.stack, p_seq, q_seq)

    slots = q_seq.token_indices
    targets = query.relative_patch_points()
    n_masked = masked.size
    predictions = np.empty((n_masked, query.patch_size, 3))
    d_weight = np.zeros_like(head.weight)
    d_bias = np.zeros_like(head.bias)
    d_query = np.zeros_like(out.query)
    total = 0.0
    for k, token in enumerate(masked):
        positions = np.flatnonzero(slots == token)
        pooled = out.query[positions].mean(axis=0)
        flat = head.weight @ pooled + head.bias
        predictions[k] = flat.reshape(-1, 3)
        loss, grad = chamfer_loss_grad(predictions[k], targets[token])
        total += loss
        if need_grads:
            g = grad.ravel() / n_masked
            d_weight += np.outer(g, pooled)
            d_bias += g
            d_query[positions] += (head.weight.T @ g) / positions.size
    loss = total / n_masked
    if not math.isfinite(loss):
        raise NonFiniteError("reconstruction loss is not finite")
    if not need_grads:
        return ReconstructionResult(masked, predictions, loss)

    stack_grads = hdm_backward(model.stack, out, np.zeros_like(out.prompt), d_query)
    d_mask = stack_grads.query_inputs[np.isin(slots, masked)].sum(axis=0)
    return ReconstructionResult(masked, predictions, loss, ModelGrads(stack_grads, d_weight, d_bias, d_mask))


@dataclass(frozen=True)
class ToySample:
    """One (prompt, query) pair with the orders used to build both sequences."""
    prompt: TokenSet
    query: TokenSet
    prompt_orders: tuple[SerializationOrder, ...]
    query_orders: tuple[SerializationOrder, ...]
    shape_id: str


def variant_orders(
    token_set: TokenSet,
    variant: str,
    graph_cfg: GraphConfig | None = None,
    serial_cfg: SerializationConfig | None = None,
) -> tuple[SerializationOrder, ...]:
    """Orders that make up a sequence: (cds, gcs) for SAS, one order for the
    single-spectrum ablations, a baseline order in both slots otherwise."""
    graph_cfg = graph_cfg or GraphConfig()
    if variant == "sas":
        return sas_orders(token_set, graph_cfg)
    if variant == "no_cds":
        return (serialize(token_set, "gcs", graph_cfg),)
    if variant == "no_gcs":
        return (serialize(token_set, "cds_spectral", graph_cfg),)
    if variant in ORDER_VARIANTS:
        order = serialize(token_set, variant, graph_cfg, serial_cfg)
        return (order, order)
    raise DegenerateInputError(f"unknown order variant {variant!r}; choose from {', '.join(ORDER_VARIANTS)}")


def build_toy_samples(
    cfg: SasConfig,
    order_variant: str = "sas",
    query_shift: Callable[[int], Perturbation] | None = None,
    graph_cfg: GraphConfig | None = None,
) -> list[ToySample]:
    """Prompt/query pairs over the corpus: two seeded draws of each shape.

    ``query_shift(i)`` returns the perturbation applied to the i-th query.
    """
    toy = cfg.toy
    graph_cfg = graph_cfg or cfg.graph
    samples = []
    for kind in cfg.corpus.kinds:
        for seed in cfg.corpus.seeds:
            prompt_cloud = normalize_unit_sphere(gen_shape(kind, toy.n_points, seed))
            query_cloud = normalize_unit_sphere(gen_shape(kind, toy.n_points, seed + QUERY_SEED_OFFSET))
            if query_shift is not None:
                query_cloud = perturb(query_cloud, query_shift(len(samples)), toy.group_size)
            prompt = tokenize(prompt_cloud, toy.num_groups, toy.group_size, toy.embed_dim, cfg.tokenizer.projection_seed)
            query = tokenize(query_cloud, toy.num_groups, toy.group_size, toy.embed_dim, cfg.tokenizer.projection_seed)
            samples.append(ToySample(
                prompt,
                query,
                variant_orders(prompt, order_variant, graph_cfg, cfg.serialization),
                variant_orders(query, order_variant, graph_cfg, cfg.serialization),
                f"{kind}-{seed}",
            ))
    return samples


@dataclass
class TrainResult:
    model: ToyModel
    trace: list[float]


def cosine_lr(lr: float, epoch: int, epochs: int, decay: bool = True) -> float:
    if not decay:
        return lr
    return lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def train_toy(
    model: ToyModel,
    corpus: list[ToySample],
    epochs: int = 30,
    lr: float = 1e-4,
    mask_ratio: float = 0.7,
    seed: int = 0,
    cosine_decay: bool = True,
    fusion_mode: str = "interleave",
) -> TrainResult:
    """Full-batch gradient descent; the trace holds each epoch's mean loss before its step.

    Masks are fixed per sample (seeded by ``seed`` and the sample index), so
    identical seeds give bit-identical traces.
    """
    if not corpus:
        raise DegenerateInputError("training corpus is empty")
    trace: list[float] = []
    for epoch in range(epochs):
        total_loss = 0.0
        total_grads: ModelGrads | None = None
        for i, sample in enumerate(corpus):
            result = masked_reconstruct(
                model, sample.query, list(sample.query_orders), mask_ratio, [seed, i],
                sample.prompt, list(sample.prompt_orders), fusion_mode, need_grads=True,
            )
            total_loss += result.loss
            if total_grads is None:
                total_grads = result.grads
            else:
                total_grads.add_(result.grads)
        mean_loss = total_loss / len(corpus)
        if not math.isfinite(mean_loss):
            raise NonFiniteError("training diverged", epoch=epoch)
        trace.append(mean_loss)
        step = cosine_lr(lr, epoch, epochs, cosine_decay)
        try:
            model = model.stepped(total_grads.scaled(1.0 / len(corpus)), step)
        except NonFiniteError as e:
            raise NonFiniteError(f"parameters became non-finite: {e}", epoch=epoch)
        logger.debug("epoch %d loss %.6f lr %.3g", epoch, mean_loss, step)
    return TrainResult(model, trace)


def evaluate_toy(
    model: ToyModel,
    samples: list[ToySample],
    mask_ratio: float = 0.7,
    seed: int = 0,
    fusion_mode: str = "interleave",
    alignment: AlignmentConfig | None = None,
    source_bank: SourceBank | None = None,
    graph_cfg: GraphConfig | None = None,
) -> float:
    """Mean masked-reconstruction loss; query features are aligned first when requested.

    Model parameters are only read.
    """
    losses = []
    for i, sample in enumerate(samples):
        features = None
        if alignment is not None and alignment.mode != "off":
            cds, gcs = sas_orders(sample.query, graph_cfg)
            features = align_pipeline(sample.query, {"cds": cds, "gcs": gcs}, source_bank, alignment, graph_cfg).features
        result = masked_reconstruct(
            model, sample.query, list(sample.query_orders), mask_ratio, [seed, i],
            sample.prompt, list(sample.prompt_orders), fusion_mode, features=features,
        )
        losses.append(result.loss)
    return float(np.mean(losses))


def source_bank_from_samples(samples: list[ToySample], graph_cfg: GraphConfig | None = None) -> SourceBank:
    """Training queries as alignment sources, tagged by shape kind."""
    return build_source_bank([s.query for s in samples], graph_cfg)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, GRAD_FLOOR)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), GRAD_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(loss_of: Callable[[np.ndarray], float], value: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    value = np.array(value, dtype=np.float64)
    grad = np.zeros_like(value)
    flat = value.ravel()
    out = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        plus = loss_of(value)
        flat[i] = keep - step
        minus = loss_of(value)
        flat[i] = keep
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def gradcheck_block(block: SsmBlock, sequence: np.ndarray, upstream: np.ndarray) -> dict[str, float]:
    """Max relative error per group (A, B, b, inputs) for loss = sum(upstream * output)."""
    _, cache = ssm_forward_cached(block, sequence)
    grads = ssm_backward(block, cache, upstream)

    def loss_with(**kwargs) -> Callable[[np.ndarray], float]:
        def f(value: np.ndarray) -> float:
            if "inputs" in kwargs:
                out, _ = ssm_forward_cached(block, value)
            else:
                out, _ = ssm_forward_cached(replace(block, **{kwargs["name"]: value}), sequence)
            return float(np.sum(upstream * out))
        return f

    errors = {
        name: relative_error(getattr(grads, name), numeric_gradient(loss_with(name=name), getattr(block, name)))
        for name in ("A", "B", "b")
    }
    errors["inputs"] = relative_error(grads.inputs, numeric_gradient(loss_with(inputs=True), sequence))
    return errors


def random_block(rng: np.random.Generator, dim: int, gate: str, direction: str) -> SsmBlock:
    base = init_block(dim, int(rng.integers(0, 2**31)), 0.9, gate, direction)
    return replace(base, B=rng.standard_normal((dim, dim)) * 0.5, b=rng.standard_normal(dim) * 0.1)


def gradcheck_suite(instances: int = 50, seed: int = 0, max_len: int = 16, max_dim: int = 8) -> dict[str, float]:
    """Worst relative error per parameter group over random block instances."""
    rng = np.random.default_rng(seed)
    worst = {"A": 0.0, "B": 0.0, "b": 0.0, "inputs": 0.0}
    gates = ("identity", "sigmoid_gate")
    directions = ("forward", "backward", "bidirectional")
    for i in range(instances):
        length = int(rng.integers(1, max_len + 1))
        dim = int(rng.integers(1, max_dim + 1))
        block = random_block(rng, dim, gates[i % 2], directions[i % 3])
        sequence = rng.standard_normal((length, dim))
        upstream = rng.standard_normal((length, dim))
        for name, err in gradcheck_block(block, sequence, upstream).items():
            worst[name] = max(worst[name], err)
    return worst


def gradcheck_hdm(stack: SsmStack, prompt: np.ndarray, query: np.ndarray, seed: int = 0, fusion_mode: str = "interleave") -> dict[str, float]:
    """Finite-difference check of ``hdm_backward`` for the query inputs and every block's A."""
    rng = np.random.default_rng(seed)
    run = hdm_forward if fusion_mode == "interleave" else hdm_concat_baseline
    out = run(stack, prompt, query)
    w_p = rng.standard_normal(out.prompt.shape)
    w_q = rng.standard_normal(out.query.shape)

    def loss(s: SsmStack, xp: np.ndarray, xq: np.ndarray) -> float:
        o = run(s, xp, xq)
        return float(np.sum(w_p * o.prompt) + np.sum(w_q * o.query))

    grads = hdm_backward(stack, out, w_p, w_q)
    errors = {
        "prompt_inputs": relative_error(grads.prompt_inputs, numeric_gradient(lambda v: loss(stack, v, query), prompt)),
        "query_inputs": relative_error(grads.query_inputs, numeric_gradient(lambda v: loss(stack, prompt, v), query)),
    }
    branches = {"branch_p": stack.branch_p, "branch_q": stack.branch_q, "fusion": stack.fusion}
    branch_grads = {"branch_p": grads.branch_p, "branch_q": grads.branch_q, "fusion": grads.fusion}
    for branch, blocks in branches.items():
        for i, block in enumerate(blocks):
            def with_a(value: np.ndarray, branch=branch, i=i) -> float:
                swapped = list(branches[branch])
                swapped[i] = replace(swapped[i], A=value)
                parts = {**branches, branch: tuple(swapped)}
                return loss(SsmStack(parts["branch_p"], parts["branch_q"], parts["fusion"]), prompt, query)
            errors[f"{branch}.{i}.A"] = relative_error(branch_grads[branch][i].A, numeric_gradient(with_a, block.A))
    return errors

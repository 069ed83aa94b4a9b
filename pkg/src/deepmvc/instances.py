"""Composable DeepMVC instances: build, train, ablate, and sweep over views.

An instance is a tuple of components

* ``sv_ssl``: ``none`` | ``reconstruction`` (per-view autoencoders)
* ``mv_ssl``: ``none`` | ``contrastive`` | ``mutual_information`` |
  ``mi_over_clustering`` (MI over per-view over-clustering heads)
* ``fusion``: ``concat`` | ``weighted_sum``
* ``cm``: ``kmeans`` (two-stage) | ``ddc`` (end-to-end) |
  ``concat_assignments_kmeans`` (per-view clustering heads trained with the
  MI loss, fused and clustered with k-means afterwards)

and the six named instances fix one tuple each.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .clustering import ClusterAssignment, DdcParams, ddc_forward, ddc_loss, kmeans
from .datasets import MultiViewDataset
from .errors import ConfigurationError, ContractViolation, TrainingError
from .evaluation import BootstrapEstimate, RunRecord, accuracy, bootstrap_std, nmi, select_best_run
from .fusion import FusionSpec, fuse
from .losses import LossWeights, contrastive_loss, mi_loss_all_pairs, reconstruction_loss, total_loss
from .networks import AdamState, MlpParams, MlpSpec, adam_step, init_params, mlp_forward
from .tensor import Tensor

log = logging.getLogger(__name__)

SLOTS = {
    "sv_ssl": ("none", "reconstruction"),
    "mv_ssl": ("none", "contrastive", "mutual_information", "mi_over_clustering"),
    "fusion": ("concat", "weighted_sum"),
    "cm": ("kmeans", "ddc", "concat_assignments_kmeans"),
}

INSTANCE_COMPONENTS = {
    "AE-KM": ("reconstruction", "none", "concat", "kmeans"),
    "AE-DDC": ("reconstruction", "none", "weighted_sum", "ddc"),
    "CAE-KM": ("reconstruction", "contrastive", "concat", "kmeans"),
    "CAE-DDC": ("reconstruction", "contrastive", "weighted_sum", "ddc"),
    "InfoDDC": ("none", "mutual_information", "weighted_sum", "ddc"),
    "MV-IIC": ("none", "mi_over_clustering", "concat", "concat_assignments_kmeans"),
}

DEFAULT_LAMBDA = {"InfoDDC": 10.0, "MV-IIC": 1.5}


@dataclass(frozen=True)
class InstanceSpec:
    name: str
    sv_ssl: str
    mv_ssl: str
    fusion: str
    cm: str
    weights: LossWeights = field(default_factory=LossWeights)
    tau: float = 0.1
    lam: float = 1.0
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    hidden_dims: tuple[int, ...] = (128,)
    rep_dim: int = 64
    encoder_output: str = "none"
    ddc_hidden: int = 100
    n_overcluster_heads: int = 5
    overcluster_factor: int = 5
    full_batch: bool = False
    kmeans_n_init: int = 10
    ablations: tuple[str, ...] = ()

    def __post_init__(self):
        for slot, allowed in SLOTS.items():
            if getattr(self, slot) not in allowed:
                raise ConfigurationError(f"{slot}={getattr(self, slot)!r} not in {allowed}")
        if self.mv_ssl == "mutual_information" and self.encoder_output != "softmax":
            object.__setattr__(self, "encoder_output", "softmax")
        if self.epochs < 0 or self.batch_size < 2 or self.lr <= 0:
            raise ConfigurationError("epochs >= 0, batch_size >= 2 and lr > 0 are required")
        if not isinstance(self.weights, LossWeights):
            object.__setattr__(self, "weights", LossWeights(**dict(self.weights)))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    @property
    def components(self) -> tuple[str, str, str, str]:
        return (self.sv_ssl, self.mv_ssl, self.fusion, self.cm)

    @property
    def two_stage(self) -> bool:
        return self.cm == "kmeans"

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["weights"] = {"w_sv": self.weights.w_sv, "w_mv": self.weights.w_mv, "w_cm": self.weights.w_cm}
        d["hidden_dims"] = list(self.hidden_dims)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceSpec":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        d["hidden_dims"] = tuple(d.get("hidden_dims", (128,)))
        d["ablations"] = tuple(d.get("ablations", ()))
        return cls(**d)


def make_spec(name: str, **overrides) -> InstanceSpec:
    """Default spec for one of the six named instances."""
    if name not in INSTANCE_COMPONENTS:
        raise ConfigurationError(f"unknown instance {name!r}; choose from {sorted(INSTANCE_COMPONENTS)}")
    sv, mv, fu, cm = INSTANCE_COMPONENTS[name]
    base = dict(name=name, sv_ssl=sv, mv_ssl=mv, fusion=fu, cm=cm, lam=DEFAULT_LAMBDA.get(name, 1.0),
                encoder_output="softmax" if name == "InfoDDC" else "none")
    base.update(overrides)
    if isinstance(base.get("weights"), dict):
        base["weights"] = LossWeights(**base["weights"])
    return InstanceSpec(**base)


def ablate(spec: InstanceSpec, slot: str, replacement: str) -> InstanceSpec:
    """Swap one component, keeping every other slot and hyperparameter."""
    if slot not in SLOTS:
        raise ConfigurationError(f"unknown slot {slot!r}; choose from {sorted(SLOTS)}")
    if replacement not in SLOTS[slot]:
        raise ConfigurationError(f"{replacement!r} is not a valid {slot}; choose from {SLOTS[slot]}")
    ablations = tuple(a for a in spec.ablations if not a.startswith(slot + "=")) + (f"{slot}={replacement}",)
    return replace(spec, **{slot: replacement}, ablations=ablations)


# -- model ------------------------------------------------------------------------


@dataclass
class DeepMVCModel:
    spec: InstanceSpec
    k: int
    dims: list[int]
    encoders: list[MlpParams]
    decoders: list[MlpParams]
    cluster_heads: list[MlpParams]
    overcluster_heads: list[list[MlpParams]]
    fusion: FusionSpec
    ddc: DdcParams | None

    @property
    def n_views(self) -> int:
        return len(self.dims)

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for group in (self.encoders, self.decoders, self.cluster_heads):
            for mlp in group:
                params.extend(mlp.parameters())
        for heads in self.overcluster_heads:
            for mlp in heads:
                params.extend(mlp.parameters())
        params.extend(self.fusion.parameters())
        if self.ddc is not None:
            params.extend(self.ddc.parameters())
        return params

    def parameter_digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def build_instance(spec: InstanceSpec, ds: MultiViewDataset) -> DeepMVCModel:
    """Wire encoders, SSL heads, fusion and clustering module for ``ds``."""
    if ds.k < 2:
        raise ConfigurationError("clustering needs k >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    dims = ds.dims
    enc_specs = [MlpSpec((d, *spec.hidden_dims, spec.rep_dim), "relu", spec.encoder_output) for d in dims]
    encoders = [init_params(s, rng) for s in enc_specs]
    decoders = []
    if spec.sv_ssl == "reconstruction":
        decoders = [init_params(s.mirrored(), rng) for s in enc_specs]
    cluster_heads: list[MlpParams] = []
    if spec.cm == "concat_assignments_kmeans":
        cluster_heads = [init_params(MlpSpec((spec.rep_dim, ds.k), "relu", "softmax"), rng) for _ in dims]
    overcluster_heads: list[list[MlpParams]] = []
    if spec.mv_ssl == "mi_over_clustering":
        over_k = spec.overcluster_factor * ds.k
        overcluster_heads = [
            [init_params(MlpSpec((spec.rep_dim, over_k), "relu", "softmax"), rng) for _ in dims]
            for _ in range(spec.n_overcluster_heads)
        ]
    fused_inputs = [ds.k] * len(dims) if spec.cm == "concat_assignments_kmeans" else [spec.rep_dim] * len(dims)
    if spec.fusion == "weighted_sum" and len(set(fused_inputs)) != 1:
        raise ConfigurationError("weighted-sum fusion needs equal representation dims")
    fusion = FusionSpec(spec.fusion, len(dims))
    fused_dim = sum(fused_inputs) if spec.fusion == "concat" else fused_inputs[0]
    ddc = DdcParams.init(fused_dim, ds.k, rng, spec.ddc_hidden) if spec.cm == "ddc" else None
    return DeepMVCModel(spec, ds.k, list(dims), encoders, decoders, cluster_heads, overcluster_heads, fusion, ddc)


@dataclass
class ForwardPass:
    reps: list[Tensor]
    recon: list[Tensor]
    assignments: list[Tensor]
    overcluster: list[list[Tensor]]
    fused: Tensor
    hidden: Tensor | None = None
    alpha: Tensor | None = None


def forward(model: DeepMVCModel, xs: Sequence) -> ForwardPass:
    reps = [mlp_forward(enc, x) for enc, x in zip(model.encoders, xs)]
    recon = [mlp_forward(dec, z) for dec, z in zip(model.decoders, reps)]
    assignments = [mlp_forward(head, z) for head, z in zip(model.cluster_heads, reps)]
    overcluster = [[mlp_forward(head, z) for head, z in zip(heads, reps)] for heads in model.overcluster_heads]
    fused = fuse(model.fusion, assignments if model.cluster_heads else reps)
    out = ForwardPass(reps, recon, assignments, overcluster, fused)
    if model.ddc is not None:
        out.hidden, out.alpha = ddc_forward(model.ddc, fused)
    return out


def compute_losses(model: DeepMVCModel, xs: Sequence, out: ForwardPass) -> dict[str, Tensor]:
    """Loss components present in this instance (absent ones are omitted)."""
    spec = model.spec
    losses: dict[str, Tensor] = {}
    if spec.sv_ssl == "reconstruction":
        losses["sv"] = reconstruction_loss(xs, out.recon)
    if spec.mv_ssl == "contrastive":
        losses["mv"] = contrastive_loss(out.reps, spec.tau)
    elif spec.mv_ssl == "mutual_information":
        losses["mv"] = mi_loss_all_pairs(out.reps, spec.lam)
    elif spec.mv_ssl == "mi_over_clustering":
        heads = [mi_loss_all_pairs(h, spec.lam) for h in out.overcluster]
        total = heads[0]
        for h in heads[1:]:
            total = total + h
        losses["mv"] = total / float(len(heads))
    if spec.cm == "ddc":
        losses["cm"] = ddc_loss(out.alpha, out.hidden).total
    elif spec.cm == "concat_assignments_kmeans":
        losses["cm"] = mi_loss_all_pairs(out.assignments, spec.lam)
    return losses


def _component_names(spec: InstanceSpec) -> dict[str, float]:
    names = []
    if spec.sv_ssl != "none":
        names.append("sv")
    if spec.mv_ssl != "none":
        names.append("mv")
    if spec.cm != "kmeans":
        names.append("cm")
    return {name: float("nan") for name in names}


@dataclass
class TrainedInstance:
    model: DeepMVCModel
    trajectory: list[float]
    component_trajectory: list[dict[str, float]]
    assignment: ClusterAssignment
    fused: np.ndarray

    @property
    def final_loss(self) -> float:
        return self.trajectory[-1] if self.trajectory else float("nan")

    @property
    def labels(self) -> np.ndarray:
        return self.assignment.hard_labels

    def record(self, ds: MultiViewDataset) -> RunRecord:
        if ds.labels is None:
            raise ContractViolation("dataset has no labels to score against")
        return RunRecord(
            seed=self.model.spec.seed,
            final_loss=self.final_loss,
            acc=accuracy(self.labels, ds.labels, ds.k),
            nmi=nmi(self.labels, ds.labels),
            model=self.model.spec.name,
            dataset=ds.name,
        )


def _variants_in(n_views: int, spec: InstanceSpec) -> None:
    if spec.mv_ssl != "none" and n_views < 2:
        raise ConfigurationError(f"{spec.mv_ssl} needs at least two views")
    if spec.cm == "concat_assignments_kmeans" and n_views < 2:
        raise ConfigurationError("MI-trained clustering heads need at least two views")


def final_assignment(model: DeepMVCModel, xs: Sequence) -> tuple[ClusterAssignment, np.ndarray]:
    """Cluster the full dataset with the trained model (no gradient tracking)."""
    with T.no_grad():
        out = forward(model, xs)
    fused = out.fused.data
    if model.spec.cm == "ddc":
        return ClusterAssignment(out.alpha.data), fused
    result = kmeans(fused, model.k, seed=model.spec.seed, n_init=model.spec.kmeans_n_init)
    return result.assignment, fused


def train_instance(model: DeepMVCModel, ds: MultiViewDataset, spec: InstanceSpec | None = None) -> TrainedInstance:
    """Minibatch Adam over seeded shuffles; the final loss is the last epoch's mean total loss."""
    spec = spec or model.spec
    if not ds.is_normalized():
        raise ContractViolation("dataset views must be normalized to [0, 1] before training")
    _variants_in(ds.n_views, spec)
    xs = ds.float_views()
    n = ds.n
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[1])
    params = model.parameters()
    adam = AdamState(lr=spec.lr)
    batch_size = n if spec.full_batch else min(spec.batch_size, n)
    n_batches = max(1, math.ceil(n / batch_size))
    trajectory: list[float] = []
    components: list[dict[str, float]] = []
    for epoch in range(1, spec.epochs + 1):
        order = shuffle_rng.permutation(n)
        sums: dict[str, float] = {}
        total_sum = 0.0
        for idx in np.array_split(order, n_batches):
            batch = [x[idx] for x in xs]
            out = forward(model, batch)
            try:
                parts = compute_losses(model, batch, out)
            except ContractViolation:
                if np.all(np.isfinite(out.fused.data)):
                    raise
                # diverged parameters; the clustering head rejects non-finite input
                raise TrainingError("non-finite training loss", epoch, _component_names(spec)) from None
            values = {key: part.item() for key, part in parts.items()}
            if not all(math.isfinite(v) for v in values.values()):
                raise TrainingError("non-finite training loss", epoch, values)
            loss = total_loss(spec.weights, parts.get("sv"), parts.get("mv"), parts.get("cm"))
            value = loss.item()
            for p in params:
                p.zero_grad()
            T.backward(loss)
            adam_step(params, [p.grad for p in params], adam)
            total_sum += value * len(idx)
            for key, v in values.items():
                sums[key] = sums.get(key, 0.0) + v * len(idx)
        trajectory.append(total_sum / n)
        components.append({key: v / n for key, v in sums.items()})
    assignment, fused = final_assignment(model, xs)
    return TrainedInstance(model, trajectory, components, assignment, fused)


def run_once(spec: InstanceSpec, ds: MultiViewDataset) -> TrainedInstance:
    return train_instance(build_instance(spec, ds), ds, spec)


def _run_record(args) -> RunRecord:
    spec, ds = args
    return run_once(spec, ds).record(ds)


@dataclass
class ProtocolResult:
    runs: list[RunRecord]
    best: RunRecord
    estimates: dict[str, BootstrapEstimate]

    @property
    def acc(self) -> float:
        return self.best.acc

    @property
    def nmi(self) -> float:
        return self.best.nmi


def run_seeds(spec: InstanceSpec, ds: MultiViewDataset, runs: int = 5, seed: int = 0, jobs: int = 1) -> list[RunRecord]:
    """Train ``runs`` copies with seeds ``seed .. seed + runs - 1``; ordered by seed."""
    tasks = [(replace(spec, seed=seed + r), ds) for r in range(runs)]
    if jobs > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_record, tasks))
    return [_run_record(t) for t in tasks]


def evaluate_protocol(spec: InstanceSpec, ds: MultiViewDataset, runs: int = 5, seed: int = 0,
                      B: int = 1000, jobs: int = 1) -> ProtocolResult:
    """``runs`` seeded trainings, lowest-loss selection, bootstrap spread."""
    records = run_seeds(spec, ds, runs, seed, jobs)
    return ProtocolResult(records, select_best_run(records), bootstrap_std(records, B, seed))


@dataclass(frozen=True)
class SweepPoint:
    V: int
    model: str
    acc: float
    acc_std: float
    nmi: float
    nmi_std: float
    runs: tuple[RunRecord, ...] = ()


def views_sweep(ds: MultiViewDataset, spec: InstanceSpec, view_counts: Sequence[int], runs_per_point: int = 5,
                seed: int = 0, B: int = 1000, jobs: int = 1) -> list[SweepPoint]:
    """Evaluate ``spec`` on the first ``V'`` views for each requested ``V'``."""
    if not view_counts or max(view_counts) > ds.n_views or min(view_counts) < 1:
        raise ContractViolation(f"view counts {list(view_counts)} must lie in [1, {ds.n_views}]")
    points = []
    for count in view_counts:
        sub = ds.first_views(count)
        res = evaluate_protocol(spec, sub, runs_per_point, seed, B, jobs)
        points.append(SweepPoint(count, spec.name, res.acc, res.estimates["acc"].std_hat,
                                 res.nmi, res.estimates["nmi"].std_hat, tuple(res.runs)))
    return points

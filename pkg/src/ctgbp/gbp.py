"""Gaussian belief propagation over the factor graph.

One iteration runs two barrier-separated phases:

1. factor phase: every participating factor re-linearizes at the current
   neighbor means, absorbs the node-to-factor messages committed by the last
   node phase, and emits one message per neighbor by Schur-marginalizing all
   other neighbors out of the joint information form (cavity construction: the
   target's slice keeps only the factor's own information, so its incoming
   message is never echoed back);
2. node phase: every participating node warps the fresh factor-to-node
   messages into the tangent space at its current mean, sums them, applies a
   step-sized mean update, re-warps the belief precision to the new mean, and
   emits leave-one-out messages anchored there.

Messages carry (mean on the manifold, tangent information vector, tangent
precision). Missing mailbox entries act as the vacuous message.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .graph import Factor, FactorGraph, MessageTriplet, VariableNode
from .manifold import (
    Pose,
    UnitQuaternion,
    boxminus,
    boxplus,
    dboxplus_dtau,
    dboxplus_dtau_inv,
)
from .robust import loss_eval, triggs_correct
from .sensors import CheiralityError
from .spline import OutOfDomainError

log = logging.getLogger(__name__)

SYNCHRONOUS = "synchronous"
DROPOUT = "dropout"


@dataclass
class SolverConfig:
    schedule: str = SYNCHRONOUS
    dropout_nodes: float = 0.0
    dropout_factors: float = 0.0
    alpha_n: Optional[float] = None   # None: use per-node step sizes
    alpha_f: Optional[float] = None
    max_iters: int = 50
    tol: float = 1e-9                 # relative energy change
    seed: int = 0
    workers: int = 1
    jitter: float = 1e-9
    validate: bool = False            # PSD-check every emitted precision

    def __post_init__(self):
        if self.schedule not in (SYNCHRONOUS, DROPOUT):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        for p in (self.dropout_nodes, self.dropout_factors):
            if not (0.0 <= p < 1.0):
                raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class IterationStats:
    iteration: int
    energy: float
    max_delta: float
    wall_ms: float


@dataclass
class RunRecord:
    rows: List[IterationStats] = field(default_factory=list)

    @property
    def final_energy(self) -> float:
        return self.rows[-1].energy

    @property
    def iterations(self) -> int:
        return self.rows[-1].iteration

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.rows])

    def iterations_to_convergence(self, rel_tol: float = 1e-6) -> Optional[int]:
        """First iteration whose relative energy change drops below rel_tol."""
        for prev, cur in zip(self.rows, self.rows[1:]):
            if abs(cur.energy - prev.energy) <= rel_tol * max(abs(prev.energy), 1e-300):
                return cur.iteration
        return None

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write("# ct-gbp v1\n")
            w = csv.writer(f)
            w.writerow(["iter", "energy", "max_delta", "wall_ms"])
            for r in self.rows:
                w.writerow([r.iteration, repr(float(r.energy)),
                            repr(float(r.max_delta)), repr(float(r.wall_ms))])

    @classmethod
    def from_csv(cls, path) -> "RunRecord":
        rows = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("iter"):
                    continue
                i, e, d, w = line.split(",")
                rows.append(IterationStats(int(i), float(e), float(d), float(w)))
        return cls(rows)


@dataclass
class FactorLinearization:
    """Robustified information form of one factor at its linearization point."""

    values: List[object]           # linearization value per variable neighbor
    var_ids: List[object]
    slices: List[slice]
    residual: np.ndarray           # robust residual
    jacobian: np.ndarray           # robust stacked Jacobian
    eta: np.ndarray                # -J^T r
    lam: np.ndarray                # J^T J

    @property
    def dim(self) -> int:
        return self.eta.shape[0]


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _assert_psd(m: np.ndarray, what: str):
    if m.size and np.linalg.eigvalsh(m).min() < -1e-9:
        raise AssertionError(f"{what} lost positive semi-definiteness")


def linearize_factor(graph: FactorGraph, factor: Factor) -> Optional[FactorLinearization]:
    """Evaluate, weight and robustify one factor; None if the residual model
    fails at the current linearization point (factor skipped, reported)."""
    values = graph.neighbor_values(factor)
    try:
        r_raw, blocks = factor.model.evaluate(values, with_jacobians=True)
    except (CheiralityError, OutOfDomainError) as exc:
        log.warning("factor %s skipped: %s", factor.id, exc)
        return None
    var_values, var_blocks = [], []
    for nid, value, block in zip(factor.neighbors, values, blocks):
        if nid in graph.nodes:
            var_values.append(value)
            var_blocks.append(block)
    r = factor.sqrt_info @ r_raw
    J = factor.sqrt_info @ np.hstack(var_blocks)
    r, J = triggs_correct(r, J, factor.loss)
    slices = []
    start = 0
    for b in var_blocks:
        slices.append(slice(start, start + b.shape[1]))
        start += b.shape[1]
    return FactorLinearization(var_values, list(factor.variables), slices,
                               r, J, -J.T @ r, J.T @ J)


def factor_update(graph: FactorGraph, factor: Factor,
                  config: SolverConfig) -> Optional[Dict[object, MessageTriplet]]:
    """Linearize one factor and compute its outgoing messages (not staged)."""
    lin = linearize_factor(graph, factor)
    if lin is None:
        return None
    alpha = config.alpha_f if config.alpha_f is not None else factor.alpha

    # Joint information with all incoming node messages added block-diagonally.
    eta_p = lin.eta.copy()
    lam_p = lin.lam.copy()
    for vid, sl in zip(lin.var_ids, lin.slices):
        msg = graph.node_to_factor_message(vid, factor.id)
        if msg is not None:
            eta_p[sl] += msg.tau
            lam_p[sl, sl] += msg.precision

    indices = [np.arange(sl.start, sl.stop) for sl in lin.slices]
    messages: Dict[object, MessageTriplet] = {}
    for k, (vid, sl) in enumerate(zip(lin.var_ids, lin.slices)):
        if len(lin.var_ids) == 1:
            eta_msg = lin.eta.copy()
            lam_msg = lin.lam.copy()
        else:
            rest = np.concatenate([indices[j] for j in range(len(indices)) if j != k])
            a = indices[k]
            lam_ab = lin.lam[np.ix_(a, rest)]
            lam_bb = lam_p[np.ix_(rest, rest)]
            eta_b = eta_p[rest]
            solved = _solve_psd(lam_bb, np.column_stack([lam_ab.T, eta_b]), config.jitter)
            if solved is None:
                log.warning("factor %s -> node %s: singular marginalization, vacuous message",
                            factor.id, vid)
                messages[vid] = MessageTriplet(lin.values[k], np.zeros(a.size),
                                               np.zeros((a.size, a.size)))
                continue
            eta_msg = lin.eta[a] - lam_ab @ solved[:, -1]
            lam_msg = _sym(lin.lam[np.ix_(a, a)] - lam_ab @ solved[:, :-1])

        tau = alpha * _solve_info(lam_msg, eta_msg)
        mean_out = boxplus(lin.values[k], tau)
        D = dboxplus_dtau(lin.values[k], tau)
        prec_out = _sym(D.T @ lam_msg @ D)
        if config.validate:
            _assert_psd(prec_out, f"factor {factor.id} -> node {vid} precision")
        messages[vid] = MessageTriplet(mean_out, tau, prec_out)
    return messages


def _solve_psd(m: np.ndarray, rhs: np.ndarray, jitter: float) -> Optional[np.ndarray]:
    """Cholesky solve with a single jitter retry; None if still not PD."""
    try:
        return cho_solve(cho_factor(m, lower=True), rhs)
    except np.linalg.LinAlgError:
        pass
    try:
        return cho_solve(cho_factor(m + jitter * np.eye(m.shape[0]), lower=True), rhs)
    except np.linalg.LinAlgError:
        return None


def _solve_info(lam: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Mean increment from an information pair; minimum-norm along any
    uninformative directions of a rank-deficient precision."""
    try:
        return cho_solve(cho_factor(lam, lower=True), eta)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(lam, eta, rcond=None)[0]


def _warp_messages(graph: FactorGraph, node: VariableNode, anchor):
    """Warp each incoming message into the tangent space at ``anchor``.

    Returns (sum of precisions, sum of precision-weighted tangents, and the
    per-factor terms so callers can form leave-one-out sums).
    """
    dim = node.dim
    vector_kind = not isinstance(anchor, (Pose, UnitQuaternion))
    total_lam = np.zeros((dim, dim))
    total_lt = np.zeros(dim)
    per_factor = {}
    for fid in graph.node_factors[node.id]:
        msg = graph.factor_to_node_message(fid, node.id)
        if msg is None:
            continue
        if vector_kind:
            tau0 = msg.mean - anchor
            lam0 = msg.precision
        else:
            tau0 = boxminus(msg.mean, anchor)
            W = dboxplus_dtau_inv(anchor, tau0)
            lam0 = _sym(W.T @ msg.precision @ W)
        lt = lam0 @ tau0
        total_lam += lam0
        total_lt += lt
        per_factor[fid] = (lam0, lt)
    return total_lam, total_lt, per_factor


def node_update(graph: FactorGraph, node: VariableNode,
                config: SolverConfig) -> Optional[Tuple[object, np.ndarray, float]]:
    """New (mean, precision, step norm) from the product of incoming messages,
    or None when the summed precision leaves the node unconstrained."""
    total_lam, total_lt, per_factor = _warp_messages(graph, node, node.mean)
    if not per_factor:
        return None
    alpha = config.alpha_n if config.alpha_n is not None else node.alpha
    try:
        incr = alpha * cho_solve(cho_factor(_sym(total_lam), lower=True), total_lt)
    except np.linalg.LinAlgError:
        return None
    new_mean = boxplus(node.mean, incr)
    D = dboxplus_dtau(node.mean, incr)
    new_prec = _sym(D.T @ total_lam @ D)
    if config.validate:
        _assert_psd(new_prec, f"node {node.id} belief precision")
    return new_mean, new_prec, float(np.linalg.norm(incr))


def node_to_factor_messages(graph: FactorGraph, node: VariableNode,
                            anchor) -> Dict[object, MessageTriplet]:
    """Leave-one-out message per connected factor, re-warped about ``anchor``
    (the node's latest mean)."""
    dim = node.dim
    total_lam, total_lt, per_factor = _warp_messages(graph, node, anchor)
    out = {}
    for fid in graph.node_factors[node.id]:
        own = per_factor.get(fid)
        if own is None:
            tau, lam = total_lt, total_lam
        else:
            lam = total_lam - own[0]
            tau = total_lt - own[1]
        out[fid] = MessageTriplet(anchor, tau.copy(), lam.copy())
    return out


def _node_phase_work(graph, node, config):
    update = node_update(graph, node, config)
    anchor = update[0] if update is not None else node.mean
    return update, node_to_factor_messages(graph, node, anchor)


def energy_report(graph: FactorGraph) -> Tuple[float, int]:
    """Total energy, skipping (and counting) factors whose residual model fails."""
    total = 0.0
    failures = 0
    for factor in graph.factors.values():
        try:
            r = graph.factor_weighted_residual(factor)
        except (CheiralityError, OutOfDomainError):
            failures += 1
            continue
        total += 0.5 * loss_eval(factor.loss, float(r @ r))[0]
    return total, failures


def _map_ordered(fn, items, workers: int):
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def iterate(graph: FactorGraph, config: SolverConfig, rng: np.random.Generator,
            iteration: int = 0) -> IterationStats:
    """One full iteration: factor phase then node phase, with dropout sampled
    once up front on a single control path so worker count cannot change it."""
    t0 = time.perf_counter()
    factor_ids = list(graph.factors)
    node_ids = list(graph.nodes)
    if config.schedule == DROPOUT:
        active_f = [fid for fid, r in zip(factor_ids, rng.random(len(factor_ids)))
                    if r >= config.dropout_factors]
        active_n = [nid for nid, r in zip(node_ids, rng.random(len(node_ids)))
                    if r >= config.dropout_nodes]
    else:
        active_f, active_n = factor_ids, node_ids

    results = _map_ordered(lambda fid: factor_update(graph, graph.factors[fid], config),
                           active_f, config.workers)
    for fid, msgs in zip(active_f, results):
        if msgs is None:
            continue  # skipped factor keeps its previous outgoing messages
        for nid, msg in msgs.items():
            graph.stage_factor_to_node(fid, nid, msg)
    graph.commit_messages()

    node_results = _map_ordered(lambda nid: _node_phase_work(graph, graph.nodes[nid], config),
                                active_n, config.workers)
    max_delta = 0.0
    for nid, (update, outgoing) in zip(active_n, node_results):
        node = graph.nodes[nid]
        if update is not None:
            node.mean, node.precision, delta = update
            max_delta = max(max_delta, delta)
        for fid, msg in outgoing.items():
            graph.stage_node_to_factor(nid, fid, msg)
    graph.commit_messages()

    energy, failures = energy_report(graph)
    if failures:
        log.warning("iteration %d: %d factors failed residual evaluation", iteration, failures)
    return IterationStats(iteration, energy,
                          max_delta, (time.perf_counter() - t0) * 1e3)


def solve(graph: FactorGraph, config: SolverConfig) -> RunRecord:
    """Iterate to relative energy-change tolerance or the iteration cap."""
    rng = np.random.default_rng(config.seed)
    energy0, _ = energy_report(graph)
    record = RunRecord([IterationStats(0, energy0, 0.0, 0.0)])
    for k in range(1, config.max_iters + 1):
        stats = iterate(graph, config, rng, iteration=k)
        prev = record.rows[-1].energy
        record.rows.append(stats)
        if abs(stats.energy - prev) <= config.tol * max(abs(prev), 1e-300):
            break
    return record

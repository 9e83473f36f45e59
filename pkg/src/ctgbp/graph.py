"""Bipartite factor graph: manifold-Gaussian variable nodes, constants,
factors and the per-edge message mailboxes used by the belief-propagation
solver.

Mailboxes are double-buffered: writes go to a staging slot and become visible
to readers only after ``commit_messages`` runs at a phase barrier, so vertex
updates within one phase never observe each other.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .manifold import Pose, UnitQuaternion, tangent_dim
from .robust import LossFunction, loss_eval
from .sensors import MODEL_REGISTRY, value_from_jsonable, value_to_jsonable

DEFAULT_STEP_SIZE = 0.7


class NodeKind(enum.Enum):
    POSE_BASIS = "pose_basis"
    ROTATION = "rotation"
    TRANSLATION = "translation"
    LANDMARK = "landmark"
    GENERIC_VECTOR = "generic_vector"


_EXPECTED_TYPE = {
    NodeKind.POSE_BASIS: Pose,
    NodeKind.ROTATION: UnitQuaternion,
}


def _check_symmetric_psd(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("precision must be finite; use a ConstantNode for fixed values")
    if np.max(np.abs(m - m.T)) > 1e-9 * max(1.0, np.max(np.abs(m))):
        raise ValueError("precision must be symmetric")
    sym = 0.5 * (m + m.T)
    if sym.size and np.linalg.eigvalsh(sym).min() < -tol:
        raise ValueError("precision must be positive semi-definite")
    return sym


@dataclass
class VariableNode:
    id: object
    kind: NodeKind
    mean: object
    precision: np.ndarray
    alpha: float = DEFAULT_STEP_SIZE

    @property
    def dim(self) -> int:
        return tangent_dim(self.mean)


@dataclass
class ConstantNode:
    id: object
    value: object


@dataclass
class MessageTriplet:
    """(linearization mean, tangent information vector, tangent precision)."""

    mean: object
    tau: np.ndarray
    precision: np.ndarray


@dataclass
class Factor:
    id: object
    neighbors: List[object]          # all neighbor ids, constants included
    variables: List[object]          # variable-node ids only, in neighbor order
    model: object
    sqrt_info: np.ndarray
    loss: LossFunction = field(default_factory=LossFunction.trivial)
    alpha: float = DEFAULT_STEP_SIZE


class FactorGraph:
    def __init__(self):
        self.nodes: Dict[object, VariableNode] = {}
        self.constants: Dict[object, ConstantNode] = {}
        self.factors: Dict[object, Factor] = {}
        self.node_factors: Dict[object, List[object]] = {}
        self._factor_to_node: Dict[Tuple[object, object], MessageTriplet] = {}
        self._node_to_factor: Dict[Tuple[object, object], MessageTriplet] = {}
        self._staged_f2n: Dict[Tuple[object, object], MessageTriplet] = {}
        self._staged_n2f: Dict[Tuple[object, object], MessageTriplet] = {}
        self._counter = 0

    # -- construction -------------------------------------------------------

    def _new_id(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}{self._counter}"

    def add_variable(self, kind: NodeKind, mean, precision,
                     node_id=None, alpha: float = DEFAULT_STEP_SIZE):
        node_id = node_id if node_id is not None else self._new_id("n")
        if node_id in self.nodes or node_id in self.constants:
            raise ValueError(f"duplicate node id {node_id!r}")
        expected = _EXPECTED_TYPE.get(kind)
        if expected is not None and not isinstance(mean, expected):
            raise ValueError(f"{kind.value} node needs a {expected.__name__} mean")
        if expected is None:
            mean = np.asarray(mean, dtype=float)
        precision = _check_symmetric_psd(precision)
        dim = tangent_dim(mean)
        if precision.shape != (dim, dim):
            raise ValueError(f"precision shape {precision.shape} does not match tangent dim {dim}")
        self.nodes[node_id] = VariableNode(node_id, kind, mean, precision, alpha)
        self.node_factors[node_id] = []
        return node_id

    def add_constant(self, value, node_id=None):
        node_id = node_id if node_id is not None else self._new_id("c")
        if node_id in self.nodes or node_id in self.constants:
            raise ValueError(f"duplicate node id {node_id!r}")
        self.constants[node_id] = ConstantNode(node_id, value)
        return node_id

    def add_factor(self, model, neighbors: Sequence, sqrt_info: np.ndarray,
                   loss: Optional[LossFunction] = None, alpha: float = DEFAULT_STEP_SIZE,
                   factor_id=None):
        factor_id = factor_id if factor_id is not None else self._new_id("f")
        if factor_id in self.factors:
            raise ValueError(f"duplicate factor id {factor_id!r}")
        variables = []
        for nid in neighbors:
            if nid in self.nodes:
                variables.append(nid)
            elif nid not in self.constants:
                raise ValueError(f"factor {factor_id!r} references unknown node {nid!r}")
        factor = Factor(factor_id, list(neighbors), variables, model,
                        np.asarray(sqrt_info, dtype=float),
                        loss if loss is not None else LossFunction.trivial(), alpha)
        self.factors[factor_id] = factor
        for nid in variables:
            self.node_factors[nid].append(factor_id)
        return factor_id

    def remove_factor(self, factor_id):
        factor = self.factors.pop(factor_id)
        for nid in factor.variables:
            self.node_factors[nid].remove(factor_id)
            self._factor_to_node.pop((factor_id, nid), None)
            self._node_to_factor.pop((nid, factor_id), None)
            self._staged_f2n.pop((factor_id, nid), None)
            self._staged_n2f.pop((nid, factor_id), None)

    def add_prior(self, node_id, mean, precision, alpha: float = DEFAULT_STEP_SIZE,
                  factor_id=None):
        """Attach a unary prior factor with residual boxminus(x, mean) whitened
        by a square root of the given precision."""
        from .sensors import PriorModel

        if node_id not in self.nodes:
            raise ValueError(f"unknown node {node_id!r}")
        precision = _check_symmetric_psd(precision)
        dim = self.nodes[node_id].dim
        if precision.shape != (dim, dim):
            raise ValueError(f"prior precision shape {precision.shape} does not match dim {dim}")
        # eigen square root handles PSD-singular priors that Cholesky rejects
        vals, vecs = np.linalg.eigh(precision)
        sqrt_info = np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
        return self.add_factor(PriorModel(mean), [node_id], sqrt_info,
                               alpha=alpha, factor_id=factor_id)

    # -- evaluation ---------------------------------------------------------

    def neighbor_values(self, factor: Factor) -> List[object]:
        out = []
        for nid in factor.neighbors:
            if nid in self.nodes:
                out.append(self.nodes[nid].mean)
            else:
                out.append(self.constants[nid].value)
        return out

    def factor_weighted_residual(self, factor: Factor) -> np.ndarray:
        r, _ = factor.model.evaluate(self.neighbor_values(factor), with_jacobians=False)
        return factor.sqrt_info @ r

    def energy(self) -> float:
        """Sum over factors of 0.5 * rho(||weighted residual||^2)."""
        total = 0.0
        for factor in self.factors.values():
            r = self.factor_weighted_residual(factor)
            total += 0.5 * loss_eval(factor.loss, float(r @ r))[0]
        return total

    # -- mailboxes ----------------------------------------------------------

    def factor_to_node_message(self, factor_id, node_id) -> Optional[MessageTriplet]:
        """Committed message, or None for the vacuous default."""
        return self._factor_to_node.get((factor_id, node_id))

    def node_to_factor_message(self, node_id, factor_id) -> Optional[MessageTriplet]:
        return self._node_to_factor.get((node_id, factor_id))

    def stage_factor_to_node(self, factor_id, node_id, msg: MessageTriplet):
        self._staged_f2n[(factor_id, node_id)] = msg

    def stage_node_to_factor(self, node_id, factor_id, msg: MessageTriplet):
        self._staged_n2f[(node_id, factor_id)] = msg

    def commit_messages(self):
        self._factor_to_node.update(self._staged_f2n)
        self._node_to_factor.update(self._staged_n2f)
        self._staged_f2n.clear()
        self._staged_n2f.clear()

    def clear_messages(self):
        self._factor_to_node.clear()
        self._node_to_factor.clear()
        self._staged_f2n.clear()
        self._staged_n2f.clear()

    # -- serialization ------------------------------------------------------

    def snapshot(self) -> dict:
        nodes = []
        for n in self.nodes.values():
            nodes.append({
                "id": n.id,
                "kind": n.kind.value,
                "mean": value_to_jsonable(n.mean),
                "precision": n.precision.tolist(),
                "alpha": n.alpha,
            })
        constants = [{"id": c.id, "value": value_to_jsonable(c.value)}
                     for c in self.constants.values()]
        factors = []
        for f in self.factors.values():
            factors.append({
                "id": f.id,
                "neighbors": list(f.neighbors),
                "model": f.model.kind,
                "payload": f.model.payload(),
                "sqrt_info": f.sqrt_info.tolist(),
                "loss": str(f.loss),
                "alpha": f.alpha,
            })
        return {"nodes": nodes, "constants": constants, "factors": factors}

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh, indent=1)

    @classmethod
    def from_snapshot(cls, data: dict) -> "FactorGraph":
        g = cls()
        for n in data["nodes"]:
            g.add_variable(NodeKind(n["kind"]), value_from_jsonable(n["mean"]),
                           np.array(n["precision"]), node_id=n["id"], alpha=n["alpha"])
        for c in data["constants"]:
            g.add_constant(value_from_jsonable(c["value"]), node_id=c["id"])
        for f in data["factors"]:
            model = MODEL_REGISTRY[f["model"]].from_payload(f["payload"])
            g.add_factor(model, f["neighbors"], np.array(f["sqrt_info"]),
                         loss=LossFunction.parse(f["loss"]), alpha=f["alpha"],
                         factor_id=f["id"])
        return g

    @classmethod
    def load_json(cls, path) -> "FactorGraph":
        with open(path) as fh:
            return cls.from_snapshot(json.load(fh))

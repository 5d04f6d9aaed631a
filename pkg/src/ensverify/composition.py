"""Composite networks: side-by-side pairs and averaging ensembles."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from .nn import Affine, Network, Relu, load_network, save_network


@dataclass(frozen=True, eq=False)
class CompositeNetwork:
    network: Network
    member_ids: Tuple[str, ...]
    slices: Tuple[Tuple[int, int], ...]
    aggregation: str  # "side_by_side" or "average"

    def member_slice(self, i: int) -> slice:
        return slice(*self.slices[i])


def _check_members(members: Sequence[Network]) -> None:
    if not members:
        raise ValueError("need at least one member")
    first = members[0]
    kinds = [type(l) for l in first.layers]
    for i, m in enumerate(members[1:], start=1):
        if m.input_dim != first.input_dim:
            raise ValueError(f"member {i}: input_dim {m.input_dim} != {first.input_dim}")
        if [type(l) for l in m.layers] != kinds:
            raise ValueError(f"member {i}: layer-type sequence differs from member 0")


def compose_side_by_side(members: Sequence[Network], member_ids: Optional[Sequence[str]] = None) -> CompositeNetwork:
    """One network that evaluates every member on a shared input.

    The output is the concatenation of the member logit vectors.
    """
    members = list(members)
    _check_members(members)
    ids = tuple(member_ids) if member_ids is not None else tuple(str(i) for i in range(len(members)))
    if len(ids) != len(members):
        raise ValueError("one id per member required")
    layers: list = []
    shared = True  # before the first affine layer every member sees the same vector
    for depth, layer in enumerate(members[0].layers):
        if isinstance(layer, Relu):
            layers.append(Relu())
            continue
        blocks = [m.layers[depth] for m in members]
        if shared:
            w = np.vstack([b.weights for b in blocks])
            shared = False
        else:
            w = block_diag(*[b.weights for b in blocks])
        layers.append(Affine(w, np.concatenate([b.bias for b in blocks])))
    net = Network(tuple(layers), members[0].input_dim)
    if shared:
        raise ValueError("members without affine layers cannot be composed")
    slices, start = [], 0
    for m in members:
        slices.append((start, start + m.output_dim))
        start += m.output_dim
    return CompositeNetwork(net, ids, tuple(slices), "side_by_side")


def compose_average_ensemble(members: Sequence[Network], member_ids: Optional[Sequence[str]] = None) -> CompositeNetwork:
    """Side-by-side body followed by a layer averaging the member logits."""
    members = list(members)
    _check_members(members)
    r = members[0].output_dim
    if any(m.output_dim != r for m in members):
        raise ValueError("members must share output_dim")
    body = compose_side_by_side(members, member_ids)
    k = len(members)
    avg = np.zeros((r, k * r))
    for i in range(k):
        avg[np.arange(r), i * r + np.arange(r)] = 1.0 / k
    net = Network(body.network.layers + (Affine(avg, np.zeros(r)),), body.network.input_dim)
    return CompositeNetwork(net, body.member_ids, ((0, r),), "average")


def save_composite(comp: CompositeNetwork, net_path) -> Path:
    """Write the network file plus a ``<name>.json`` sidecar; returns the sidecar path."""
    net_path = Path(net_path)
    save_network(comp.network, net_path)
    sidecar = net_path.with_suffix(net_path.suffix + ".json")
    sidecar.write_text(json.dumps({
        "network": net_path.name,
        "aggregation": comp.aggregation,
        "member_ids": list(comp.member_ids),
        "slices": [list(s) for s in comp.slices],
    }, indent=2) + "\n")
    return sidecar


def load_composite(net_path) -> CompositeNetwork:
    net_path = Path(net_path)
    meta = json.loads(net_path.with_suffix(net_path.suffix + ".json").read_text())
    return CompositeNetwork(
        load_network(net_path),
        tuple(meta["member_ids"]),
        tuple(tuple(s) for s in meta["slices"]),
        meta["aggregation"],
    )

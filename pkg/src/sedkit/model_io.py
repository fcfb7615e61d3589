"""Conversion between networks and named checkpoint arrays."""

from __future__ import annotations

import numpy as np

from .autodiff import Var
from .clustering import ClusterModel
from .embedding import EmbedNet
from .enhancer import DenoiseNet
from .ensemble import EnsembleModel, GateNet
from .layers import GATE_NAMES, GruLayerParams


def net_to_arrays(net, prefix="") -> dict[str, np.ndarray]:
    return {name: var.value.copy() for name, var in net.named(prefix).items()}


def _gru_from(arrays, prefix):
    kw = {}
    for g in GATE_NAMES:
        kw[f"W_{g}"] = Var(arrays[f"{prefix}W_{g}"].copy(), requires_grad=True)
        kw[f"b_{g}"] = Var(arrays[f"{prefix}b_{g}"].copy(), requires_grad=True)
    return GruLayerParams(**kw)


def embed_from_arrays(arrays, prefix="") -> EmbedNet:
    return EmbedNet(_gru_from(arrays, prefix + "l1."),
                    _gru_from(arrays, prefix + "l2."))


def denoise_from_arrays(arrays, prefix="") -> DenoiseNet:
    return DenoiseNet(_gru_from(arrays, prefix + "l1."),
                      _gru_from(arrays, prefix + "l2."),
                      Var(arrays[prefix + "out.W"].copy(), requires_grad=True),
                      Var(arrays[prefix + "out.b"].copy(), requires_grad=True))


def gate_from_arrays(arrays, prefix="", lam=1.0) -> GateNet:
    return GateNet(embed_from_arrays(arrays, prefix + "embed."),
                   Var(arrays[prefix + "cls.W"].copy(), requires_grad=True),
                   Var(arrays[prefix + "cls.b"].copy(), requires_grad=True),
                   lam)


def ensemble_from_arrays(arrays, K, cluster: ClusterModel | None = None,
                         lam=1.0) -> EnsembleModel:
    gate_net = gate_from_arrays(arrays, "gate.", lam=lam)
    specs = [denoise_from_arrays(arrays, f"spec{k}.") for k in range(K)]
    return EnsembleModel(gate_net, specs, cluster)

"""Seeded minibatch-SGD training of identical-architecture classifier pools."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import Dataset, Splits
from .nn import Affine, Network, Relu, batch_parameter_gradients, classify_batch, cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    hidden: Tuple[int, ...] = (12,)
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")


def init_network(widths: Sequence[int], rng: np.random.Generator) -> Network:
    layers: list = []
    for i in range(len(widths) - 1):
        bound = 1.0 / np.sqrt(widths[i])
        w = rng.uniform(-bound, bound, size=(widths[i + 1], widths[i]))
        b = rng.uniform(-bound, bound, size=widths[i + 1])
        layers.append(Affine(w, b))
        if i < len(widths) - 2:
            layers.append(Relu())
    return Network(tuple(layers), widths[0])


def train_network(splits: Union[Splits, Dataset], config: TrainConfig, history: Optional[list] = None) -> Network:
    """Train one network; the result depends only on the data and ``config``.

    If ``history`` is a list, the mean training loss after every epoch is
    appended to it.
    """
    train = splits.train if isinstance(splits, Splits) else splits
    if len(train) == 0:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    widths = [train.dim, *config.hidden, train.num_classes]
    net = init_network(widths, rng)
    params = [[l.weights.copy(), l.bias.copy()] if isinstance(l, Affine) else None for l in net.layers]
    X, y = train.images, train.labels
    lr = config.learning_rate
    n = len(train)

    def rebuild():
        return Network(
            tuple(Affine(p[0], p[1]) if p is not None else Relu() for p in params), net.input_dim
        )

    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads = batch_parameter_gradients(rebuild(), X[idx], y[idx])
            for p, g in zip(params, grads):
                if p is not None:
                    p[0] -= lr * g[0]
                    p[1] -= lr * g[1]
        if history is not None:
            history.append(cross_entropy(rebuild(), X, y))
    return rebuild()


def _train_one(args):
    splits, config = args
    return train_network(splits, config)


def train_pool(splits: Splits, config: TrainConfig, n: int, base_seed: int = 0, workers: int = 1) -> List[Network]:
    """Train ``n`` members; member ``i`` uses seed ``base_seed + i``."""
    if n < 2:
        raise ValueError("a pool needs at least two networks")
    configs = [TrainConfig(config.hidden, config.epochs, config.batch_size, config.learning_rate, base_seed + i)
               for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_train_one, [(splits, c) for c in configs]))
    return [train_network(splits, c) for c in configs]


def accuracy(model: Union[Network, Sequence[Network]], dataset: Dataset) -> float:
    """Fraction of ``dataset`` classified correctly.

    A sequence of networks is evaluated as its averaged-logit ensemble.
    """
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    if not isinstance(model, Network):
        from .composition import compose_average_ensemble

        model = compose_average_ensemble(list(model)).network
    return float(np.mean(classify_batch(model, dataset.images) == dataset.labels))

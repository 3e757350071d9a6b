import collections
from pathlib import Path

import numpy as np


class Parameter():
    def __init__(self, value: np.ndarray, trainable: bool = True):
        self.value = value
        self.trainable = trainable


class ParameterSet(collections.UserDict):
    """
    Named model parameters, keyed by dotted names such as
    ``"csg.down23.0.weight"``. Values are float64 arrays; conv weights have
    shape (out_c, in_c, k, k) and biases shape (1, out_c, 1, 1).
    """
    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.data:
            raise KeyError(f"parameter {name!r} already exists")
        self.data[name] = Parameter(np.ascontiguousarray(value, dtype=np.float64), trainable)


    def add_conv(self, prefix: str, out_c: int, in_c: int, k: int,
                 rng: np.random.Generator, scale: float = 1.0) -> None:
        """
        Add `prefix.weight` and `prefix.bias` for a k x k convolution.

        Weights are drawn uniformly from ``[-b, b]`` with
        ``b = scale / sqrt(in_c * k * k)``; biases start at zero.
        """
        bound = scale / np.sqrt(in_c * k * k)
        self.add(f"{prefix}.weight", rng.uniform(-bound, bound, size=(out_c, in_c, k, k)))
        self.add(f"{prefix}.bias", np.zeros((1, out_c, 1, 1)))


    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.data.items()}


    def n_parameters(self, trainable_only: bool = True) -> int:
        return int(sum(p.value.size for p in self.data.values() if p.trainable or not trainable_only))


    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, p in self.data.items():
            out.add(name, p.value.copy(), p.trainable)
        return out


    def save(self, path: str | Path, config_text: str | None = None) -> None:
        """
        Write all parameters to an ``.npz`` snapshot. The run configuration, if
        given, is stored as text under the key ``"__config__"``.
        """
        arrays = self.arrays()
        if config_text is not None:
            arrays["__config__"] = np.array(config_text)
        with open(path, "wb") as f:
            np.savez(f, **arrays)


    @classmethod
    def load(cls, path: str | Path) -> tuple["ParameterSet", str | None]:
        out = cls()
        config_text = None
        with np.load(path, allow_pickle=False) as npz:
            for name in npz.files:
                if name == "__config__":
                    config_text = str(npz[name])
                else:
                    out.add(name, npz[name])
        return out, config_text

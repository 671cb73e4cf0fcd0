import logging
from dataclasses import dataclass, field

import numpy as np

from src.core.tensor import Tape
from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HookPoint:
    """A place where noise may be injected: the input of layers[position]."""
    id: int
    position: int
    label: str


@dataclass
class ForwardResult:
    logits: object
    input: object
    hooks: dict = field(default_factory=dict)    # hook id -> pre-noise activation node h_t
    params: dict = field(default_factory=dict)   # "i.name" -> parameter node


class ForwardContext:
    def __init__(self, tape, model, train, rng, update_stats):
        self.tape = tape
        self.train = train
        self.rng = rng
        self.update_stats = update_stats
        self.param_nodes = {}
        self._index = {id(layer): i for i, layer in enumerate(model.layers)}

    def param(self, layer, name):
        key = f"{self._index[id(layer)]}.{name}"
        node = self.tape.leaf(layer.params[name], name=key)
        self.param_nodes[key] = node
        return node


class Model:
    def __init__(self, name, layers, hook_positions, num_classes, input_shape, noise=None, hook_labels=None):
        self.name = name
        self.layers = list(layers)
        self.num_classes = num_classes
        self.input_shape = tuple(input_shape)
        self.noise = noise
        hook_labels = hook_labels or [f"hook{i}" for i in range(len(hook_positions))]

        positions = sorted(hook_positions)
        if list(hook_positions) != positions or len(set(positions)) != len(positions):
            raise ShapeError("hook positions must be strictly increasing")
        for pos in positions:
            if not 0 <= pos < len(self.layers):
                raise ShapeError(f"hook position {pos} is outside the layer sequence (0..{len(self.layers) - 1})")
        self.hooks = [HookPoint(i, pos, label) for i, (pos, label) in enumerate(zip(positions, hook_labels))]
        self._hook_at = {h.position: h.id for h in self.hooks}

    def parameters(self):
        return {f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.params.items()}

    def num_parameters(self):
        return int(sum(arr.size for arr in self.parameters().values()))

    @property
    def dtype(self):
        for arr in self.parameters().values():
            return arr.dtype
        return np.dtype(np.float64)

    def first_conv_hook(self):
        """Hook id of the first hook that is not on the raw input."""
        for hook in self.hooks:
            if hook.position > 0:
                return hook.id
        return self.hooks[0].id if self.hooks else None

    def forward(self, tape, x, train=False, hook_fn=None, rng=None, update_stats=True):
        """
        Runs the layer sequence on `tape`. `x` may be an array or an existing node.
        hook_fn(hook_id, tape, h) -> node is only called in training mode;
        eval mode is always noise-free.
        """
        if not hasattr(x, "tape"):
            x = tape.leaf(np.asarray(x, dtype=self.dtype), name="x")
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"{self.name} expects input (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")

        ctx = ForwardContext(tape, self, train, rng, update_stats)
        result = ForwardResult(logits=None, input=x)
        h = x
        for i, layer in enumerate(self.layers):
            hook_id = self._hook_at.get(i)
            if hook_id is not None:
                result.hooks[hook_id] = h
                if train and hook_fn is not None:
                    h = hook_fn(hook_id, tape, h)
            h = layer.forward(tape, h, ctx)
        result.logits = h
        result.params = ctx.param_nodes
        return result

    def conv_positions(self):
        return [i for i, layer in enumerate(self.layers) if layer.kind == "Conv2d"]

    def layer_output(self, x, position):
        """Eval-mode output array of layers[position] for the batch `x`; noise-free."""
        if not 0 <= position < len(self.layers):
            raise ShapeError(f"layer position {position} is outside 0..{len(self.layers) - 1}")
        tape = Tape()
        h = tape.leaf(np.asarray(x, dtype=self.dtype), name="x")
        ctx = ForwardContext(tape, self, train=False, rng=None, update_stats=False)
        for layer in self.layers[:position + 1]:
            h = layer.forward(tape, h, ctx)
        return h.value

    def predict(self, x, batch_size=256):
        """Eval-mode logits for a batch array, evaluated in fixed-size chunks."""
        chunks = []
        for start in range(0, len(x), batch_size):
            tape = Tape()
            chunks.append(self.forward(tape, x[start:start + batch_size]).logits.value)
        return np.concatenate(chunks, axis=0)

    def summary(self):
        lines = [f"{self.name}: {self.num_parameters()} parameters, {len(self.hooks)} hooks"]
        for i, layer in enumerate(self.layers):
            marks = [h.label for h in self.hooks if h.position == i]
            prefix = f"  [{', '.join(marks)}]\n" if marks else ""
            lines.append(f"{prefix}  {i:2d} {layer!r}")
        return "\n".join(lines)

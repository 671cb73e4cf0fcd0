"""
Reverse-mode autodiff tape over numpy arrays.

A Tape owns every Node created during one forward pass. Ops append an OpRecord
holding the ids of their inputs and a closure mapping the output adjoint to the
input adjoints. Node ids grow monotonically, so the record list is already in
topological order and backward is a single reverse sweep.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from src.utils.errors import NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)


class Node:
    __slots__ = ("id", "value", "name", "tape")

    def __init__(self, node_id, value, tape, name=None):
        self.id = node_id
        self.value = value
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node(id={self.id}{label}, shape={self.value.shape})"


@dataclass
class OpRecord:
    kind: str
    inputs: tuple
    output: int
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradientMap(dict):
    """node id -> gradient array. Nodes can be used as keys directly."""

    def __getitem__(self, key):
        if isinstance(key, Node):
            key = key.id
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Node):
            key = key.id
        return super().__contains__(key)


def check_finite(value, where):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{where} produced non-finite values")


class Tape:
    def __init__(self):
        self.nodes = []
        self.records = []

    def __len__(self):
        return len(self.nodes)

    def _new_node(self, value, name=None):
        node = Node(len(self.nodes), value, self, name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None, shape=None):
        """Registers an input or parameter. `shape` is the declared shape, if any."""
        value = np.asarray(value)
        if shape is not None and tuple(value.shape) != tuple(shape):
            raise ShapeError(f"input {name or '?'} has shape {value.shape}, declared {tuple(shape)}")
        check_finite(value, f"input {name or '?'}")
        return self._new_node(value, name)

    def record(self, kind, inputs, value, backward):
        for node in inputs:
            if node.tape is not self:
                raise TapeError(f"{kind}: input {node!r} belongs to another tape")
        check_finite(value, kind)
        out = self._new_node(value)
        self.records.append(OpRecord(kind, tuple(n.id for n in inputs), out.id, backward))
        return out

    def backward(self, loss):
        """
        Returns dLoss/dn for every node on the tape.
        Nodes that do not influence the loss get zero tensors.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise TapeError("loss node was not recorded on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")

        grads = {loss.id: np.ones_like(loss.value)}
        for rec in reversed(self.records):
            if rec.output > loss.id:
                continue
            g_out = grads.get(rec.output)
            if g_out is None:
                continue
            for node_id, g_in in zip(rec.inputs, rec.backward(g_out)):
                if g_in is None:
                    continue
                if node_id in grads:
                    grads[node_id] = grads[node_id] + g_in
                else:
                    grads[node_id] = g_in

        result = GradientMap()
        for node in self.nodes:
            g = grads.get(node.id)
            if g is None:
                g = np.zeros_like(node.value)
            elif g.shape != node.value.shape:
                raise ShapeError(f"gradient shape {g.shape} != value shape {node.value.shape} for {node!r}")
            result[node.id] = g
        return result


def forward(graph_fn, inputs, shapes=None, tape=None):
    """
    Evaluates graph_fn(tape, **input_nodes) on a (new) tape.
    `shapes` optionally declares the expected shape of each named input.
    Returns the output node and the tape that recorded it.
    """
    tape = tape if tape is not None else Tape()
    shapes = shapes or {}
    nodes = {name: tape.leaf(value, name=name, shape=shapes.get(name)) for name, value in inputs.items()}
    return graph_fn(tape, **nodes), tape


def backward(tape, loss):
    return tape.backward(loss)

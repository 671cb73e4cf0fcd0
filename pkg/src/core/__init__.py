from src.core.tensor import GradientMap, Node, Tape, backward, forward

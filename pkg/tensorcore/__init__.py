from tensorcore.tensor import DiffTensor, Parameter, as_tensor, backward
from tensorcore.module import MLP, Linear, Module, pointwise

import numpy as np


def cumsum(a, axis=None):
    a = np.asarray(a)
    if axis is None:
        a = a.reshape(-1)
        axis = 0
    return np.add.accumulate(a, axis=axis)

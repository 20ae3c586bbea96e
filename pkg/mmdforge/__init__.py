import random

import numpy as np

__version__ = "0.1.0"

import mmdforge.errors
import mmdforge.tensor_engine
import mmdforge.kernels
import mmdforge.mmd
import mmdforge.networks
import mmdforge.dataset
import mmdforge.training
import mmdforge.evaluation


def set_seed(seed):
    r"""
    Sets the legacy global seeds of :obj:`random.seed` and
    :obj:`numpy.random.seed`, and :obj:`torch.manual_seed` when torch is
    installed. Library operations draw from explicitly seeded
    :class:`numpy.random.Generator` streams; this only pins third-party
    code that uses the global state.

    Use the function in following way:

    .. code-block:: python

        import mmdforge
        mmdforge.set_seed(1)

    Args:
        seed (int): The seed value to generate random numbers.

    """
    random.seed(seed)
    np.random.seed(seed)
    try:
        import torch
    except ImportError:
        return
    torch.manual_seed(seed)

import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def randomize_params(model, seed=1, std=0.05):
    """Fresh models start with a zero residual head (output == exact bicubic),
    so tests probing information flow need a generic parameter point."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(0.0, std, generator=gen)
    return model

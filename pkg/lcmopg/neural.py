"""Neural substrate: MLPs, cosine embedding, Adam with a finiteness guard, and the two action heads.

Gradients come from torch autograd. Everything runs on CPU in float64 so that
finite-difference checks and bit-exact checkpoints hold.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn
from torch.distributions import Beta

from lcmopg.errors import CheckpointError, ContractViolation, NonFiniteError

DTYPE = torch.float64
INIT_STD = 0.2
BETA_CLAMP = 1e-6
CHECKPOINT_VERSION = 1

ACTIVATIONS: dict[str, type[nn.Module]] = {
    "selu": nn.SELU,
    "tanh": nn.Tanh,
    "identity": nn.Identity,
}


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def init_normal_(module: nn.Module, generator: torch.Generator, std: float = INIT_STD) -> None:
    """Draw every parameter (weights and biases) from N(0, std^2)."""
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * std)


class Mlp(nn.Module):
    """Affine layers, each followed by its scheduled activation."""

    def __init__(self, widths: list[int], activations: list[str]) -> None:
        super().__init__()
        if len(widths) < 2:
            raise ContractViolation("An MLP needs at least input and output widths")
        if len(activations) != len(widths) - 1:
            raise ContractViolation("One activation per affine layer is required")
        unknown = set(activations) - ACTIVATIONS.keys()
        if unknown:
            raise ContractViolation(f"Unknown activation(s): {sorted(unknown)}")
        self.widths = [int(w) for w in widths]
        self.activations = list(activations)
        layers: list[nn.Module] = []
        for fan_in, fan_out, act in zip(self.widths[:-1], self.widths[1:], self.activations):
            layers.append(nn.Linear(fan_in, fan_out, dtype=DTYPE))
            layers.append(ACTIVATIONS[act]())
        self.net = nn.Sequential(*layers)

    @property
    def in_features(self) -> int:
        return self.widths[0]

    @property
    def out_features(self) -> int:
        return self.widths[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def config(self) -> dict[str, Any]:
        return {"widths": list(self.widths), "activations": list(self.activations)}


def mlp_forward(net: Mlp, x) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=DTYPE)
    if x.shape[-1] != net.in_features:
        raise ContractViolation(f"Input width {x.shape[-1]} does not match MLP input width {net.in_features}")
    return net(x)


def trunk_widths(in_features: int, width: int, depth: int, out_features: int) -> tuple[list[int], list[str]]:
    """Widths/activations of a depth-layer MLP with SELU hidden activations and a linear output."""
    if depth < 1:
        raise ContractViolation("depth must be >= 1")
    widths = [in_features] + [width] * (depth - 1) + [out_features]
    return widths, ["selu"] * (depth - 1) + ["identity"]


def cosine_embed(c, K: int) -> torch.Tensor:
    """(cos(pi c_j), ..., cos(K pi c_j)) concatenated over j; leading batch axes are kept."""
    if K < 1:
        raise ContractViolation("K must be >= 1")
    c = torch.as_tensor(c, dtype=DTYPE)
    if torch.any(c < 0) or torch.any(c > 1):
        raise ContractViolation("cosine_embed expects inputs inside [0, 1]")
    harmonics = torch.arange(1, K + 1, dtype=DTYPE) * math.pi
    out = torch.cos(c.unsqueeze(-1) * harmonics)
    return out.reshape(*c.shape[:-1], c.shape[-1] * K)


class AdamOptimizer:
    """torch Adam that refuses to step on non-finite gradients."""

    def __init__(
        self,
        params,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.params = [p for p in params]
        self.optimizer = torch.optim.Adam(self.params, lr=lr, betas=betas, eps=eps)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=False)

    def step(self, grads: list[torch.Tensor] | None = None) -> None:
        if grads is not None:
            if len(grads) != len(self.params):
                raise ContractViolation("One gradient per parameter is required")
            for p, g in zip(self.params, grads):
                if g.shape != p.shape:
                    raise ContractViolation(f"Gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
                p.grad = g.detach().clone()
        for i, p in enumerate(self.params):
            if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
                raise NonFiniteError("Non-finite gradient; Adam step rejected", {"parameter_index": i})
        self.optimizer.step()
        self.step_count += 1

    def state_dict(self) -> dict:
        return self.optimizer.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.optimizer.load_state_dict(state)


def adam_step(optimizer: AdamOptimizer, grads: list[torch.Tensor] | None = None) -> None:
    optimizer.step(grads)


@dataclass
class BetaHeadOutput:
    alpha: torch.Tensor
    beta: torch.Tensor


@dataclass
class CategoricalHeadOutput:
    logits: torch.Tensor


def beta_head_from_raw(raw: torch.Tensor, offset: float = 1.0) -> BetaHeadOutput:
    """Split raw outputs in two halves and map each through offset + softplus."""
    dim = raw.shape[-1] // 2
    return BetaHeadOutput(
        alpha=offset + nn.functional.softplus(raw[..., :dim]),
        beta=offset + nn.functional.softplus(raw[..., dim:]),
    )


def beta_log_prob(head: BetaHeadOutput, action_unit) -> torch.Tensor:
    """Sum over action dimensions of log Beta densities; actions clamped into [d, 1-d]."""
    a = torch.as_tensor(action_unit, dtype=head.alpha.dtype).clamp(BETA_CLAMP, 1.0 - BETA_CLAMP)
    return Beta(head.alpha, head.beta).log_prob(a).sum(dim=-1)


def beta_mean(head: BetaHeadOutput) -> torch.Tensor:
    return head.alpha / (head.alpha + head.beta)


def beta_sample(head: BetaHeadOutput, rng: np.random.Generator) -> np.ndarray:
    alpha = head.alpha.detach().cpu().numpy()
    beta = head.beta.detach().cpu().numpy()
    return rng.beta(alpha, beta)


def categorical_probs(head: CategoricalHeadOutput) -> torch.Tensor:
    return torch.softmax(head.logits, dim=-1)


def categorical_log_prob(head: CategoricalHeadOutput, action) -> torch.Tensor:
    idx = torch.as_tensor(action, dtype=torch.long)
    logp = head.logits - torch.logsumexp(head.logits, dim=-1, keepdim=True)
    return logp.gather(-1, idx.unsqueeze(-1)).squeeze(-1)


def categorical_sample(head: CategoricalHeadOutput, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling on softmax probabilities; one uniform draw per row."""
    probs = categorical_probs(head).detach().cpu().numpy()
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(size=cdf.shape[:-1] + (1,))
    idx = (u > cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def categorical_sample_rows(head: CategoricalHeadOutput, rngs: list[np.random.Generator]) -> np.ndarray:
    """Like categorical_sample on a [B, n] head, but row b draws from rngs[b]."""
    probs = categorical_probs(head).detach().cpu().numpy()
    cdf = np.cumsum(probs, axis=-1)
    u = np.array([[rng.random()] for rng in rngs])
    return np.minimum((u > cdf).sum(axis=-1), probs.shape[-1] - 1)


def beta_sample_rows(head: BetaHeadOutput, rngs: list[np.random.Generator]) -> np.ndarray:
    alpha = head.alpha.detach().cpu().numpy()
    beta = head.beta.detach().cpu().numpy()
    return np.stack([rng.beta(a, b) for rng, a, b in zip(rngs, alpha, beta)])


def categorical_argmax(head: CategoricalHeadOutput) -> np.ndarray:
    # torch.argmax returns the first maximal index
    return torch.argmax(head.logits, dim=-1).cpu().numpy()


def check_finite(tensor: torch.Tensor, what: str) -> None:
    if not torch.all(torch.isfinite(tensor)):
        raise NonFiniteError(f"Non-finite values in {what}", {"what": what, "shape": tuple(tensor.shape)})


def save_checkpoint(path: Path, kind: str, config: dict[str, Any], state_dict: dict[str, torch.Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "state_dict": {k: v.detach().clone() for k, v in state_dict.items()},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: Path, kind: str) -> dict[str, Any]:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format in {path}")
    if payload.get("kind") != kind:
        raise CheckpointError(f"Checkpoint {path} holds a {payload.get('kind')!r}, expected {kind!r}")
    return payload

"""Differentiable softmax-MLP policy with score-function gradients.

The network is ReLU hidden layers plus a softmax head, computed in
float64 with max-subtraction stabilization. Gradients of
log pi(a|x) are hand-derived backprop; updates are plain gradient
ascent on a batch-averaged buffer so the step size is batch-size
independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import DataError, StateError
from .rngutil import make_rng


class SoftmaxMlpPolicy:
    """pi_theta(a|x): MLP with layer sizes [context_dim, *hidden, num_arms].

    Hidden layers use He-uniform initialization; the output layer starts
    at zero so the initial policy is exactly uniform.
    """

    def __init__(
        self,
        context_dim: int,
        num_arms: int,
        hidden: Sequence[int] = (256, 256),
        seed: int = 0,
    ):
        if context_dim < 1 or num_arms < 2:
            raise DataError("need context_dim >= 1 and num_arms >= 2")
        self.layer_sizes = [context_dim, *hidden, num_arms]
        rng = make_rng(seed, 3)
        self.weights = []
        self.biases = []
        for li in range(len(self.layer_sizes) - 1):
            fan_in = self.layer_sizes[li]
            fan_out = self.layer_sizes[li + 1]
            if li == len(self.layer_sizes) - 2:
                w = np.zeros((fan_out, fan_in))
            else:
                limit = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def context_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_arms(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # -- parameter vector ----------------------------------------------------

    def get_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise DataError(
                f"parameter vector has length {flat.size}, expected {self.num_params}"
            )
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = flat[pos : pos + b.size]
            pos += b.size

    # -- forward -------------------------------------------------------------

    def _forward(self, X: np.ndarray):
        """Returns (activations per layer, pre-activations, probs)."""
        acts = [X]
        zs = []
        h = X
        last = len(self.weights) - 1
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            zs.append(z)
            if li < last:
                h = np.maximum(z, 0.0)
                acts.append(h)
        logits = zs[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        probs = expd / expd.sum(axis=1, keepdims=True)
        return acts, zs, probs

    def action_probs_batch(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        if contexts.shape[1] != self.context_dim:
            raise DataError(
                f"context dim {contexts.shape[1]} != policy dim {self.context_dim}"
            )
        return self._forward(contexts)[2]

    def action_probs(self, context: np.ndarray) -> np.ndarray:
        return self.action_probs_batch(np.asarray(context, dtype=np.float64))[0]

    def log_prob(self, context: np.ndarray, action: int) -> float:
        context = np.atleast_2d(np.asarray(context, dtype=np.float64))
        _, zs, _ = self._forward(context)
        logits = zs[-1][0]
        shifted = logits - logits.max()
        return float(shifted[action] - np.log(np.exp(shifted).sum()))

    def sample_action(self, context: np.ndarray, rng) -> Tuple[int, float]:
        """Draw an arm; returns (arm, probability of that arm)."""
        probs = self.action_probs(context)
        arm = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        arm = min(arm, self.num_arms - 1)
        return arm, float(probs[arm])

    def sample_actions_batch(self, contexts: np.ndarray, rng) -> np.ndarray:
        """One arm per row, drawn from the row's action distribution."""
        probs = self.action_probs_batch(contexts)
        u = rng.random(probs.shape[0])
        cum = np.cumsum(probs, axis=1)
        arms = (cum <= u[:, None]).sum(axis=1)
        return np.minimum(arms, self.num_arms - 1).astype(np.int64)

    # -- score gradients -------------------------------------------------------

    def _score_gradient_batch(
        self, contexts: np.ndarray, actions: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        """sum_i weights[i] * grad_theta log pi(actions[i] | contexts[i]), flat."""
        X = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        acts, zs, probs = self._forward(X)
        n = X.shape[0]
        delta = -probs * weights[:, None]
        delta[np.arange(n), actions] += weights
        grads = []
        for li in range(len(self.weights) - 1, -1, -1):
            grads.append((delta.T @ acts[li], delta.sum(axis=0)))
            if li > 0:
                delta = (delta @ self.weights[li]) * (zs[li - 1] > 0.0)
        parts = []
        for gw, gb in reversed(grads):
            parts.append(gw.ravel())
            parts.append(gb)
        return np.concatenate(parts)

    def grad_log_prob(self, context: np.ndarray, action: int) -> np.ndarray:
        return self._score_gradient_batch(
            np.asarray(context, dtype=np.float64),
            np.array([action]),
            np.ones(1),
        )

    # -- checkpointing ---------------------------------------------------------

    def save(self, path) -> None:
        payload = {"layer_sizes": self.layer_sizes, "params": self.get_params().tolist()}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload) + "\n")

    @classmethod
    def load(cls, path) -> "SoftmaxMlpPolicy":
        with open(path, encoding="utf-8") as fh:
            payload = json.loads(fh.read())
        sizes = payload["layer_sizes"]
        policy = cls(sizes[0], sizes[-1], hidden=tuple(sizes[1:-1]))
        policy.set_params(np.array(payload["params"], dtype=np.float64))
        return policy


@dataclass
class GradientBuffer:
    """Accumulated flat score gradient plus the sample counter used to
    batch-average updates."""

    gradient: np.ndarray
    count: int = 0

    @classmethod
    def for_policy(cls, policy: SoftmaxMlpPolicy) -> "GradientBuffer":
        return cls(gradient=np.zeros(policy.num_params))

    def reset(self) -> None:
        self.gradient[...] = 0.0
        self.count = 0


def _check_buffer(policy: SoftmaxMlpPolicy, buffer: GradientBuffer) -> None:
    if buffer.gradient.shape != (policy.num_params,):
        raise DataError("gradient buffer does not match the policy parameter count")


def accumulate_score_gradient(
    policy: SoftmaxMlpPolicy,
    buffer: GradientBuffer,
    context: np.ndarray,
    action: int,
    scalar_weight: float,
) -> None:
    """buffer += grad log pi(action|context) * scalar_weight; counter += 1."""
    _check_buffer(policy, buffer)
    buffer.gradient += policy._score_gradient_batch(
        np.asarray(context, dtype=np.float64),
        np.array([action]),
        np.array([scalar_weight], dtype=np.float64),
    )
    buffer.count += 1


def accumulate_score_gradient_batch(
    policy: SoftmaxMlpPolicy,
    buffer: GradientBuffer,
    contexts: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
) -> None:
    """Batched equivalent of repeated single-sample accumulation."""
    _check_buffer(policy, buffer)
    actions = np.asarray(actions, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    buffer.gradient += policy._score_gradient_batch(contexts, actions, weights)
    buffer.count += actions.size


def apply_update(
    policy: SoftmaxMlpPolicy, buffer: GradientBuffer, alpha: float
) -> float:
    """theta += alpha * (buffer / counter); zeroes the buffer.

    Returns the euclidean norm of the averaged gradient.
    """
    _check_buffer(policy, buffer)
    if buffer.count == 0:
        raise StateError("apply_update called with an empty gradient buffer")
    step = buffer.gradient / buffer.count
    policy.set_params(policy.get_params() + alpha * step)
    buffer.reset()
    return float(np.linalg.norm(step))

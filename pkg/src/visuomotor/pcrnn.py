"""Leaky RNN with hidden causes, driven by prediction-error feedback.

The network keeps two internal variables: a dynamic hidden state ``h`` and a
static hidden-causes vector ``c``. The recurrent weights form a three-way
tensor factored into ``W_p`` (past state -> factor), ``W_f`` (factor -> next
state) and ``W_c`` (causes -> factor), so the causes select which recurrent
dynamics the state follows. A readout ``W_out`` maps the state to the output
space.

Top-down pass (prediction), one step:

    h_t = (1 - 1/tau) h*_{t-1} + (1/tau) W_f ((W_c^T c_{t-1}) * (W_p^T tanh(h*_{t-1})))
    x_t = W_out tanh(h_t)

Bottom-up pass (inference), given a target x*_t:

    eps_t  = x_t - x*_t
    h*_t   = h_t - alpha_h W_out^T eps_t
    eps'_t = h_t - h*_t
    c_t    = c_{t-1} - alpha_c W_c ((W_f^T eps'_t) * (W_p^T tanh(h*_{t-1})))

Weight learning uses per-step outer-product rules built from the same local
quantities (see ``local_update``). All feedback reuses the top-down weights;
the updates are deliberately the published approximate forms. Setting
``exact_grad=True`` where offered switches in the missing tanh'/1/tau factors
for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LearningRates:
    """Inference step sizes and weight learning rates."""

    alpha_h: float = 0.1
    alpha_c: float = 0.01
    lambda_out: float = 1e-3
    lambda_p: float = 1e-3
    lambda_f: float = 1e-3
    lambda_c: float = 1e-3

    def __post_init__(self):
        for name in ("alpha_h", "alpha_c", "lambda_out", "lambda_p", "lambda_f", "lambda_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class PcrnnParams:
    """All learnable weights plus the fixed hyperparameters.

    Shapes: W_p (n, d), W_f (n, d), W_c (p, d), W_out (out_dim, n).
    """

    n: int
    p: int
    d: int
    out_dim: int
    tau: float
    W_p: np.ndarray
    W_f: np.ndarray
    W_c: np.ndarray
    W_out: np.ndarray

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        expected = {
            "W_p": (self.n, self.d),
            "W_f": (self.n, self.d),
            "W_c": (self.p, self.d),
            "W_out": (self.out_dim, self.n),
        }
        for name, shape in expected.items():
            w = getattr(self, name)
            if w.shape != shape:
                raise ValueError(f"{name} has shape {w.shape}, expected {shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"{name} contains non-finite entries")

    def copy(self) -> "PcrnnParams":
        return PcrnnParams(
            n=self.n, p=self.p, d=self.d, out_dim=self.out_dim, tau=self.tau,
            W_p=self.W_p.copy(), W_f=self.W_f.copy(),
            W_c=self.W_c.copy(), W_out=self.W_out.copy(),
        )


@dataclass
class PcrnnState:
    """Per-timestep variables: prior state h, posterior h_post, causes c,
    output-level error eps, state-level error eps_h, prediction x."""

    h: np.ndarray
    h_post: np.ndarray
    c: np.ndarray
    eps: np.ndarray
    eps_h: np.ndarray
    x: np.ndarray

    @classmethod
    def initial(cls, h0: np.ndarray, c0: np.ndarray, out_dim: int) -> "PcrnnState":
        # The posterior at t=0 is the initial state itself (no inference yet).
        h0 = np.asarray(h0, dtype=float)
        c0 = np.asarray(c0, dtype=float)
        return cls(
            h=h0.copy(), h_post=h0.copy(), c=c0.copy(),
            eps=np.zeros(out_dim), eps_h=np.zeros(h0.shape[0]), x=np.zeros(out_dim),
        )


def init_params(n: int, p: int, out_dim: int, tau: float = 5.0,
                d: int | None = None, seed: int = 0, stream: int = 0,
                causes_scale: float = 0.1) -> PcrnnParams:
    """Fresh parameters, each matrix drawn N(0, 1/fan_in).

    The factor dimension defaults to n // 2. Fan-in is the dimension each
    matrix contracts against in the forward pass: n for W_p and W_out, d for
    W_f. W_c instead starts at the small fixed scale ``causes_scale``: the
    causes read-out geometry must be dominated by what training accumulates
    into the rows, otherwise online causes inference follows the random init
    and classification degenerates. ``stream`` decorrelates networks sharing
    one seed (the visual and motor instances use streams 0 and 1).
    """
    if d is None:
        d = n // 2
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE, stream]))
    return PcrnnParams(
        n=n, p=p, d=d, out_dim=out_dim, tau=tau,
        W_p=rng.standard_normal((n, d)) / np.sqrt(n),
        W_f=rng.standard_normal((n, d)) / np.sqrt(max(d, 1)),
        W_c=rng.standard_normal((p, d)) * causes_scale,
        W_out=rng.standard_normal((out_dim, n)) / np.sqrt(n),
    )


def initial_state(n: int, seed: int, stream: int = 0) -> np.ndarray:
    """Shared initial hidden state, standard normal from a dedicated stream.

    Drawn once per seed and reused for every trajectory; kept separate from
    the weight-init stream so the two can be varied independently. ``stream``
    matches the init_params convention (0 visual, 1 motor).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417, stream]))
    return rng.standard_normal(n)


def predict_step(params: PcrnnParams, prev: PcrnnState) -> tuple[np.ndarray, np.ndarray]:
    """One top-down step from the previous posterior state and causes.

    Returns (h_t, x_t).
    """
    a = np.tanh(prev.h_post)
    if a.shape[0] != params.n or prev.c.shape[0] != params.p:
        raise ValueError(
            f"state dims (n={a.shape[0]}, p={prev.c.shape[0]}) do not match "
            f"params (n={params.n}, p={params.p})"
        )
    factor = (params.W_c.T @ prev.c) * (params.W_p.T @ a)
    h = (1.0 - 1.0 / params.tau) * prev.h_post + (1.0 / params.tau) * (params.W_f @ factor)
    x = params.W_out @ np.tanh(h)
    return h, x


def infer_step(params: PcrnnParams, h_t: np.ndarray, x_t: np.ndarray,
               target: np.ndarray, prev_post: np.ndarray, c_prev: np.ndarray,
               rates: LearningRates, causes_on_simplex: bool = False,
               exact_grad: bool = False) -> PcrnnState:
    """One bottom-up step: posterior state and updated causes given a target.

    ``exact_grad`` adds the tanh' Jacobian of the readout to the state
    update; by default the feedback is the plain transposed-readout form.
    """
    eps = x_t - target
    fb = params.W_out.T @ eps
    if exact_grad:
        fb = fb * (1.0 - np.tanh(h_t) ** 2)
    h_post = h_t - rates.alpha_h * fb
    eps_h = h_t - h_post
    c = c_prev - rates.alpha_c * (
        params.W_c @ ((params.W_f.T @ eps_h) * (params.W_p.T @ np.tanh(prev_post)))
    )
    if causes_on_simplex:
        c = normalize_causes(c)
    return PcrnnState(h=h_t, h_post=h_post, c=c, eps=eps, eps_h=eps_h, x=x_t)


def normalize_causes(c: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and rescale to sum to 1 (uniform if all mass clips away)."""
    c = np.clip(c, 0.0, 1.0)
    s = c.sum()
    if s == 0.0:
        return np.full(c.shape[0], 1.0 / c.shape[0])
    return c / s


def local_update(params: PcrnnParams, prev_post: np.ndarray, c_prev: np.ndarray,
                 h_t: np.ndarray, eps: np.ndarray, eps_h: np.ndarray,
                 rates: LearningRates, exact_grad: bool = False) -> PcrnnParams:
    """Apply the per-step outer-product weight updates in place.

    The readout moves against the output error; the three recurrent factors
    move against the state-level error, each contracting the other two
    pathways' contributions. ``exact_grad`` restores the 1/tau factor the
    published recurrent rules drop. Mutates ``params`` (callers own a private
    copy during training) and returns it.
    """
    a_prev = np.tanh(prev_post)
    scale = 1.0 / params.tau if exact_grad else 1.0
    cc = params.W_c.T @ c_prev
    fe = params.W_f.T @ eps_h
    pa = params.W_p.T @ a_prev
    params.W_out -= rates.lambda_out * np.outer(eps, np.tanh(h_t))
    params.W_p -= rates.lambda_p * scale * np.outer(a_prev, cc * fe)
    params.W_f -= rates.lambda_f * scale * np.outer(eps_h, cc * pa)
    params.W_c -= rates.lambda_c * scale * np.outer(c_prev, fe * pa)
    return params


def rollout(params: PcrnnParams, h0: np.ndarray, c0: np.ndarray, T: int,
            targets: np.ndarray | None = None,
            rates: LearningRates | None = None,
            causes_on_simplex: bool = False) -> tuple[np.ndarray, list[PcrnnState]]:
    """Run T steps; pure generation without targets, inference with them.

    With no targets the posterior defaults to the prior each step. Returns
    (outputs, states) with outputs of shape (T, out_dim).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if targets is not None and len(targets) != T:
        raise ValueError(f"got {len(targets)} targets for T={T}")
    if targets is not None and rates is None:
        rates = LearningRates()
    state = PcrnnState.initial(h0, c0, params.out_dim)
    outputs = np.zeros((T, params.out_dim))
    states: list[PcrnnState] = []
    for t in range(T):
        h, x = predict_step(params, state)
        if targets is None:
            state = PcrnnState(h=h, h_post=h, c=state.c,
                               eps=np.zeros(params.out_dim),
                               eps_h=np.zeros(params.n), x=x)
        else:
            state = infer_step(params, h, x, targets[t], state.h_post, state.c,
                               rates, causes_on_simplex=causes_on_simplex)
        outputs[t] = x
        states.append(state)
    return outputs, states


def infer_causes(params: PcrnnParams, target_traj: np.ndarray, presentations: int,
                 rates: LearningRates, h0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Infer the causes behind a target trajectory by repeated presentation.

    Causes start uniform at 1/p and are carried across presentations; the
    hidden state is reset to the shared initial state at the start of each
    presentation. Every step projects the causes back onto the probability
    simplex. Returns the final causes and one snapshot per presentation.
    """
    if presentations < 1:
        raise ValueError("presentations must be >= 1")
    c = np.full(params.p, 1.0 / params.p)
    history = np.zeros((presentations, params.p))
    T = len(target_traj)
    for k in range(presentations):
        state = PcrnnState.initial(h0, c, params.out_dim)
        for t in range(T):
            h, x = predict_step(params, state)
            state = infer_step(params, h, x, target_traj[t], state.h_post,
                               state.c, rates, causes_on_simplex=True)
        c = state.c
        history[k] = c
    return c, history


def dense_recurrent_tensor(params: PcrnnParams) -> np.ndarray:
    """Explicit (n, n, p) recurrent tensor from the three factor matrices.

    Index order: [past state i, future state j, causes k]. Test utility for
    small models only; the factored pathway never materializes this.
    """
    return np.einsum("il,jl,kl->ijk", params.W_p, params.W_f, params.W_c)

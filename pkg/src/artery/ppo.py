"""Clipped-surrogate policy optimization over masked discrete actions.

One shared policy/value pair is trained per coordination mode from
transitions gathered across every agent running that mode.  Gradients
are computed analytically; the finite-difference tests keep the
backward passes honest.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .net import Adam, Mlp, PolicyParams, fresh_params

log = logging.getLogger(__name__)

RATIO_GUARD = 10.0

TRAINING_LOG_COLUMNS = (
    "iteration",
    "mean_reward",
    "total_tt",
    "avg_t",
    "thru",
    "stop",
    "speed",
    "episode_reward",
)


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.3
    gamma: float = 0.8
    kl_coef: float = 0.2
    value_clip: float = 1000.0
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    epochs: int = 20
    train_batch: int = 20000
    minibatch: int = 1024
    lr_schedule: tuple = ((0, 5e-4), (2e5, 1e-4), (5e5, 1e-5))
    hidden: tuple = (256, 128)
    eval_episodes: int = 3

    def problems(self) -> list[str]:
        out = []
        if not 0.0 < self.clip < 1.0:
            out.append("clip outside (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            out.append("discount outside (0, 1]")
        if self.train_batch < self.minibatch:
            out.append("train batch smaller than minibatch")
        if self.epochs < 1:
            out.append("need at least one epoch")
        if not self.lr_schedule:
            out.append("empty learning-rate schedule")
        if self.eval_episodes < 0:
            out.append("negative evaluation episode count")
        return out


def desk_config(**overrides) -> PpoConfig:
    """Shrunk preset for laptop-scale runs; same objective, smaller nets."""
    base = dict(hidden=(32, 32), train_batch=4000, minibatch=256, epochs=10)
    base.update(overrides)
    return PpoConfig(**base)


def schedule_lr(schedule, steps: float) -> float:
    pts = sorted((float(s), float(lr)) for s, lr in schedule)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return float(np.interp(steps, xs, ys))


@dataclass
class Rollout:
    """Flat transition batch; rows from all agents of one mode."""

    obs: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def problems(self) -> list[str]:
        out = []
        if not np.all(np.isfinite(self.logp)):
            out.append("non-finite stored log-probs")
        rows = np.arange(len(self.actions))
        if not np.all(self.masks[rows, self.actions] > 0.0):
            out.append("action taken outside its mask")
        return out


def masked_log_probs(logits, masks):
    """Row-wise log-softmax restricted to the unmasked actions.

    Masked entries get probability exactly zero (log-prob -inf).
    Returns (log_probs, probs).
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    masks = np.atleast_2d(np.asarray(masks, dtype=float))
    if logits.shape != masks.shape:
        raise ValueError("logits and masks shapes differ")
    live = masks > 0.0
    if not live.any(axis=1).all():
        raise ValueError("some row masks exclude every action")
    z = np.where(live, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    total = e.sum(axis=1, keepdims=True)
    probs = e / total
    logp = z - np.log(total)
    return logp, probs


def advantage(reward, v_next, v_now, gamma, terminal=False):
    """One-step estimate reward + gamma * V(next) - V(now); terminal next-values count as zero."""
    if terminal:
        v_next = 0.0
    return reward + gamma * v_next - v_now


def advantages(rollout: Rollout, value_net: Mlp, gamma: float):
    """Batch advantages and the fixed value-regression targets."""
    v_now = value_net(rollout.obs)[:, 0]
    v_next = value_net(rollout.next_obs)[:, 0]
    v_next = np.where(rollout.terminal, 0.0, v_next)
    targets = rollout.rewards + gamma * v_next
    return targets - v_now, targets


def clipped_objective(rho, adv, clip):
    """Per-sample min(rho * adv, clip(rho) * adv)."""
    rho = np.asarray(rho, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(rho * adv, np.clip(rho, 1.0 - clip, 1.0 + clip) * adv)


def policy_loss(net, obs, masks, actions, logp_old, adv, old_probs, cfg):
    """Negated surrogate-plus-regularizers objective and its gradients.

    Returns (loss, grads, stats); grads point in the descent direction
    of the loss, i.e. the ascent direction of the objective.
    """
    n = len(actions)
    rows = np.arange(n)
    logits, cache = net.forward(obs)
    logp, probs = masked_log_probs(logits, masks)
    live = probs > 0.0
    safe_logp = np.where(live, logp, 0.0)

    lp_taken = logp[rows, actions]
    rho = np.exp(lp_taken - logp_old)
    t_raw = rho * adv
    t_clip = np.clip(rho, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    surrogate = np.minimum(t_raw, t_clip).mean()

    entropy_rows = -(probs * safe_logp).sum(axis=1)
    entropy = entropy_rows.mean()

    old_live = old_probs > 0.0
    log_old = np.where(old_live, np.log(np.where(old_live, old_probs, 1.0)), 0.0)
    kl_rows = np.where(old_live, old_probs * (log_old - safe_logp), 0.0).sum(axis=1)
    kl = kl_rows.mean()

    objective = surrogate + cfg.entropy_coef * entropy - cfg.kl_coef * kl

    # d objective / d logits, assembled per term
    d_rho = np.where(t_raw <= t_clip, adv, 0.0) * rho / n
    gz = -d_rho[:, None] * probs
    gz[rows, actions] += d_rho
    gz += -(cfg.entropy_coef / n) * probs * (safe_logp + entropy_rows[:, None])
    gz += -(cfg.kl_coef / n) * (probs - old_probs)

    grads = net.backward(cache, -gz)
    stats = {
        "surrogate": float(surrogate),
        "entropy": float(entropy),
        "kl": float(kl),
        "mean_ratio_dev": float(np.abs(rho - 1.0).mean()),
    }
    return -float(objective), grads, stats


def value_loss(net, obs, targets, clip):
    """Mean squared one-step error with a per-sample cap, plus gradients."""
    n = len(targets)
    values, cache = net.forward(obs)
    td = np.asarray(targets, dtype=float) - values[:, 0]
    per_sample = np.minimum(td * td, clip)
    loss = per_sample.mean()
    dv = np.where(td * td < clip, -2.0 * td, 0.0) / n
    grads = net.backward(cache, dv[:, None])
    return float(loss), grads


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    kl: float = 0.0
    entropy: float = 0.0
    mean_ratio_dev: float = 0.0
    diverged: bool = False
    aborted: bool = False


def update(params: PolicyParams, optimizers, rollout: Rollout, cfg: PpoConfig,
           lr: float, rng: np.random.Generator) -> UpdateStats:
    """Runs the epoch loop for one collected batch, in place.

    An epoch whose full-batch mean |ratio - 1| exceeds RATIO_GUARD is
    rolled back to its starting weights and ends the update early, as
    does any non-finite loss.
    """
    issues = rollout.problems()
    if issues:
        raise ValueError("; ".join(issues))
    pol_opt, val_opt = optimizers
    n = len(rollout)
    rows = np.arange(n)
    adv, targets = advantages(rollout, params.value, cfg.gamma)
    # standardized per batch; keeps the surrogate scale-free across envs
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    old_logits = params.policy(rollout.obs)
    _, old_probs = masked_log_probs(old_logits, rollout.masks)

    stats = UpdateStats()
    mb = min(cfg.minibatch, n)
    for _epoch in range(cfg.epochs):
        pol_snap = params.policy.state()
        val_snap = params.value.state()
        perm = rng.permutation(n)
        abort = False
        for start in range(0, n, mb):
            idx = perm[start:start + mb]
            ploss, pgrads, pstats = policy_loss(
                params.policy, rollout.obs[idx], rollout.masks[idx],
                rollout.actions[idx], rollout.logp[idx], adv[idx],
                old_probs[idx], cfg,
            )
            vloss, vgrads = value_loss(
                params.value, rollout.obs[idx], targets[idx], cfg.value_clip,
            )
            if not (np.isfinite(ploss) and np.isfinite(vloss)):
                log.warning(
                    "non-finite loss (policy %.3g, value %.3g, kl %.3g); update aborted",
                    ploss, vloss, pstats["kl"],
                )
                abort = True
                break
            pol_opt.step(pgrads, lr)
            val_opt.step([cfg.value_coef * g for g in vgrads], lr)
            stats.policy_loss = ploss
            stats.value_loss = vloss
            stats.kl = pstats["kl"]
            stats.entropy = pstats["entropy"]
        if abort:
            params.policy.load_state(pol_snap)
            params.value.load_state(val_snap)
            stats.aborted = True
            break
        logp, _ = masked_log_probs(params.policy(rollout.obs), rollout.masks)
        ratio_dev = np.abs(np.exp(logp[rows, rollout.actions] - rollout.logp) - 1.0)
        stats.mean_ratio_dev = float(ratio_dev.mean())
        if stats.mean_ratio_dev > RATIO_GUARD:
            params.policy.load_state(pol_snap)
            params.value.load_state(val_snap)
            stats.diverged = True
            log.warning("mean |ratio-1| %.2f above %.1f; epoch rolled back",
                        stats.mean_ratio_dev, RATIO_GUARD)
            break
    return stats


def collect(env, params: PolicyParams, batch: int, rng: np.random.Generator):
    """Gathers at least `batch` transitions from the environment.

    The environment owns episode structure: reset(seed) -> (k, d)
    observations, masks() -> (k, A), step(actions) -> (obs, rewards,
    done, info).  Steps flagged info["collect"]=False are played but
    not stored; info["terminal"] marks episode ends whose next-state
    value is zero rather than bootstrapped.
    """
    obs_rows, mask_rows, act_rows, logp_rows = [], [], [], []
    rew_rows, next_rows, term_rows = [], [], []
    metrics = []
    obs = np.atleast_2d(env.reset(int(rng.integers(2 ** 31))))
    n = 0
    while n < batch:
        masks = np.atleast_2d(env.masks())
        logp, probs = masked_log_probs(params.policy(obs), masks)
        k, n_actions = probs.shape
        actions = np.empty(k, dtype=int)
        for r in range(k):
            actions[r] = rng.choice(n_actions, p=probs[r])
        next_obs, rewards, done, info = env.step(actions)
        next_obs = np.atleast_2d(next_obs)
        if info.get("collect", True):
            terminal = bool(info.get("terminal", done)) if done else False
            obs_rows.append(obs.copy())
            mask_rows.append(masks)
            act_rows.append(actions)
            logp_rows.append(logp[np.arange(k), actions])
            rew_rows.append(np.asarray(rewards, dtype=float))
            next_rows.append(next_obs.copy())
            term_rows.append(np.full(k, terminal))
            n += k
        obs = next_obs
        if done:
            if info.get("metrics") is not None:
                metrics.append(info["metrics"])
            obs = np.atleast_2d(env.reset(int(rng.integers(2 ** 31))))
    rollout = Rollout(
        obs=np.concatenate(obs_rows),
        masks=np.concatenate(mask_rows),
        actions=np.concatenate(act_rows),
        logp=np.concatenate(logp_rows),
        rewards=np.concatenate(rew_rows),
        next_obs=np.concatenate(next_rows),
        terminal=np.concatenate(term_rows),
    )
    return rollout, metrics


@dataclass
class TrainResult:
    params: PolicyParams
    log: list = field(default_factory=list)
    steps: int = 0
    diverged: int = 0
    aborted: int = 0
    eval_returns: list = field(default_factory=list)
    best_iteration: int = -1


# first three seeds from this offset land on three distinct demand levels
# when the environment draws its level from sorted profile keys
EVAL_SEED_BASE = 60005


def evaluation_return(env, params: PolicyParams, episodes: int) -> float:
    """Mean deterministic-episode return; the checkpoint selection metric."""
    totals = []
    for j in range(episodes):
        obs = np.atleast_2d(env.reset(EVAL_SEED_BASE + j))
        total, done = 0.0, False
        while not done:
            masks = np.atleast_2d(env.masks())
            logits = params.policy(obs)
            _, probs = masked_log_probs(logits, masks)
            actions = probs.argmax(axis=1)
            obs, rewards, done, _info = env.step(actions)
            obs = np.atleast_2d(obs)
            total += float(np.sum(rewards))
        totals.append(total)
    return float(np.mean(totals))


def train_mode(env_factory, mode: str, config: PpoConfig | None = None,
               iterations: int = 300, seed: int = 0,
               params: PolicyParams | None = None, progress=None) -> TrainResult:
    """Trains one mode's shared policy/value pair against its environment.

    Each iteration ends with a fixed-seed deterministic evaluation; the
    returned parameters are the iterate that scored best on it, not
    necessarily the last.  Set eval_episodes=0 to keep the final iterate.
    """
    cfg = config or PpoConfig()
    issues = cfg.problems()
    if issues:
        raise ValueError("; ".join(issues))
    rng = np.random.default_rng(seed)
    env = env_factory()
    probe = np.atleast_2d(env.reset(seed))
    n_actions = np.atleast_2d(env.masks()).shape[1]
    if params is None:
        params = fresh_params(mode, probe.shape[1], n_actions, cfg.hidden, rng)
    optimizers = (Adam(params.policy.parameters()), Adam(params.value.parameters()))
    eval_env = env_factory() if cfg.eval_episodes > 0 else None

    result = TrainResult(params=params)
    best = -np.inf
    for it in range(iterations):
        rollout, ep_metrics = collect(env, params, cfg.train_batch, rng)
        result.steps += len(rollout)
        lr = schedule_lr(cfg.lr_schedule, result.steps)
        stats = update(params, optimizers, rollout, cfg, lr, rng)
        result.diverged += int(stats.diverged)
        result.aborted += int(stats.aborted)
        row = _log_row(it, rollout, ep_metrics)
        result.log.append(row)
        if eval_env is not None:
            score = evaluation_return(eval_env, params, cfg.eval_episodes)
            result.eval_returns.append(score)
            if score > best:
                best = score
                result.params = copy.deepcopy(params)
                result.best_iteration = it
        if progress is not None:
            progress(it, row, stats)
    return result


def _log_row(iteration: int, rollout: Rollout, ep_metrics) -> dict:
    row = {c: 0.0 for c in TRAINING_LOG_COLUMNS}
    row["iteration"] = iteration
    row["mean_reward"] = float(rollout.rewards.mean())
    if ep_metrics:
        def mean_of(attr):
            return float(np.mean([getattr(m, attr) for m in ep_metrics]))
        row["total_tt"] = sum(mean_of(a) for a in ("in_tt", "out_tt", "oth_tt"))
        row["avg_t"] = mean_of("avg_t")
        row["thru"] = mean_of("thru")
        row["stop"] = mean_of("stop")
        row["speed"] = mean_of("speed")
        row["episode_reward"] = mean_of("reward")
    return row


def write_training_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TRAINING_LOG_COLUMNS) + "\n")
        for row in rows:
            cells = [str(int(row["iteration"]))]
            cells += [f"{float(row[c]):.6f}" for c in TRAINING_LOG_COLUMNS[1:]]
            fh.write(",".join(cells) + "\n")

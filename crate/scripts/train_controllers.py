"""Train the tanh controllers shipped in crates/core/data.

Each controller imitates a saturated discrete LQR policy on its benchmark
plant. Run from the repository root:

    python3 scripts/train_controllers.py
"""

import json
from pathlib import Path

import numpy as np
import scipy.linalg
import torch

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "data"


def dlqr(a, b, q, r):
    p = scipy.linalg.solve_discrete_are(a, b, q, r)
    return np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)


def mlp(dims):
    layers = []
    for i in range(len(dims) - 1):
        layers.append(torch.nn.Linear(dims[i], dims[i + 1], dtype=torch.float64))
        if i + 2 < len(dims):
            layers.append(torch.nn.Tanh())
    return torch.nn.Sequential(*layers)


def fit(dims, xs, us, epochs, seed):
    torch.manual_seed(seed)
    net = mlp(dims)
    x = torch.tensor(xs)
    u = torch.tensor(us)
    opt = torch.optim.Adam(net.parameters(), lr=1e-2)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=epochs // 3, gamma=0.3)
    for _ in range(epochs):
        opt.zero_grad()
        loss = torch.mean((net(x) - u) ** 2)
        loss.backward()
        opt.step()
        sched.step()
    print(f"{dims}: final mse {loss.item():.3e}")
    return net


def export(net, path):
    linears = [m for m in net if isinstance(m, torch.nn.Linear)]
    layers = []
    for i, lin in enumerate(linears):
        layers.append(
            {
                "weight": lin.weight.detach().numpy().tolist(),
                "bias": lin.bias.detach().numpy().tolist(),
                "activation": "tanh" if i + 1 < len(linears) else None,
            }
        )
    path.write_text(json.dumps({"layers": layers}, indent=1) + "\n")


def write(name, obj):
    (OUT / name).write_text(json.dumps(obj, indent=1) + "\n")


def rollout(a, b, k, policy, x0, steps):
    xs = [x0]
    for _ in range(steps):
        x = xs[-1]
        xs.append(a @ x + b @ policy(x) + k)
    return np.array(xs)


def double_integrator(rng):
    a = np.array([[1.0, 1.0], [0.0, 1.0]])
    b = np.array([[0.5], [1.0]])
    gain = dlqr(a, b, np.eye(2), np.eye(1))

    def expert(x):
        return np.clip(-x @ gain.T, -1.0, 1.0)

    broad = rng.uniform([-1.0, -3.0], [4.0, 1.0], size=(20000, 2))
    tube = []
    g = np.array([[0.1, 0.1, 0.1], [-0.1, 0.0, 0.1]])
    for _ in range(400):
        x0 = g @ rng.uniform(-1, 1, 3) + np.array([2.5, 0.0])
        traj = rollout(a, b, np.zeros(2), lambda x: expert(x[None])[0], x0, 8)
        tube.extend(traj)
    xs = np.vstack([broad, np.array(tube)])
    net = fit([2, 10, 5, 5, 1], xs, expert(xs), 3000, 0)
    export(net, OUT / "di_controller.json")
    write("di_system.json", {"A": a.tolist(), "B": b.tolist(), "T": 5})
    write("di_initial.json", {"G": g.tolist(), "center": [2.5, 0.0]})


def quadrotor(rng):
    dt, grav = 0.1, 9.81
    a = np.eye(6)
    a[:3, 3:] = dt * np.eye(3)
    b = dt * np.vstack([np.zeros((3, 3)), np.diag([grav, -grav, 1.0])])
    k = np.zeros(6)
    k[5] = -grav * dt
    gain = dlqr(a, b, np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5]), np.diag([2.0, 2.0, 1.0]))
    hover = np.array([0.0, 0.0, grav])
    lim = np.array([np.pi / 9, np.pi / 9, 0.0])

    def expert(x):
        u = hover - x @ gain.T
        u[..., 0] = np.clip(u[..., 0], -lim[0], lim[0])
        u[..., 1] = np.clip(u[..., 1], -lim[1], lim[1])
        u[..., 2] = np.clip(u[..., 2], grav - 2.0, grav + 2.0)
        return u

    lo = np.array([4.6, 4.6, 2.9, -0.01, -0.01, -0.01])
    hi = np.array([4.8, 4.8, 3.1, 0.01, 0.01, 0.01])
    tube = []
    obstacles = [np.array([2.0, 4.0, 3.0]), np.array([4.0, 2.0, 3.0])]
    clearance = np.inf
    for _ in range(400):
        traj = rollout(a, b, k, lambda x: expert(x[None])[0], rng.uniform(lo, hi), 20)
        tube.extend(traj)
        for o in obstacles:
            clearance = min(clearance, np.min(np.linalg.norm(traj[:, :3] - o, axis=1)))
    print(f"expert obstacle clearance {clearance:.3f}")
    tube = np.array(tube)
    jitter = tube + rng.normal(scale=[0.1, 0.1, 0.1, 0.05, 0.05, 0.05], size=tube.shape)
    broad = rng.uniform([-1, -1, -1, -1.5, -1.5, -1.5], [5.5, 5.5, 3.5, 0.5, 0.5, 0.5], size=(20000, 6))
    xs = np.vstack([tube, jitter, broad])
    net = fit([6, 32, 32, 3], xs, expert(xs), 3000, 1)
    export(net, OUT / "quad_controller.json")
    write(
        "quad_system.json",
        {"A": a.tolist(), "B": b.tolist(), "T": 10, "dt": dt, "offset": k.tolist()},
    )
    write("quad_initial.json", {"lower": lo.tolist(), "upper": hi.tolist()})


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    double_integrator(rng)
    quadrotor(rng)

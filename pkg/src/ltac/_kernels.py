"""Compiled rollout loop for the navigation environment.

Mirrors ``sampler._generic_advance`` step for step (same uniforms, same
order of operations) so the two paths produce the same chain.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def _policy_actions(flat, offsets, dims, s, u, actions, buf_a, buf_b):
    n_agents = offsets.shape[0]
    n_layers = dims.shape[1] - 1
    for j in range(n_agents):
        pos = offsets[j]
        cur = buf_a
        nxt = buf_b
        for i in range(dims[j, 0]):
            cur[i] = s[i]
        for ell in range(n_layers):
            n_in = dims[j, ell]
            n_out = dims[j, ell + 1]
            bias = pos + n_out * n_in
            for o in range(n_out):
                acc = 0.0
                row = pos + o * n_in
                for i in range(n_in):
                    acc += flat[row + i] * cur[i]
                acc += flat[bias + o]
                if ell < n_layers - 1 and acc < 0.0:
                    acc = 0.0
                nxt[o] = acc
            pos = bias + n_out
            tmp = cur
            cur = nxt
            nxt = tmp
        n_act = dims[j, n_layers]
        mx = cur[0]
        for o in range(1, n_act):
            if cur[o] > mx:
                mx = cur[o]
        tot = 0.0
        for o in range(n_act):
            cur[o] = np.exp(cur[o] - mx)
            tot += cur[o]
        cdf = 0.0
        pick = 0
        for o in range(n_act):
            cdf += cur[o] / tot
            if cdf < u[j]:
                pick += 1
        if pick > n_act - 1:
            pick = n_act - 1
        actions[j] = pick


@numba.njit(cache=True)
def nav_rollout(
    flat, offsets, dims, pos, vel, land, step_count, U,
    mass, vmax, damping, dt, d_coll, force_mag, bound, thresh, max_steps,
    r_scale, r_shift, obs_scale,
    S_out, A_out, R_out, Sn_out, done_out,
):
    """Advance ``U.shape[0]`` steps in place; returns the final step count."""
    n = pos.shape[0]
    width = dims.max()
    buf_a = np.empty(width)
    buf_b = np.empty(width)
    actions = np.empty(n, dtype=np.int64)
    fx = np.array([0.0, 0.0, -1.0, 1.0, 0.0])
    fy = np.array([1.0, -1.0, 0.0, 0.0, 0.0])
    s = np.empty(4 * n)
    for t in range(U.shape[0]):
        for i in range(n):
            s[2 * i] = pos[i, 0] * obs_scale
            s[2 * i + 1] = pos[i, 1] * obs_scale
            s[2 * n + 2 * i] = land[i, 0] * obs_scale
            s[2 * n + 2 * i + 1] = land[i, 1] * obs_scale
        S_out[t, :] = s
        _policy_actions(flat, offsets, dims, s, U[t, :n], actions, buf_a, buf_b)
        A_out[t, :] = actions
        for i in range(n):
            a = actions[i]
            if a == 4:
                continue
            vx = (1.0 - damping) * vel[i, 0] + (dt / mass[i]) * force_mag * fx[a]
            vy = (1.0 - damping) * vel[i, 1] + (dt / mass[i]) * force_mag * fy[a]
            sp = np.sqrt(vx * vx + vy * vy)
            if sp > vmax[i]:
                vx = vx * (vmax[i] / sp)
                vy = vy * (vmax[i] / sp)
            vel[i, 0] = vx
            vel[i, 1] = vy
            px = pos[i, 0] + dt * vx
            py = pos[i, 1] + dt * vy
            pos[i, 0] = min(max(px, -bound), bound)
            pos[i, 1] = min(max(py, -bound), bound)
        total = 0.0
        for i in range(n):
            dx = pos[i, 0] - land[i, 0]
            dy = pos[i, 1] - land[i, 1]
            d = np.sqrt(dx * dx + dy * dy)
            total += d
            hits = 0
            for k in range(n):
                if k != i:
                    ex = pos[i, 0] - pos[k, 0]
                    ey = pos[i, 1] - pos[k, 1]
                    if np.sqrt(ex * ex + ey * ey) < d_coll:
                        hits += 1
            R_out[t, i] = r_scale * (-d - hits) + r_shift
        step_count += 1
        for i in range(n):
            Sn_out[t, 2 * i] = pos[i, 0] * obs_scale
            Sn_out[t, 2 * i + 1] = pos[i, 1] * obs_scale
            Sn_out[t, 2 * n + 2 * i] = land[i, 0] * obs_scale
            Sn_out[t, 2 * n + 2 * i + 1] = land[i, 1] * obs_scale
        done = total < thresh or step_count >= max_steps
        done_out[t] = done
        if done:
            base = n
            for i in range(n):
                pos[i, 0] = -bound + 2.0 * bound * U[t, base + 2 * i]
                pos[i, 1] = -bound + 2.0 * bound * U[t, base + 2 * i + 1]
                land[i, 0] = -bound + 2.0 * bound * U[t, base + 2 * n + 2 * i]
                land[i, 1] = -bound + 2.0 * bound * U[t, base + 2 * n + 2 * i + 1]
                vel[i, 0] = 0.0
                vel[i, 1] = 0.0
            step_count = 0
    return step_count

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from langdrive import heads, numkit as nk
from langdrive.scenegen import AgentState, MapPolyline, Scene, generate_scene, rollout_ct

D = 8


def make(seed=0, zero=False):
    store = nk.ParamStore()
    heads.init_params(store, D, 16, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for n, t in store.items():
        if zero:
            t.data[:] = 0.0
        elif n.endswith("l2.W"):
            t.data[:] = rng.normal(0, 0.3, size=t.shape)
    return store


def test_zero_params_give_zero_plan():
    plan = heads.plan_head(nk.Tensor(np.ones((1, D))), "left", make(zero=True))
    assert plan.shape == (6, 2) and not plan.data.any()


def test_fresh_heads_output_zero():
    store = nk.ParamStore()
    heads.init_params(store, D, 16, np.random.default_rng(0))
    assert not heads.plan_head(nk.Tensor(np.ones((1, D))), "right", store).data.any()


def test_command_changes_plan():
    store = make(1)
    q = nk.Tensor(np.random.default_rng(0).normal(size=(1, D)))
    plans = [heads.plan_head(q, c, store).data for c in ("left", "straight", "right")]
    assert not np.allclose(plans[0], plans[1]) and not np.allclose(plans[1], plans[2])


def test_imitation_loss_examples():
    gt = np.random.default_rng(0).normal(size=(6, 2))
    assert heads.imitation_loss(nk.Tensor(gt), gt).item() == 0.0
    off = gt + np.array([0.3, 0.4])
    assert heads.imitation_loss(nk.Tensor(off), gt).item() == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(nk.ShapeError):
        heads.imitation_loss(nk.Tensor(gt), gt[:5])


traj = arrays(np.float64, (6, 2), elements=st.floats(-50, 50))


@given(traj, traj)
def test_imitation_loss_symmetric_and_nonnegative(a, b):
    ab = heads.imitation_loss(nk.Tensor(a), b).item()
    assert ab == pytest.approx(heads.imitation_loss(nk.Tensor(b), a).item(), abs=1e-9)
    assert ab >= 0.0
    if np.array_equal(a, b):
        assert ab == 0.0
    elif np.abs(a - b).max() > 1e-100:  # smaller gaps underflow when squared
        assert ab > 0.0


def test_motion_head_masks():
    store = make(2)
    Q = nk.Tensor(np.random.default_rng(0).normal(size=(4, D)))
    assert heads.motion_head(Q, [False] * 4, store) is None
    out = heads.motion_head(Q, [True, False, True, False], store)
    assert out.shape == (2, 12)


def test_motion_gradient_only_reaches_unmasked_rows():
    store = make(3)
    Q = nk.Tensor(np.random.default_rng(1).normal(size=(4, D)), requires_grad=True)
    mask = [True, False, False, True]
    gt = np.random.default_rng(2).normal(size=(2, 12))
    nk.backward(heads.imitation_loss(heads.motion_head(Q, mask, store), gt))
    row_norm = np.abs(Q.grad).sum(axis=1)
    assert row_norm[0] > 0 and row_norm[3] > 0
    assert row_norm[1] == 0 and row_norm[2] == 0


def scene_with(agents=(), polylines=()):
    ego = AgentState(0, "car", (0.0, 0.0), 0.0, 5.0, 0.0, (4.5, 2.0))
    agents = list(agents)
    return Scene(ego, agents, list(polylines), [rollout_ct(ego)] + [rollout_ct(a) for a in agents], "straight")


def test_aux_losses_empty_scene_are_zero():
    store = make(4)
    det, mp = heads.aux_losses(nk.zeros(3, D), [False] * 3, nk.zeros(2, D), [False] * 2, scene_with(), store, 50.0)
    assert det.item() == 0.0 and mp.item() == 0.0


def test_det_loss_hand_value_zero_params():
    a = AgentState(1, "car", (10.0, -5.0), math.pi / 2, 4.0, 0.0, (4.0, 2.0))
    store = make(zero=True)
    det, _ = heads.aux_losses(nk.Tensor(np.ones((1, D))), [True], nk.zeros(1, D), [False], scene_with([a]), store,
                              50.0)
    target = [0.2, -0.1, 1.0, math.cos(math.pi / 2), 0.4, math.log(8.0)]
    assert det.item() == pytest.approx(sum(t * t for t in target) / 6, abs=1e-12)


def test_perfect_regressor_gives_zero_loss():
    s = scene_with([AgentState(1, "car", (10.0, -5.0), 0.3, 4.0, 0.0, (4.0, 2.0))],
                   [MapPolyline("lane_divider", ((-10.0, 2.0), (10.0, 2.0)))])
    store = make(zero=True)
    store["head.det.l2.b"].data[:] = heads.det_targets(s, 50.0)
    store["head.map.l2.b"].data[:] = heads.map_targets(s, 50.0)
    det, mp = heads.aux_losses(nk.Tensor(np.ones((1, D))), [True], nk.Tensor(np.ones((1, D))), [True], s, store, 50.0)
    assert det.item() == 0.0 and mp.item() == 0.0


def test_aux_losses_invariant_to_agent_order():
    s = generate_scene(11)
    n = len(s.agents)
    store = make(5)
    Q = np.random.default_rng(0).normal(size=(n, D))
    det, _ = heads.aux_losses(nk.Tensor(Q), [True] * n, nk.zeros(1, D), [False], s, store, 50.0)
    perm = np.random.default_rng(1).permutation(n)
    s2 = scene_with([s.agents[i] for i in perm])
    det2, _ = heads.aux_losses(nk.Tensor(Q[perm]), [True] * n, nk.zeros(1, D), [False], s2, store, 50.0)
    assert det.item() == pytest.approx(det2.item(), abs=1e-12)


def test_head_gradients():
    store = make(6)
    q = nk.Tensor(np.random.default_rng(3).normal(size=(1, D)), requires_grad=True)
    gt = np.random.default_rng(4).normal(size=(6, 2)) * 5
    params = [t for n, t in store.items() if n.startswith("head.plan")]
    assert nk.grad_check(lambda *_: heads.imitation_loss(heads.plan_head(q, "left", store), gt), params + [q]) < 1e-4
    s = generate_scene(3)
    n = len(s.agents)
    Q = nk.Tensor(np.random.default_rng(5).normal(size=(n, D)), requires_grad=True)
    Qm = nk.Tensor(np.random.default_rng(6).normal(size=(len(s.map), D)), requires_grad=True)

    def aux(*_):
        det, mp = heads.aux_losses(Q, [True] * n, Qm, [True] * len(s.map), s, store, 50.0)
        return nk.add(det, mp)

    params = [t for n_, t in store.items() if n_.startswith(("head.det", "head.map"))]
    assert nk.grad_check(aux, params + [Q, Qm]) < 1e-4


@settings(max_examples=50)
@given(arrays(np.float64, (1, D), elements=st.floats(-1e3, 1e3)), st.sampled_from(["left", "straight", "right"]))
def test_plan_finite(q, cmd):
    assert np.all(np.isfinite(heads.plan_head(nk.Tensor(q), cmd, make(7)).data))

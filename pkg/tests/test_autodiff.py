import math

import numpy as np
import pytest

from conftest import assert_grads_close, central_difference_grad
from dvae import autodiff as ad
from dvae.autodiff import Tensor
from dvae.errors import NonFiniteValue, ShapeMismatch
from dvae.geometry import project_jacobian


def test_identity_passthrough():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    y = ad.add(x, np.zeros(3))
    assert np.array_equal(y.data, x.data)
    y.backward(np.array([1.0, 1.0, 1.0]))
    assert np.allclose(x.grad, [1.0, 1.0, 1.0])


def test_affine_identity():
    x = Tensor([1.5, -0.5], requires_grad=True)
    w = Tensor(np.eye(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    y = ad.affine(x, w, b)
    assert np.array_equal(y.data, x.data)


def test_two_layer_regression_value():
    # hand-evaluated composition, pinned
    x = Tensor([1.0, 2.0])
    w1 = Tensor([[0.5, -0.25], [0.1, 0.3]])
    b1 = Tensor([0.1, -0.2])
    w2 = Tensor([[1.0, 2.0]])
    b2 = Tensor([0.5])
    y = ad.affine(ad.tanh(ad.affine(x, w1, b1)), w2, b2)
    assert y.data[0] == pytest.approx(1.5239023091449753, abs=1e-12)


def test_squared_norm_gradient():
    x = Tensor([3.0, 4.0], requires_grad=True)
    y = ad.squared_norm(x)
    assert y.item() == pytest.approx(25.0)
    y.backward()
    assert np.allclose(x.grad, [6.0, 8.0])


def test_softplus_at_zero():
    y = ad.softplus(Tensor([0.0]))
    assert y.data[0] == pytest.approx(math.log(2.0), abs=1e-12)


def test_abs_backward_sign_rule():
    x = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
    ad.absolute(x).backward(np.ones(3))
    assert np.allclose(x.grad, [-1.0, 0.0, 1.0])


def test_sphere_projection_node_matches_geometry():
    x = Tensor([3.0, 4.0], requires_grad=True)
    y = ad.sphere_project(x)
    assert np.allclose(y.data, [0.6, 0.8])
    seed = np.array([0.7, -0.2])
    y.backward(seed)
    assert np.allclose(x.grad, project_jacobian([3.0, 4.0]).T @ seed)


def test_sphere_projection_backward_is_tangent(rng):
    for _ in range(20):
        x = Tensor(rng.normal(size=5) * rng.uniform(0.5, 3.0), requires_grad=True)
        y = ad.sphere_project(x)
        y.backward(rng.normal(size=5))
        assert abs(float(np.dot(x.grad, y.data))) <= 1e-8


def test_shape_mismatch_raises():
    with pytest.raises(ShapeMismatch):
        ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ShapeMismatch):
        ad.affine(Tensor(np.zeros(3)), Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))


def test_non_finite_rejected():
    with pytest.raises(NonFiniteValue):
        Tensor([1.0, float("nan")])
    with pytest.raises(NonFiniteValue):
        ad.log(Tensor([-1.0]))


_ALL_KINDS = (
    "affine", "tanh", "relu", "softplus", "add", "sub", "mul",
    "scale", "project", "sqrtsq", "logsq", "abs",
)


def _random_graph_spec(rng, width: int) -> list[tuple]:
    """A random ordering of every node kind, with frozen constants.

    Smooth-surrogate tricks (offsets, squares) keep values away from
    kinks and domain boundaries so finite differences stay valid.
    """
    spec = []
    for kind in rng.permutation(_ALL_KINDS):
        if kind == "affine":
            spec.append(("affine", rng.normal(size=(width, width)) * 0.4, rng.normal(size=width) * 0.1))
        elif kind in ("add", "sub"):
            spec.append((kind, rng.normal(size=width) * 0.5))
        elif kind == "mul":
            spec.append((kind, rng.uniform(0.5, 1.5, size=width)))
        else:
            spec.append((kind,))
    return spec


def _build_graph(spec, x: Tensor, param_tensors: list[Tensor]) -> Tensor:
    h = x
    it = iter(param_tensors)
    for node in spec:
        kind = node[0]
        if kind == "affine":
            h = ad.affine(h, next(it), next(it))
        elif kind == "tanh":
            h = ad.tanh(h)
        elif kind == "relu":
            h = ad.relu(h + 3.0) - 3.0
        elif kind == "softplus":
            h = ad.softplus(h)
        elif kind == "add":
            h = h + Tensor(node[1])
        elif kind == "sub":
            h = h - Tensor(node[1])
        elif kind == "mul":
            h = h * Tensor(node[1])
        elif kind == "scale":
            h = ad.scale(h, 1.7)
        elif kind == "project":
            h = ad.sphere_project(h + 2.0)
        elif kind == "sqrtsq":
            h = ad.sqrt(h * h + 1.0)
        elif kind == "logsq":
            h = ad.log(h * h + 1.0)
        elif kind == "abs":
            h = ad.absolute(h + 0.1)
    return ad.sum_all(h) + ad.squared_norm(h) + ad.mean_all(ad.row_squared_norm(h))


def test_gradient_check_random_graphs(rng):
    for _ in range(20):
        width = int(rng.integers(2, 9))
        spec = _random_graph_spec(rng, width)
        x0 = rng.normal(size=width)
        param_arrays = []
        for node in spec:
            if node[0] == "affine":
                param_arrays.extend([node[1], node[2]])

        def value(xv, arrays):
            tensors = [Tensor(a) for a in arrays]
            return float(_build_graph(spec, Tensor(xv), tensors).data)

        x = Tensor(x0, requires_grad=True)
        tensors = [Tensor(a, requires_grad=True) for a in param_arrays]
        _build_graph(spec, x, tensors).backward()

        expected_x = central_difference_grad(lambda xv: value(xv, param_arrays), x0.copy())
        assert_grads_close(x.grad, expected_x, rel=1e-4, floor=1e-7)
        for i, arr in enumerate(param_arrays):
            def f(a, i=i):
                arrays = list(param_arrays)
                arrays[i] = a
                return value(x0, arrays)

            expected = central_difference_grad(f, arr.copy())
            assert_grads_close(tensors[i].grad, expected, rel=1e-4, floor=1e-7)


def test_forward_backward_deterministic(rng):
    spec = _random_graph_spec(rng, 4)
    x0 = rng.normal(size=4)
    arrays = [node[1] for node in spec if node[0] == "affine"]

    def run():
        tensors = []
        for node in spec:
            if node[0] == "affine":
                tensors.extend([Tensor(node[1], requires_grad=True), Tensor(node[2], requires_grad=True)])
        x = Tensor(x0, requires_grad=True)
        out = _build_graph(spec, x, tensors)
        out.backward()
        return out.data.copy(), x.grad.copy()

    (v1, g1), (v2, g2) = run(), run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)

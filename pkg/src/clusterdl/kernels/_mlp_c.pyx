# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of the NumPy MLP kernels.

Same parameter layout and semantics as ``_numpy_impl``: flat float64
vector of (W, b) per layer, ReLU hidden activations, mean softmax
cross-entropy. The batch sizes here are small, so plain C loops beat the
per-call overhead of BLAS dispatch, and ``sgd_steps_inplace`` fuses the
whole multi-step update into one call.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

ctypedef cnp.int64_t i64


cdef void _linear(double[:, ::1] a_in, double[::1] params,
                  Py_ssize_t w_off, Py_ssize_t b_off,
                  Py_ssize_t fan_in, Py_ssize_t fan_out,
                  double[:, ::1] z_out) noexcept nogil:
    # z_out = a_in @ W + b with W row-major (fan_in, fan_out)
    cdef Py_ssize_t n = a_in.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        for j in range(fan_out):
            acc = params[b_off + j]
            for k in range(fan_in):
                acc += a_in[i, k] * params[w_off + k * fan_out + j]
            z_out[i, j] = acc


cdef void _relu(double[:, ::1] z, double[:, ::1] a_out) noexcept nogil:
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            a_out[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0


cdef double _softmax_xent(double[:, ::1] z, i64[::1] y,
                          double[:, ::1] probs) noexcept nogil:
    # Fills probs with softmax rows, returns the mean cross-entropy.
    cdef Py_ssize_t n = z.shape[0], c = z.shape[1]
    cdef Py_ssize_t i, j
    cdef double m, s, total = 0.0
    for i in range(n):
        m = z[i, 0]
        for j in range(1, c):
            if z[i, j] > m:
                m = z[i, j]
        s = 0.0
        for j in range(c):
            probs[i, j] = exp(z[i, j] - m)
            s += probs[i, j]
        total += log(s) - (z[i, y[i]] - m)
        for j in range(c):
            probs[i, j] /= s
    return total / n


cdef void _grad_layer(double[:, ::1] a_prev, double[:, ::1] dz,
                      Py_ssize_t w_off, Py_ssize_t b_off,
                      Py_ssize_t fan_in, Py_ssize_t fan_out,
                      double[::1] grad) noexcept nogil:
    # grad[W] = a_prev.T @ dz ; grad[b] = column sums of dz
    cdef Py_ssize_t n = a_prev.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc
    for k in range(fan_in):
        for j in range(fan_out):
            acc = 0.0
            for i in range(n):
                acc += a_prev[i, k] * dz[i, j]
            grad[w_off + k * fan_out + j] = acc
    for j in range(fan_out):
        acc = 0.0
        for i in range(n):
            acc += dz[i, j]
        grad[b_off + j] = acc


cdef void _backprop_dz(double[:, ::1] dz, double[::1] params,
                       Py_ssize_t w_off, Py_ssize_t fan_in, Py_ssize_t fan_out,
                       double[:, ::1] z_prev, double[:, ::1] dz_prev) noexcept nogil:
    # dz_prev = (dz @ W.T) masked by the ReLU derivative at z_prev
    cdef Py_ssize_t n = dz.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        for k in range(fan_in):
            if z_prev[i, k] > 0.0:
                acc = 0.0
                for j in range(fan_out):
                    acc += dz[i, j] * params[w_off + k * fan_out + j]
                dz_prev[i, k] = acc
            else:
                dz_prev[i, k] = 0.0


cdef class _Workspace:
    """Scratch buffers for one (dims, batch) shape."""

    cdef list zs          # pre-activations per layer
    cdef list acts        # activations, acts[0] is the input
    cdef list dzs         # dz buffers per layer
    cdef double[:, ::1] probs
    cdef Py_ssize_t[::1] w_offs, b_offs, fan_ins, fan_outs
    cdef Py_ssize_t n_layers

    def __init__(self, dims, Py_ssize_t batch):
        cdef Py_ssize_t off = 0, fan_in, fan_out, idx
        self.n_layers = len(dims) - 1
        w_offs = np.empty(self.n_layers, dtype=np.intp)
        b_offs = np.empty(self.n_layers, dtype=np.intp)
        fan_ins = np.empty(self.n_layers, dtype=np.intp)
        fan_outs = np.empty(self.n_layers, dtype=np.intp)
        self.zs, self.acts, self.dzs = [], [None], []
        for idx in range(self.n_layers):
            fan_in = dims[idx]
            fan_out = dims[idx + 1]
            w_offs[idx] = off
            b_offs[idx] = off + fan_in * fan_out
            fan_ins[idx] = fan_in
            fan_outs[idx] = fan_out
            off += fan_in * fan_out + fan_out
            self.zs.append(np.empty((batch, fan_out)))
            self.acts.append(np.empty((batch, fan_out)))
            self.dzs.append(np.empty((batch, fan_out)))
        self.w_offs = w_offs
        self.b_offs = b_offs
        self.fan_ins = fan_ins
        self.fan_outs = fan_outs
        self.probs = np.empty((batch, dims[self.n_layers]))

    cdef double forward(self, double[::1] values, double[:, ::1] X, i64[::1] y):
        cdef Py_ssize_t idx
        cdef double[:, ::1] a_prev = X
        cdef double[:, ::1] z
        self.acts[0] = np.asarray(X)
        for idx in range(self.n_layers):
            z = self.zs[idx]
            _linear(a_prev, values, self.w_offs[idx], self.b_offs[idx],
                    self.fan_ins[idx], self.fan_outs[idx], z)
            if idx < self.n_layers - 1:
                _relu(z, self.acts[idx + 1])
                a_prev = self.acts[idx + 1]
        return _softmax_xent(self.zs[self.n_layers - 1], y, self.probs)

    cdef void backward(self, double[::1] values, double[:, ::1] X, i64[::1] y,
                       double[::1] grad):
        cdef Py_ssize_t idx, i, j
        cdef Py_ssize_t batch = X.shape[0]
        cdef double[:, ::1] dz = self.dzs[self.n_layers - 1]
        cdef double[:, ::1] a_prev
        for i in range(batch):
            for j in range(self.probs.shape[1]):
                dz[i, j] = self.probs[i, j]
            dz[i, y[i]] -= 1.0
        for i in range(batch):
            for j in range(self.probs.shape[1]):
                dz[i, j] /= batch
        for idx in range(self.n_layers - 1, -1, -1):
            a_prev = X if idx == 0 else self.acts[idx]
            _grad_layer(a_prev, dz, self.w_offs[idx], self.b_offs[idx],
                        self.fan_ins[idx], self.fan_outs[idx], grad)
            if idx > 0:
                _backprop_dz(dz, values, self.w_offs[idx],
                             self.fan_ins[idx], self.fan_outs[idx],
                             self.zs[idx - 1], self.dzs[idx - 1])
                dz = self.dzs[idx - 1]


def _as_inputs(values, X, y):
    values = np.ascontiguousarray(values, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    return values, X, y


def loss_value(values, dims, X, y):
    """Mean softmax cross-entropy of the batch."""
    values, X, y = _as_inputs(values, X, y)
    cdef _Workspace ws = _Workspace(tuple(dims), X.shape[0])
    return ws.forward(values, X, y)


def loss_grad(values, dims, X, y):
    """Return (loss, gradient) with the gradient flattened like ``values``."""
    values, X, y = _as_inputs(values, X, y)
    cdef _Workspace ws = _Workspace(tuple(dims), X.shape[0])
    grad = np.zeros_like(values)
    cdef double loss = ws.forward(values, X, y)
    ws.backward(values, X, y, grad)
    return loss, grad


def sgd_steps_inplace(values, dims, X, y, double eta, Py_ssize_t num_steps):
    """Run ``num_steps`` SGD steps on the same batch, mutating ``values``.

    Returns the loss evaluated before the first step.
    """
    cdef cnp.ndarray[double, ndim=1] vals = np.asarray(values)
    if not vals.flags.c_contiguous or vals.dtype != np.float64:
        raise ValueError("values must be a contiguous float64 vector")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    cdef _Workspace ws = _Workspace(tuple(dims), X.shape[0])
    cdef cnp.ndarray[double, ndim=1] grad = np.zeros_like(vals)
    cdef double[::1] vview = vals
    cdef double[::1] gview = grad
    cdef double loss, first_loss = 0.0
    cdef Py_ssize_t step, i, total = vview.shape[0]
    for step in range(num_steps):
        loss = ws.forward(vview, X, y)
        if step == 0:
            first_loss = loss
        ws.backward(vview, X, y, gview)
        for i in range(total):
            vview[i] -= eta * gview[i]
    return first_loss

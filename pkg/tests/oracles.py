"""Independent reference implementations used as test oracles."""

import numpy as np

from tinyreid import arch
from tinyreid.kernels.numpy_impl import same_padding
from tinyreid.tensor import dequantize_affine, quantize_affine


def naive_conv2d(x, k, stride):
    """Six-loop reference convolution with 'same' zero padding."""
    kh, kw, cin, cout = k.shape
    h, w, _ = x.shape
    oh, pt, _ = same_padding(h, kh, stride)
    ow, pl, _ = same_padding(w, kw, stride)
    out = np.zeros((oh, ow, cout), dtype=np.float64)
    for oy in range(oh):
        for ox in range(ow):
            for dy in range(kh):
                for dx in range(kw):
                    iy = oy * stride + dy - pt
                    ix = ox * stride + dx - pl
                    if 0 <= iy < h and 0 <= ix < w:
                        for ci in range(cin):
                            for co in range(cout):
                                out[oy, ox, co] += float(x[iy, ix, ci]) * float(k[dy, dx, ci, co])
    return out


def naive_depthwise(x, k, stride):
    kh, kw, cin = k.shape
    h, w, _ = x.shape
    oh, pt, _ = same_padding(h, kh, stride)
    ow, pl, _ = same_padding(w, kw, stride)
    out = np.zeros((oh, ow, cin), dtype=np.float64)
    for oy in range(oh):
        for ox in range(ow):
            for c in range(cin):
                for dy in range(kh):
                    for dx in range(kw):
                        iy = oy * stride + dy - pt
                        ix = ox * stride + dx - pl
                        if 0 <= iy < h and 0 <= ix < w:
                            out[oy, ox, c] += float(x[iy, ix, c]) * float(k[dy, dx, c])
    return out


def fake_quant_replay(qmodel, rec):
    """Replay every execution unit in float from the recorded int8 inputs:
    dequantize, run the float reference op, quantize the result.  The
    integer path must land within one quantization step everywhere."""
    qp = qmodel.act_qparams
    for u in arch.exec_units(qmodel.spec):
        out_qp = qp[u.out_edge]
        if u.op in ("conv", "dw", "fc"):
            x = dequantize_affine(rec[u.in_edge], qp[u.in_edge])
            entry = qmodel.tensors[u.weight]
            w_real = entry["kernel"].astype(np.float64) * entry["w_scale"].astype(np.float64)
            b_real = entry["bias"].astype(np.float64) * (qp[u.in_edge].scale
                                                         * entry["w_scale"].astype(np.float64))
            if u.op == "conv":
                y = naive_conv2d(x, w_real, u.stride) + b_real
            elif u.op == "dw":
                y = naive_depthwise(x, w_real, u.stride) + b_real
            else:
                y = x.reshape(-1) @ w_real + b_real
            if u.relu6:
                y = np.clip(y, 0.0, 6.0)
        elif u.op == "add":
            y = dequantize_affine(rec[u.lhs_edge], qp[u.lhs_edge]) + \
                dequantize_affine(rec[u.rhs_edge], qp[u.rhs_edge])
        elif u.op == "gap":
            y = dequantize_affine(rec[u.in_edge], qp[u.in_edge]).mean(axis=(0, 1))
        expected = quantize_affine(y, out_qp).reshape(rec[u.out_edge].shape)
        diff = np.abs(rec[u.out_edge].astype(np.int32) - expected.astype(np.int32))
        yield u.out_edge, int(diff.max())

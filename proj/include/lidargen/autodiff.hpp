#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lidargen {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Handle to a tensor recorded on a tape. Only valid for the tape that made it.
template <typename T>
struct Ten {
    int id = -1;
};

// Reverse-mode tape over dense row-major tensors. Every operation records a
// vector-Jacobian product built from the same primitives, so the backward
// pass is itself recorded and can be differentiated again (the R1 gradient
// penalty needs exactly one extra level).
//
// Image-shaped tensors use NHWC layout; convolution kernels use [kh,kw,Ci,Co].
// Column (azimuth) padding is circular, row (elevation) padding reflective.
//
// In vjp callbacks, a target of -1/-2/... addresses the op's first/second/...
// input; non-negative targets are absolute node ids.
template <typename T>
class Tape {
public:
    using Grads = std::vector<std::pair<int, Ten<T>>>;
    using VjpFn = std::function<void(Tape&, Ten<T>, Grads&)>;

    // ---- leaves ----

    Ten<T> constant(Shape shape, std::vector<T> data) {
        return make_leaf(std::move(shape), std::move(data), false, false);
    }

    Ten<T> scalar(T v) { return constant({}, {v}); }

    Ten<T> full(Shape shape, T v) {
        std::vector<T> data(size_t(numel(shape)), v);
        return constant(std::move(shape), std::move(data));
    }

    Ten<T> zeros(Shape shape) { return full(std::move(shape), T(0)); }
    Ten<T> ones(Shape shape) { return full(std::move(shape), T(1)); }

    // differentiable input (gradients reachable, not reported by backward())
    Ten<T> input(Shape shape, std::vector<T> data) {
        return make_leaf(std::move(shape), std::move(data), true, false);
    }

    // marked parameter: backward() reports its gradient
    Ten<T> param(Shape shape, std::vector<T> data) {
        return make_leaf(std::move(shape), std::move(data), true, true);
    }

    // ---- access ----

    const Shape& shape(Ten<T> t) const { return node(t).shape; }
    const std::vector<T>& val(Ten<T> t) const { return node(t).data; }
    T item(Ten<T> t) const {
        if (numel(node(t).shape) != 1)
            throw std::invalid_argument("item: tensor is not a scalar");
        return node(t).data[0];
    }
    size_t size() const { return nodes_.size(); }
    const std::vector<int>& params() const { return params_; }

    // ---- elementwise binary (shapes must match exactly; broadcast first) ----

    Ten<T> add(Ten<T> a, Ten<T> b) {
        auto out = binary_out(a, b, "add");
        const auto &da = val(a), &db = val(b);
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
        return make(node(a).shape, std::move(out), {a.id, b.id},
                    [](Tape&, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, g});
                        gs.push_back({-2, g});
                    });
    }

    Ten<T> sub(Ten<T> a, Ten<T> b) {
        auto out = binary_out(a, b, "sub");
        const auto &da = val(a), &db = val(b);
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
        return make(node(a).shape, std::move(out), {a.id, b.id},
                    [](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, g});
                        gs.push_back({-2, tp.mul_scalar(g, T(-1))});
                    });
    }

    Ten<T> mul(Ten<T> a, Ten<T> b) {
        auto out = binary_out(a, b, "mul");
        const auto &da = val(a), &db = val(b);
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
        const int ia = a.id, ib = b.id;
        return make(node(a).shape, std::move(out), {ia, ib},
                    [ia, ib](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({ia, tp.mul(g, Ten<T>{ib})});
                        gs.push_back({ib, tp.mul(g, Ten<T>{ia})});
                    });
    }

    Ten<T> div(Ten<T> a, Ten<T> b) {
        auto out = binary_out(a, b, "div");
        const auto &da = val(a), &db = val(b);
        for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] / db[i];
        const int ia = a.id, ib = b.id;
        return make(node(a).shape, std::move(out), {ia, ib},
                    [ib](Tape& tp, Ten<T> g, Grads& gs) {
                        Ten<T> c{tp.self_id_};
                        Ten<T> gb = tp.div(g, Ten<T>{ib});
                        gs.push_back({-1, gb});
                        // d/db (a/b) = -c/b
                        gs.push_back({-2, tp.mul_scalar(tp.mul(gb, c), T(-1))});
                    });
    }

    // ---- elementwise with a scalar attribute ----

    Ten<T> add_scalar(Ten<T> a, T c) {
        auto out = val(a);
        for (T& v : out) v += c;
        return make(node(a).shape, std::move(out), {a.id},
                    [](Tape&, Ten<T> g, Grads& gs) { gs.push_back({-1, g}); });
    }

    Ten<T> mul_scalar(Ten<T> a, T c) {
        auto out = val(a);
        for (T& v : out) v *= c;
        return make(node(a).shape, std::move(out), {a.id},
                    [c](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.mul_scalar(g, c)});
                    });
    }

    // ---- elementwise unary ----

    Ten<T> sin(Ten<T> a) {
        auto out = val(a);
        for (T& v : out) v = std::sin(v);
        const int ia = a.id;
        return make(node(a).shape, std::move(out), {ia},
                    [ia](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({ia, tp.mul(g, tp.cos(Ten<T>{ia}))});
                    });
    }

    Ten<T> cos(Ten<T> a) {
        auto out = val(a);
        for (T& v : out) v = std::cos(v);
        const int ia = a.id;
        return make(node(a).shape, std::move(out), {ia},
                    [ia](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back(
                            {ia, tp.mul_scalar(tp.mul(g, tp.sin(Ten<T>{ia})), T(-1))});
                    });
    }

    Ten<T> exp(Ten<T> a) {
        auto out = val(a);
        for (T& v : out) v = std::exp(v);
        return make(node(a).shape, std::move(out), {a.id},
                    [](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.mul(g, Ten<T>{tp.self_id_})});
                    });
    }

    Ten<T> log(Ten<T> a) {
        auto out = val(a);
        for (T& v : out) v = std::log(v);
        const int ia = a.id;
        return make(node(a).shape, std::move(out), {ia},
                    [ia](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({ia, tp.div(g, Ten<T>{ia})});
                    });
    }

    Ten<T> sigmoid(Ten<T> a) {
        auto out = val(a);
        for (T& v : out)
            v = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                          : std::exp(v) / (T(1) + std::exp(v));
        return make(node(a).shape, std::move(out), {a.id},
                    [](Tape& tp, Ten<T> g, Grads& gs) {
                        Ten<T> y{tp.self_id_};
                        Ten<T> one_minus = tp.add_scalar(tp.mul_scalar(y, T(-1)), T(1));
                        gs.push_back({-1, tp.mul(g, tp.mul(y, one_minus))});
                    });
    }

    Ten<T> tanh(Ten<T> a) {
        auto out = val(a);
        for (T& v : out) v = std::tanh(v);
        return make(node(a).shape, std::move(out), {a.id},
                    [](Tape& tp, Ten<T> g, Grads& gs) {
                        Ten<T> y{tp.self_id_};
                        Ten<T> d = tp.add_scalar(tp.mul_scalar(tp.square(y), T(-1)), T(1));
                        gs.push_back({-1, tp.mul(g, d)});
                    });
    }

    // log(1 + e^a) without overflow; d/da = sigmoid(a)
    Ten<T> softplus(Ten<T> a) {
        auto out = val(a);
        for (T& v : out)
            v = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
        const int ia = a.id;
        return make(node(a).shape, std::move(out), {ia},
                    [ia](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({ia, tp.mul(g, tp.sigmoid(Ten<T>{ia}))});
                    });
    }

    // slope 1 for x > 0, alpha otherwise (the subgradient at 0 is alpha)
    Ten<T> leaky_relu(Ten<T> a, T alpha) {
        const auto& in = val(a);
        std::vector<T> out(in.size()), slope(in.size());
        for (size_t i = 0; i < in.size(); ++i) {
            slope[i] = in[i] > T(0) ? T(1) : alpha;
            out[i] = in[i] * slope[i];
        }
        const Shape sh = node(a).shape;
        return make(sh, std::move(out), {a.id},
                    [sh, slope](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.mul(g, tp.constant(sh, slope))});
                    });
    }

    Ten<T> abs(Ten<T> a) {
        const auto& in = val(a);
        std::vector<T> out(in.size()), sign(in.size());
        for (size_t i = 0; i < in.size(); ++i) {
            sign[i] = in[i] > T(0) ? T(1) : (in[i] < T(0) ? T(-1) : T(0));
            out[i] = in[i] * sign[i];
        }
        const Shape sh = node(a).shape;
        return make(sh, std::move(out), {a.id},
                    [sh, sign](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.mul(g, tp.constant(sh, sign))});
                    });
    }

    Ten<T> square(Ten<T> a) {
        auto out = val(a);
        for (T& v : out) v = v * v;
        const int ia = a.id;
        return make(node(a).shape, std::move(out), {ia},
                    [ia](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({ia, tp.mul_scalar(tp.mul(g, Ten<T>{ia}), T(2))});
                    });
    }

    Ten<T> sqrt(Ten<T> a) {
        auto out = val(a);
        for (T& v : out) v = std::sqrt(v);
        return make(node(a).shape, std::move(out), {a.id},
                    [](Tape& tp, Ten<T> g, Grads& gs) {
                        Ten<T> y{tp.self_id_};
                        gs.push_back({-1, tp.mul_scalar(tp.div(g, y), T(0.5))});
                    });
    }

    // ---- reductions over all elements ----

    Ten<T> sum(Ten<T> a) {
        T s = T(0);
        for (T v : val(a)) s += v;
        const Shape sh = node(a).shape;
        return make({}, {s}, {a.id}, [sh](Tape& tp, Ten<T> g, Grads& gs) {
            gs.push_back({-1, tp.broadcast(g, sh)});
        });
    }

    Ten<T> mean(Ten<T> a) {
        return mul_scalar(sum(a), T(1) / T(numel(node(a).shape)));
    }

    // ---- shape movement ----

    Ten<T> reshape(Ten<T> a, Shape shape) {
        if (numel(shape) != numel(node(a).shape))
            throw std::invalid_argument("reshape: element count mismatch " +
                                        shape_str(node(a).shape) + " -> " +
                                        shape_str(shape));
        const Shape old = node(a).shape;
        return make(std::move(shape), val(a), {a.id},
                    [old](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.reshape(g, old)});
                    });
    }

    Ten<T> transpose(Ten<T> a) {
        const Shape& s = node(a).shape;
        if (s.size() != 2) throw std::invalid_argument("transpose: rank-2 only");
        const int m = s[0], n = s[1];
        std::vector<T> out(size_t(m) * n);
        const auto& in = val(a);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[size_t(j) * m + i] = in[size_t(i) * n + j];
        return make({n, m}, std::move(out), {a.id},
                    [](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.transpose(g)});
                    });
    }

    // NumPy-style broadcast aligned at trailing dimensions.
    Ten<T> broadcast(Ten<T> a, Shape shape) {
        const Shape src = node(a).shape;
        if (src.size() > shape.size())
            throw std::invalid_argument("broadcast: source rank exceeds target");
        const int off = int(shape.size() - src.size());
        for (size_t i = 0; i < src.size(); ++i)
            if (src[i] != 1 && src[i] != shape[off + i])
                throw std::invalid_argument("broadcast: incompatible " + shape_str(src) +
                                            " -> " + shape_str(shape));
        std::vector<T> out(size_t(numel(shape)));
        broadcast_fill(val(a).data(), src, out.data(), shape);
        return make(shape, std::move(out), {a.id},
                    [src](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.reduce_to(g, src)});
                    });
    }

    // adjoint of broadcast: sum over expanded axes down to `shape`
    Ten<T> reduce_to(Ten<T> a, Shape shape) {
        const Shape src = node(a).shape;
        if (shape.size() > src.size())
            throw std::invalid_argument("reduce_to: target rank exceeds source");
        const int off = int(src.size() - shape.size());
        for (size_t i = 0; i < shape.size(); ++i)
            if (shape[i] != 1 && shape[i] != src[off + i])
                throw std::invalid_argument("reduce_to: incompatible " + shape_str(src) +
                                            " -> " + shape_str(shape));
        std::vector<T> out(size_t(numel(shape)), T(0));
        reduce_fill(val(a).data(), src, out.data(), shape);
        return make(shape, std::move(out), {a.id},
                    [src](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.broadcast(g, src)});
                    });
    }

    Ten<T> concat(const std::vector<Ten<T>>& parts, int axis) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        const Shape first = node(parts[0]).shape;
        if (axis < 0 || axis >= int(first.size()))
            throw std::invalid_argument("concat: bad axis");
        int total = 0;
        for (Ten<T> p : parts) {
            const Shape& ps = node(p).shape;
            if (ps.size() != first.size())
                throw std::invalid_argument("concat: rank mismatch");
            for (size_t i = 0; i < first.size(); ++i)
                if (int(i) != axis && ps[i] != first[i])
                    throw std::invalid_argument("concat: off-axis shape mismatch");
            total += ps[axis];
        }
        Shape out_shape = first;
        out_shape[axis] = total;
        const int64_t outer = prod_before(first, axis);
        const int64_t inner = prod_after(first, axis);
        std::vector<T> out(size_t(numel(out_shape)));
        std::vector<int> ids, lens;
        int64_t dst_off = 0;
        for (Ten<T> p : parts) {
            const int len = node(p).shape[axis];
            const T* src = val(p).data();
            for (int64_t o = 0; o < outer; ++o)
                std::copy(src + o * len * inner, src + (o + 1) * len * inner,
                          out.data() + (o * total + dst_off) * inner);
            dst_off += len;
            ids.push_back(p.id);
            lens.push_back(len);
        }
        return make(out_shape, std::move(out), ids,
                    [axis, lens, ids](Tape& tp, Ten<T> g, Grads& gs) {
                        int start = 0;
                        for (size_t i = 0; i < ids.size(); ++i) {
                            gs.push_back({ids[i], tp.slice(g, axis, start, lens[i])});
                            start += lens[i];
                        }
                    });
    }

    Ten<T> slice(Ten<T> a, int axis, int start, int len) {
        const Shape& sh = node(a).shape;
        if (axis < 0 || axis >= int(sh.size()))
            throw std::invalid_argument("slice: bad axis");
        if (start < 0 || len <= 0 || start + len > sh[axis])
            throw std::invalid_argument("slice: out of range");
        Shape out_shape = sh;
        out_shape[axis] = len;
        const int64_t outer = prod_before(sh, axis);
        const int64_t inner = prod_after(sh, axis);
        const int full = sh[axis];
        std::vector<T> out(size_t(numel(out_shape)));
        const T* src = val(a).data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src + (o * full + start) * inner,
                      src + (o * full + start + len) * inner, out.data() + o * len * inner);
        return make(out_shape, std::move(out), {a.id},
                    [axis, start, full](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.pad_slice(g, axis, start, full)});
                    });
    }

    // adjoint of slice: embed into zeros of the full axis length
    Ten<T> pad_slice(Ten<T> a, int axis, int start, int full) {
        const Shape& sh = node(a).shape;
        if (axis < 0 || axis >= int(sh.size()))
            throw std::invalid_argument("pad_slice: bad axis");
        const int len = sh[axis];
        if (start < 0 || start + len > full)
            throw std::invalid_argument("pad_slice: out of range");
        Shape out_shape = sh;
        out_shape[axis] = full;
        const int64_t outer = prod_before(sh, axis);
        const int64_t inner = prod_after(sh, axis);
        std::vector<T> out(size_t(numel(out_shape)), T(0));
        const T* src = val(a).data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src + o * len * inner, src + (o + 1) * len * inner,
                      out.data() + (o * full + start) * inner);
        return make(out_shape, std::move(out), {a.id},
                    [axis, start, len](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.slice(g, axis, start, len)});
                    });
    }

    // ---- image ops (NHWC) ----

    Ten<T> nearest_upsample(Ten<T> a, int factor) {
        const Shape& s = node(a).shape;
        if (s.size() != 4)
            throw std::invalid_argument("nearest_upsample: NHWC rank-4 only");
        if (factor < 1) throw std::invalid_argument("nearest_upsample: factor >= 1");
        const int n = s[0], h = s[1], w = s[2], c = s[3];
        const Shape out_shape = {n, h * factor, w * factor, c};
        std::vector<T> out(size_t(numel(out_shape)));
        const T* src = val(a).data();
        for (int in = 0; in < n; ++in)
            for (int oh = 0; oh < h * factor; ++oh)
                for (int ow = 0; ow < w * factor; ++ow) {
                    const T* sp =
                        src + ((size_t(in) * h + size_t(oh / factor)) * w + size_t(ow / factor)) * c;
                    T* dp = out.data() +
                            ((size_t(in) * h * factor + oh) * size_t(w) * factor + ow) * c;
                    std::copy(sp, sp + c, dp);
                }
        return make(out_shape, std::move(out), {a.id},
                    [factor](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.block_sum(g, factor)});
                    });
    }

    // adjoint of nearest_upsample: sum each factor x factor block
    Ten<T> block_sum(Ten<T> a, int factor) {
        const Shape& s = node(a).shape;
        if (s.size() != 4) throw std::invalid_argument("block_sum: NHWC rank-4 only");
        if (factor < 1 || s[1] % factor || s[2] % factor)
            throw std::invalid_argument("block_sum: dims not divisible by factor");
        const int n = s[0], h = s[1] / factor, w = s[2] / factor, c = s[3];
        const Shape out_shape = {n, h, w, c};
        std::vector<T> out(size_t(numel(out_shape)), T(0));
        const T* src = val(a).data();
        for (int in = 0; in < n; ++in)
            for (int ih = 0; ih < s[1]; ++ih)
                for (int iw = 0; iw < s[2]; ++iw) {
                    const T* sp = src + ((size_t(in) * s[1] + ih) * s[2] + iw) * c;
                    T* dp = out.data() +
                            ((size_t(in) * h + size_t(ih / factor)) * w + size_t(iw / factor)) * c;
                    for (int k = 0; k < c; ++k) dp[k] += sp[k];
                }
        return make(out_shape, std::move(out), {a.id},
                    [factor](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.nearest_upsample(g, factor)});
                    });
    }

    // azimuth-only nearest upsampling: duplicates each column `factor` times
    Ten<T> upsample_columns(Ten<T> a, int factor) {
        const Shape& s = node(a).shape;
        if (s.size() != 4)
            throw std::invalid_argument("upsample_columns: NHWC rank-4 only");
        if (factor < 1) throw std::invalid_argument("upsample_columns: factor >= 1");
        const int n = s[0], h = s[1], w = s[2], c = s[3];
        const Shape out_shape = {n, h, w * factor, c};
        std::vector<T> out(size_t(numel(out_shape)));
        const T* src = val(a).data();
        for (int in = 0; in < n; ++in)
            for (int ih = 0; ih < h; ++ih)
                for (int ow = 0; ow < w * factor; ++ow) {
                    const T* sp = src + ((size_t(in) * h + ih) * w + size_t(ow / factor)) * c;
                    T* dp = out.data() +
                            ((size_t(in) * h + ih) * size_t(w) * factor + ow) * c;
                    std::copy(sp, sp + c, dp);
                }
        return make(out_shape, std::move(out), {a.id},
                    [factor](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.sum_column_blocks(g, factor)});
                    });
    }

    // adjoint of upsample_columns: sum each run of `factor` adjacent columns
    Ten<T> sum_column_blocks(Ten<T> a, int factor) {
        const Shape& s = node(a).shape;
        if (s.size() != 4)
            throw std::invalid_argument("sum_column_blocks: NHWC rank-4 only");
        if (factor < 1 || s[2] % factor)
            throw std::invalid_argument("sum_column_blocks: width not divisible by factor");
        const int n = s[0], h = s[1], w = s[2] / factor, c = s[3];
        const Shape out_shape = {n, h, w, c};
        std::vector<T> out(size_t(numel(out_shape)), T(0));
        const T* src = val(a).data();
        for (int in = 0; in < n; ++in)
            for (int ih = 0; ih < h; ++ih)
                for (int iw = 0; iw < s[2]; ++iw) {
                    const T* sp = src + ((size_t(in) * h + ih) * s[2] + iw) * c;
                    T* dp = out.data() +
                            ((size_t(in) * h + ih) * w + size_t(iw / factor)) * c;
                    for (int k = 0; k < c; ++k) dp[k] += sp[k];
                }
        return make(out_shape, std::move(out), {a.id},
                    [factor](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.upsample_columns(g, factor)});
                    });
    }

    // circular shift along azimuth: out[..., w, :] = in[..., (w - delta) mod W, :]
    Ten<T> translate_columns_circular(Ten<T> a, int delta) {
        const Shape& s = node(a).shape;
        if (s.size() != 4)
            throw std::invalid_argument("translate_columns_circular: NHWC rank-4 only");
        const int n = s[0], h = s[1], w = s[2], c = s[3];
        std::vector<T> out(size_t(numel(s)));
        const T* src = val(a).data();
        const int d = ((delta % w) + w) % w;
        for (int in = 0; in < n; ++in)
            for (int ih = 0; ih < h; ++ih)
                for (int iw = 0; iw < w; ++iw) {
                    const int sw = (iw - d + w) % w;
                    const T* sp = src + ((size_t(in) * h + ih) * w + sw) * c;
                    T* dp = out.data() + ((size_t(in) * h + ih) * w + iw) * c;
                    std::copy(sp, sp + c, dp);
                }
        return make(s, std::move(out), {a.id},
                    [delta](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.translate_columns_circular(g, -delta)});
                    });
    }

    // Patch extraction for convolution: x [N,H,W,C] -> [N*H'*W', kh*kw*C].
    // Columns wrap circularly, rows reflect without repeating the edge.
    Ten<T> im2col(Ten<T> a, int kh, int kw, int stride) {
        const Shape s = node(a).shape;
        check_conv_geometry(s, kh, kw, stride, "im2col");
        const int n = s[0], h = s[1], w = s[2], c = s[3];
        const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
        const int hp = (h - 1) / stride + 1, wp = (w - 1) / stride + 1;
        const Shape out_shape = {n * hp * wp, kh * kw * c};
        std::vector<T> out(size_t(numel(out_shape)));
        const T* src = val(a).data();
        size_t dst = 0;
        for (int in = 0; in < n; ++in)
            for (int oh = 0; oh < hp; ++oh)
                for (int ow = 0; ow < wp; ++ow)
                    for (int i = 0; i < kh; ++i) {
                        const int rr = reflect_row(oh * stride + i - ph, h);
                        for (int j = 0; j < kw; ++j) {
                            const int cc = (((ow * stride + j - pw) % w) + w) % w;
                            const T* sp = src + ((size_t(in) * h + rr) * w + cc) * c;
                            std::copy(sp, sp + c, out.data() + dst);
                            dst += c;
                        }
                    }
        return make(out_shape, std::move(out), {a.id},
                    [s, kh, kw, stride](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.col2im(g, s, kh, kw, stride)});
                    });
    }

    // adjoint of im2col: scatter-add patches back through the same padding map
    Ten<T> col2im(Ten<T> a, Shape x_shape, int kh, int kw, int stride) {
        check_conv_geometry(x_shape, kh, kw, stride, "col2im");
        const int n = x_shape[0], h = x_shape[1], w = x_shape[2], c = x_shape[3];
        const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
        const int hp = (h - 1) / stride + 1, wp = (w - 1) / stride + 1;
        const Shape& s = node(a).shape;
        if (s.size() != 2 || s[0] != n * hp * wp || s[1] != kh * kw * c)
            throw std::invalid_argument("col2im: column matrix shape mismatch");
        std::vector<T> out(size_t(numel(x_shape)), T(0));
        const T* src = val(a).data();
        size_t sp = 0;
        for (int in = 0; in < n; ++in)
            for (int oh = 0; oh < hp; ++oh)
                for (int ow = 0; ow < wp; ++ow)
                    for (int i = 0; i < kh; ++i) {
                        const int rr = reflect_row(oh * stride + i - ph, h);
                        for (int j = 0; j < kw; ++j) {
                            const int cc = (((ow * stride + j - pw) % w) + w) % w;
                            T* dp = out.data() + ((size_t(in) * h + rr) * w + cc) * c;
                            for (int k = 0; k < c; ++k) dp[k] += src[sp + k];
                            sp += c;
                        }
                    }
        return make(x_shape, std::move(out), {a.id},
                    [kh, kw, stride](Tape& tp, Ten<T> g, Grads& gs) {
                        gs.push_back({-1, tp.im2col(g, kh, kw, stride)});
                    });
    }

    // x [N,H,W,Ci] * kernel [kh,kw,Ci,Co] -> [N,H',W',Co], H' = ceil(H/stride)
    Ten<T> conv2d_circular(Ten<T> x, Ten<T> kernel, int stride) {
        const Shape& xs = node(x).shape;
        const Shape& ks = node(kernel).shape;
        if (ks.size() != 4)
            throw std::invalid_argument("conv2d_circular: kernel must be [kh,kw,Ci,Co]");
        check_conv_geometry(xs, ks[0], ks[1], stride, "conv2d_circular");
        if (ks[2] != xs[3])
            throw std::invalid_argument("conv2d_circular: channel mismatch");
        const int n = xs[0], h = xs[1], w = xs[2];
        const int hp = (h - 1) / stride + 1, wp = (w - 1) / stride + 1;
        Ten<T> cols = im2col(x, ks[0], ks[1], stride);
        Ten<T> kmat = reshape(kernel, {ks[0] * ks[1] * ks[2], ks[3]});
        return reshape(matmul(cols, kmat), {n, hp, wp, ks[3]});
    }

    // ---- matmul ----

    Ten<T> matmul(Ten<T> a, Ten<T> b, bool ta = false, bool tb = false) {
        const Shape& sa = node(a).shape;
        const Shape& sb = node(b).shape;
        if (sa.size() != 2 || sb.size() != 2)
            throw std::invalid_argument("matmul: rank-2 only, got " + shape_str(sa) +
                                        " x " + shape_str(sb));
        const int m = ta ? sa[1] : sa[0], k = ta ? sa[0] : sa[1];
        const int k2 = tb ? sb[1] : sb[0], n = tb ? sb[0] : sb[1];
        if (k != k2)
            throw std::invalid_argument("matmul: inner dimension mismatch " +
                                        shape_str(sa) + " x " + shape_str(sb));
        std::vector<T> out(size_t(m) * n);
        {
            using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            Eigen::Map<const Mat> A(val(a).data(), sa[0], sa[1]);
            Eigen::Map<const Mat> B(val(b).data(), sb[0], sb[1]);
            Eigen::Map<Mat> C(out.data(), m, n);
            if (!ta && !tb)
                C.noalias() = A * B;
            else if (ta && !tb)
                C.noalias() = A.transpose() * B;
            else if (!ta && tb)
                C.noalias() = A * B.transpose();
            else
                C.noalias() = A.transpose() * B.transpose();
        }
        const int ia = a.id, ib = b.id;
        return make({m, n}, std::move(out), {ia, ib},
                    [ia, ib, ta, tb](Tape& tp, Ten<T> g, Grads& gs) {
                        Ten<T> A{ia}, B{ib};
                        if (!ta)
                            gs.push_back({ia, tp.matmul(g, B, false, !tb)});
                        else
                            gs.push_back({ia, tp.matmul(B, g, tb, true)});
                        if (!tb)
                            gs.push_back({ib, tp.matmul(A, g, !ta, false)});
                        else
                            gs.push_back({ib, tp.matmul(g, A, true, ta)});
                    });
    }

    // ---- graph control ----

    // forward identity that blocks gradient flow
    Ten<T> stop_gradient(Ten<T> a) { return constant(node(a).shape, val(a)); }

    // ---- differentiation ----

    // Reverse sweep from a scalar; one gradient per `wrt`, zeros when the
    // output does not depend on the target. The sweep is recorded with the
    // same primitives, so returned gradients are differentiable again.
    std::vector<Ten<T>> backward_to(Ten<T> out, const std::vector<Ten<T>>& wrt) {
        if (numel(node(out).shape) != 1)
            throw std::invalid_argument("backward: non-scalar output");
        std::vector<int> grad_of(size_t(out.id) + 1, -1);
        grad_of[size_t(out.id)] = ones(node(out).shape).id;
        Grads contribs;
        for (int i = out.id; i >= 0; --i) {
            if (grad_of[size_t(i)] < 0) continue;
            const Node& n = nodes_[size_t(i)];
            if (!n.vjp) continue;
            const VjpFn vjp = n.vjp;  // recording may grow node storage
            const std::vector<int> inputs = n.inputs;
            contribs.clear();
            self_id_ = i;
            vjp(*this, Ten<T>{grad_of[size_t(i)]}, contribs);
            for (auto& [raw, g] : contribs) {
                const int j = raw >= 0 ? raw : inputs[size_t(-raw) - 1];
                if (!nodes_[size_t(j)].needs_grad) continue;
                if (nodes_[size_t(j)].shape != node(g).shape)
                    throw std::logic_error("backward: gradient shape mismatch");
                grad_of[size_t(j)] = grad_of[size_t(j)] < 0
                                         ? g.id
                                         : add(Ten<T>{grad_of[size_t(j)]}, g).id;
            }
        }
        std::vector<Ten<T>> result;
        result.reserve(wrt.size());
        for (Ten<T> t : wrt) {
            const int gid = t.id <= out.id ? grad_of[size_t(t.id)] : -1;
            result.push_back(gid >= 0 ? Ten<T>{gid} : zeros(node(t).shape));
        }
        return result;
    }

    // gradients for all marked parameters, aligned with params()
    std::vector<Ten<T>> backward(Ten<T> out) {
        std::vector<Ten<T>> wrt;
        wrt.reserve(params_.size());
        for (int id : params_) wrt.push_back(Ten<T>{id});
        return backward_to(out, wrt);
    }

    // differentiable ||d out / d wrt||^2
    Ten<T> grad_norm_sq(Ten<T> out, Ten<T> wrt) {
        Ten<T> g = backward_to(out, {wrt})[0];
        return sum(square(g));
    }

private:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<int> inputs;
        VjpFn vjp;
        bool needs_grad = false;
    };

    const Node& node(Ten<T> t) const {
        if (t.id < 0 || size_t(t.id) >= nodes_.size())
            throw std::invalid_argument("tensor handle not on this tape");
        return nodes_[size_t(t.id)];
    }

    Ten<T> make_leaf(Shape shape, std::vector<T> data, bool needs_grad, bool is_param) {
        if (int64_t(data.size()) != numel(shape))
            throw std::invalid_argument("tensor data length does not match shape " +
                                        shape_str(shape));
        nodes_.push_back(Node{std::move(shape), std::move(data), {}, nullptr, needs_grad});
        const int id = int(nodes_.size()) - 1;
        if (is_param) params_.push_back(id);
        return {id};
    }

    Ten<T> make(Shape shape, std::vector<T> data, std::vector<int> inputs, VjpFn vjp) {
        if (int64_t(data.size()) != numel(shape))
            throw std::logic_error("internal: op output length mismatch");
        bool ng = false;
        for (int i : inputs) ng = ng || nodes_[size_t(i)].needs_grad;
        nodes_.push_back(Node{std::move(shape), std::move(data), std::move(inputs),
                              ng ? std::move(vjp) : VjpFn{}, ng});
        return {int(nodes_.size()) - 1};
    }

    std::vector<T> binary_out(Ten<T> a, Ten<T> b, const char* op) {
        if (node(a).shape != node(b).shape)
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        shape_str(node(a).shape) + " vs " +
                                        shape_str(node(b).shape));
        return std::vector<T>(val(a).size());
    }

    static int64_t prod_before(const Shape& s, int axis) {
        int64_t p = 1;
        for (int i = 0; i < axis; ++i) p *= s[i];
        return p;
    }
    static int64_t prod_after(const Shape& s, int axis) {
        int64_t p = 1;
        for (size_t i = size_t(axis) + 1; i < s.size(); ++i) p *= s[i];
        return p;
    }

    static int reflect_row(int r, int h) {
        if (h == 1) return 0;
        while (r < 0 || r >= h) {
            if (r < 0) r = -r;
            if (r >= h) r = 2 * h - 2 - r;
        }
        return r;
    }

    static void check_conv_geometry(const Shape& s, int kh, int kw, int stride,
                                    const char* op) {
        if (s.size() != 4)
            throw std::invalid_argument(std::string(op) + ": NHWC rank-4 only");
        if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0)
            throw std::invalid_argument(std::string(op) + ": kernel dims must be odd");
        if (stride < 1) throw std::invalid_argument(std::string(op) + ": stride >= 1");
    }

    static void broadcast_fill(const T* src, const Shape& ss, T* dst, const Shape& ds) {
        const int rank = int(ds.size());
        const int off = rank - int(ss.size());
        std::vector<int64_t> sstride(size_t(rank), 0);
        int64_t acc = 1;
        for (int i = int(ss.size()) - 1; i >= 0; --i) {
            sstride[size_t(off + i)] = (ss[size_t(i)] == 1) ? 0 : acc;
            acc *= ss[size_t(i)];
        }
        std::vector<int> idx(size_t(rank), 0);
        const int64_t total = numel(ds);
        int64_t soff = 0;
        for (int64_t t = 0; t < total; ++t) {
            dst[t] = src[soff];
            for (int i = rank - 1; i >= 0; --i) {
                ++idx[size_t(i)];
                soff += sstride[size_t(i)];
                if (idx[size_t(i)] < ds[size_t(i)]) break;
                soff -= int64_t(idx[size_t(i)]) * sstride[size_t(i)];
                idx[size_t(i)] = 0;
            }
        }
    }

    static void reduce_fill(const T* src, const Shape& ss, T* dst, const Shape& ds) {
        const int rank = int(ss.size());
        const int off = rank - int(ds.size());
        std::vector<int64_t> dstride(size_t(rank), 0);
        int64_t acc = 1;
        for (int i = int(ds.size()) - 1; i >= 0; --i) {
            dstride[size_t(off + i)] = (ds[size_t(i)] == 1) ? 0 : acc;
            acc *= ds[size_t(i)];
        }
        std::vector<int> idx(size_t(rank), 0);
        const int64_t total = numel(ss);
        int64_t doff = 0;
        for (int64_t t = 0; t < total; ++t) {
            dst[doff] += src[t];
            for (int i = rank - 1; i >= 0; --i) {
                ++idx[size_t(i)];
                doff += dstride[size_t(i)];
                if (idx[size_t(i)] < ss[size_t(i)]) break;
                doff -= int64_t(idx[size_t(i)]) * dstride[size_t(i)];
                idx[size_t(i)] = 0;
            }
        }
    }

    std::deque<Node> nodes_;
    std::vector<int> params_;
    int self_id_ = -1;  // node whose vjp is currently running
};

// ---- Adam ----

template <typename T>
struct AdamState {
    std::vector<T> m, v;
    int64_t t = 0;
};

// Standard Adam with bias correction; epsilon is added after the
// bias-corrected square root. Deterministic elementwise update.
template <typename T>
void adam_step(std::vector<T>& param, const std::vector<T>& grad, AdamState<T>& state,
               T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
    if (param.size() != grad.size())
        throw std::invalid_argument("adam_step: param/grad size mismatch");
    if (state.m.empty()) {
        state.m.assign(param.size(), T(0));
        state.v.assign(param.size(), T(0));
    }
    if (state.m.size() != param.size())
        throw std::invalid_argument("adam_step: state size mismatch");
    state.t += 1;
    const T c1 = T(1) - std::pow(beta1, T(state.t));
    const T c2 = T(1) - std::pow(beta2, T(state.t));
    for (size_t i = 0; i < param.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (T(1) - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (T(1) - beta2) * grad[i] * grad[i];
        param[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
    }
}

}  // namespace lidargen

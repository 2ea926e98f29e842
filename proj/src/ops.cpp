#include "regerr/nn/ops.hpp"

#include <algorithm>
#include <cmath>

namespace regerr::nn {

namespace {

// Row-major matrix products with a fixed accumulation order (the reduction
// index always ascends, one fused multiply-add per step), so results are
// bit-identical across runs regardless of buffer addresses.

// C[M,N] = (or +=) A[M,K] * B[K,N]
void gemm_nn(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
             std::int64_t N, bool accumulate) {
    for (std::int64_t i = 0; i < M; ++i) {
        double* c = C + i * N;
        if (!accumulate) std::fill(c, c + N, 0.0);
        const double* a = A + i * K;
        for (std::int64_t k = 0; k < K; ++k) {
            const double ak = a[k];
            const double* b = B + k * N;
            for (std::int64_t j = 0; j < N; ++j) c[j] += ak * b[j];
        }
    }
}

// C[M,N] = (or +=) A[M,K] * B[N,K]^T
void gemm_nt(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
             std::int64_t N, bool accumulate) {
    for (std::int64_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (std::int64_t j = 0; j < N; ++j) {
            const double* b = B + j * K;
            double s = accumulate ? c[j] : 0.0;
            for (std::int64_t k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] = s;
        }
    }
}

// C[K,N] = (or +=) A[M,K]^T * B[M,N]
void gemm_tn(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
             std::int64_t N, bool accumulate) {
    if (!accumulate) std::fill(C, C + K * N, 0.0);
    for (std::int64_t m = 0; m < M; ++m) {
        const double* a = A + m * K;
        const double* b = B + m * N;
        for (std::int64_t k = 0; k < K; ++k) {
            const double ak = a[k];
            double* c = C + k * N;
            for (std::int64_t j = 0; j < N; ++j) c[j] += ak * b[j];
        }
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shape mismatch");
}

Tensor unary_ew(const Tensor& a, double (*f)(double), double (*df)(double)) {
    auto ap = a.ptr();
    Tensor out = make_op(a.shape(), {ap}, [ap, df](Node& n) {
        for (std::size_t i = 0; i < n.value.size(); ++i)
            ap->grad[i] += df(ap->value[i]) * n.grad[i];
    });
    auto& v = out.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a.data()[i]);
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto ap = a.ptr(), bp = b.ptr();
    Tensor out = make_op(a.shape(), {ap, bp}, [ap, bp](Node& n) {
        if (ap->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) ap->grad[i] += n.grad[i];
        if (bp->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) bp->grad[i] += n.grad[i];
    });
    auto& v = out.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto ap = a.ptr(), bp = b.ptr();
    Tensor out = make_op(a.shape(), {ap, bp}, [ap, bp](Node& n) {
        if (ap->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) ap->grad[i] += n.grad[i];
        if (bp->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) bp->grad[i] -= n.grad[i];
    });
    auto& v = out.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto ap = a.ptr(), bp = b.ptr();
    Tensor out = make_op(a.shape(), {ap, bp}, [ap, bp](Node& n) {
        if (ap->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) ap->grad[i] += bp->value[i] * n.grad[i];
        if (bp->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) bp->grad[i] += ap->value[i] * n.grad[i];
    });
    auto& v = out.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    auto ap = a.ptr();
    Tensor out = make_op(a.shape(), {ap}, [ap, s](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) ap->grad[i] += s * n.grad[i];
    });
    auto& v = out.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * a.data()[i];
    return out;
}

Tensor relu(const Tensor& a) {
    auto ap = a.ptr();
    Tensor out = make_op(a.shape(), {ap}, [ap](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (ap->value[i] > 0.0) ap->grad[i] += n.grad[i];
    });
    auto& v = out.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, a.data()[i]);
    return out;
}

namespace {
double gelu_f(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }
double gelu_df(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
    const double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}
double softplus_f(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double softplus_df(double x) { return 1.0 / (1.0 + std::exp(-x)); }
} // namespace

Tensor gelu(const Tensor& a) { return unary_ew(a, gelu_f, gelu_df); }
Tensor softplus(const Tensor& a) { return unary_ew(a, softplus_f, softplus_df); }

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel()) throw ShapeError("reshape: element count mismatch");
    auto ap = a.ptr();
    Tensor out = make_op(shape, {ap}, [ap](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) ap->grad[i] += n.grad[i];
    });
    out.data() = a.data();
    return out;
}

namespace {

// dst linear index -> src linear index for a permutation
std::vector<std::int64_t> permute_map(const Shape& in_shape, const std::vector<int>& axes) {
    const auto rank = in_shape.size();
    Shape out_shape(rank);
    for (std::size_t d = 0; d < rank; ++d) out_shape[d] = in_shape[size_t(axes[d])];
    const auto in_strides = row_major_strides(in_shape);
    const auto n = shape_numel(in_shape);
    std::vector<std::int64_t> map(static_cast<std::size_t>(n));

    std::vector<std::int64_t> coord(rank, 0);
    std::int64_t src_off = 0;
    std::vector<std::int64_t> stride_for_out(rank);
    for (std::size_t d = 0; d < rank; ++d) stride_for_out[d] = in_strides[size_t(axes[d])];

    for (std::int64_t i = 0; i < n; ++i) {
        map[static_cast<std::size_t>(i)] = src_off;
        // odometer increment over out coords (last dim fastest)
        for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
            coord[size_t(d)]++;
            src_off += stride_for_out[size_t(d)];
            if (coord[size_t(d)] < out_shape[size_t(d)]) break;
            src_off -= stride_for_out[size_t(d)] * out_shape[size_t(d)];
            coord[size_t(d)] = 0;
        }
    }
    return map;
}

} // namespace

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    const auto rank = a.shape().size();
    if (axes.size() != rank) throw ShapeError("permute: axes rank mismatch");
    Shape out_shape(rank);
    for (std::size_t d = 0; d < rank; ++d) out_shape[d] = a.shape()[size_t(axes[d])];

    auto map = std::make_shared<std::vector<std::int64_t>>(permute_map(a.shape(), axes));
    auto ap = a.ptr();
    Tensor out = make_op(out_shape, {ap}, [ap, map](Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            ap->grad[static_cast<std::size_t>((*map)[i])] += n.grad[i];
    });
    auto& v = out.data();
    const auto& src = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = src[static_cast<std::size_t>((*map)[i])];
    return out;
}

Tensor narrow(const Tensor& a, int dim, std::int64_t start, std::int64_t len) {
    const auto& s = a.shape();
    if (dim < 0 || static_cast<std::size_t>(dim) >= s.size()) throw ShapeError("narrow: bad dim");
    if (start < 0 || start + len > s[size_t(dim)]) throw ShapeError("narrow: range out of bounds");

    Shape out_shape = s;
    out_shape[size_t(dim)] = len;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= s[size_t(d)];
    for (std::size_t d = size_t(dim) + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t in_dim = s[size_t(dim)];

    auto ap = a.ptr();
    Tensor out = make_op(out_shape, {ap}, [ap, outer, inner, in_dim, start, len](Node& n) {
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t d = 0; d < len; ++d) {
                const auto src = static_cast<std::size_t>((o * len + d) * inner);
                const auto dst = static_cast<std::size_t>((o * in_dim + start + d) * inner);
                for (std::int64_t i = 0; i < inner; ++i) ap->grad[dst + size_t(i)] += n.grad[src + size_t(i)];
            }
    });
    auto& v = out.data();
    const auto& src = a.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t d = 0; d < len; ++d)
            std::copy_n(src.begin() + (o * in_dim + start + d) * inner, inner,
                        v.begin() + (o * len + d) * inner);
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int dim) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const auto& s0 = xs[0].shape();
    Shape out_shape = s0;
    std::int64_t total = 0;
    for (const auto& x : xs) {
        const auto& s = x.shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != static_cast<std::size_t>(dim) && s[d] != s0[d])
                throw ShapeError("concat: non-concat dims must match");
        total += s[size_t(dim)];
    }
    out_shape[size_t(dim)] = total;

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= s0[size_t(d)];
    for (std::size_t d = size_t(dim) + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<std::shared_ptr<Node>> parents;
    std::vector<std::int64_t> sizes;
    for (const auto& x : xs) {
        parents.push_back(x.ptr());
        sizes.push_back(x.shape()[size_t(dim)]);
    }
    auto sizes_sp = std::make_shared<std::vector<std::int64_t>>(sizes);

    Tensor out = make_op(out_shape, parents, [sizes_sp, outer, inner, total](Node& n) {
        std::int64_t off = 0;
        for (std::size_t xi = 0; xi < n.parents.size(); ++xi) {
            auto& p = *n.parents[xi];
            const std::int64_t len = (*sizes_sp)[xi];
            if (p.requires_grad) {
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t d = 0; d < len; ++d) {
                        const auto src = static_cast<std::size_t>((o * total + off + d) * inner);
                        const auto dst = static_cast<std::size_t>((o * len + d) * inner);
                        for (std::int64_t i = 0; i < inner; ++i)
                            p.grad[dst + size_t(i)] += n.grad[src + size_t(i)];
                    }
            }
            off += len;
        }
    });
    auto& v = out.data();
    std::int64_t off = 0;
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
        const auto& src = xs[xi].data();
        const std::int64_t len = sizes[xi];
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t d = 0; d < len; ++d)
                std::copy_n(src.begin() + (o * len + d) * inner, inner,
                            v.begin() + (o * total + off + d) * inner);
        off += len;
    }
    return out;
}

Tensor pad_dim(const Tensor& a, int dim, std::int64_t before, std::int64_t after) {
    if (before == 0 && after == 0) return a;
    const auto& s = a.shape();
    Shape out_shape = s;
    out_shape[size_t(dim)] += before + after;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= s[size_t(d)];
    for (std::size_t d = size_t(dim) + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t in_dim = s[size_t(dim)], out_dim = out_shape[size_t(dim)];

    auto ap = a.ptr();
    Tensor out = make_op(out_shape, {ap}, [ap, outer, inner, in_dim, out_dim, before](Node& n) {
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t d = 0; d < in_dim; ++d) {
                const auto src = static_cast<std::size_t>((o * out_dim + before + d) * inner);
                const auto dst = static_cast<std::size_t>((o * in_dim + d) * inner);
                for (std::int64_t i = 0; i < inner; ++i) ap->grad[dst + size_t(i)] += n.grad[src + size_t(i)];
            }
    });
    auto& v = out.data();
    const auto& src = a.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t d = 0; d < in_dim; ++d)
            std::copy_n(src.begin() + (o * in_dim + d) * inner, inner,
                        v.begin() + (o * out_dim + before + d) * inner);
    return out;
}

Tensor roll(const Tensor& a, const std::vector<std::int64_t>& shifts) {
    const auto& s = a.shape();
    if (shifts.size() != s.size()) throw ShapeError("roll: one shift per dim required");
    const auto strides = row_major_strides(s);
    const auto n = a.numel();

    // dst = coord + shift (mod size) per dim; build dst->src map
    auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n));
    std::vector<std::int64_t> coord(s.size(), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t dst = 0;
        for (std::size_t d = 0; d < s.size(); ++d) {
            std::int64_t c = (coord[d] + shifts[d]) % s[d];
            if (c < 0) c += s[d];
            dst += c * strides[d];
        }
        (*map)[static_cast<std::size_t>(dst)] = i;
        for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
            if (++coord[size_t(d)] < s[size_t(d)]) break;
            coord[size_t(d)] = 0;
        }
    }

    auto ap = a.ptr();
    Tensor out = make_op(s, {ap}, [ap, map](Node& n2) {
        for (std::size_t i = 0; i < n2.grad.size(); ++i)
            ap->grad[static_cast<std::size_t>((*map)[i])] += n2.grad[i];
    });
    auto& v = out.data();
    const auto& src = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = src[static_cast<std::size_t>((*map)[i])];
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (ws.size() != 2 || xs.empty() || xs.back() != ws[0])
        throw ShapeError("linear: incompatible shapes");
    const std::int64_t din = ws[0], dout = ws[1];
    const std::int64_t m = x.numel() / din;

    Shape out_shape = xs;
    out_shape.back() = dout;
    std::vector<std::shared_ptr<Node>> parents{x.ptr(), w.ptr()};
    if (b) {
        if (b->shape() != Shape{dout}) throw ShapeError("linear: bias shape mismatch");
        parents.push_back(b->ptr());
    }
    auto xp = x.ptr();
    auto wp = w.ptr();
    auto bp = b ? b->ptr() : nullptr;

    Tensor out = make_op(out_shape, parents, [xp, wp, bp, m, din, dout](Node& n) {
        const double* dy = n.grad.data();
        if (xp->requires_grad) // dX += dY * W^T
            gemm_nt(dy, wp->value.data(), xp->grad.data(), m, dout, din, true);
        if (wp->requires_grad) // dW += X^T * dY
            gemm_tn(xp->value.data(), dy, wp->grad.data(), m, din, dout, true);
        if (bp && bp->requires_grad) {
            double* db = bp->grad.data();
            for (std::int64_t i = 0; i < m; ++i) {
                const double* row = dy + i * dout;
                for (std::int64_t j = 0; j < dout; ++j) db[j] += row[j];
            }
        }
    });
    double* y = out.data().data();
    gemm_nn(x.data().data(), w.data().data(), y, m, din, dout, false);
    if (b) {
        const double* bv = b->data().data();
        for (std::int64_t i = 0; i < m; ++i) {
            double* row = y + i * dout;
            for (std::int64_t j = 0; j < dout; ++j) row[j] += bv[j];
        }
    }
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0]) throw ShapeError("bmm: bad shapes");
    const std::int64_t batch = as[0], m = as[1], k = as[2];
    const std::int64_t kb = trans_b ? bs[2] : bs[1];
    const std::int64_t n = trans_b ? bs[1] : bs[2];
    if (kb != k) throw ShapeError("bmm: inner dims differ");

    auto apn = a.ptr();
    auto bpn = b.ptr();
    Tensor out = make_op({batch, m, n}, {apn, bpn}, [apn, bpn, batch, m, k, n, trans_b](Node& nd) {
        for (std::int64_t t = 0; t < batch; ++t) {
            const double* dy = nd.grad.data() + t * m * n;
            const double* av = apn->value.data() + t * m * k;
            const double* bv = bpn->value.data() + t * k * n; // same size either layout
            if (!trans_b) {
                if (apn->requires_grad) // dA += dY * B^T
                    gemm_nt(dy, bv, apn->grad.data() + t * m * k, m, n, k, true);
                if (bpn->requires_grad) // dB += A^T * dY
                    gemm_tn(av, dy, bpn->grad.data() + t * k * n, m, k, n, true);
            } else {
                if (apn->requires_grad) // dA += dY * B
                    gemm_nn(dy, bv, apn->grad.data() + t * m * k, m, n, k, true);
                if (bpn->requires_grad) // dB += dY^T * A
                    gemm_tn(dy, av, bpn->grad.data() + t * n * k, m, n, k, true);
            }
        }
    });
    for (std::int64_t t = 0; t < batch; ++t) {
        double* y = out.data().data() + t * m * n;
        const double* av = a.data().data() + t * m * k;
        const double* bv = b.data().data() + t * k * n;
        if (!trans_b)
            gemm_nn(av, bv, y, m, k, n, false);
        else
            gemm_nt(av, bv, y, m, k, n, false);
    }
    return out;
}

Tensor softmax_last(const Tensor& x) {
    const auto& s = x.shape();
    const std::int64_t d = s.back();
    const std::int64_t rows = x.numel() / d;
    auto xp = x.ptr();

    Tensor out = make_op(s, {xp}, [xp, rows, d](Node& n) {
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * d;
            const double* dy = n.grad.data() + r * d;
            double dot = 0.0;
            for (std::int64_t i = 0; i < d; ++i) dot += y[i] * dy[i];
            double* dx = xp->grad.data() + r * d;
            for (std::int64_t i = 0; i < d; ++i) dx[i] += y[i] * (dy[i] - dot);
        }
    });
    auto& v = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * d;
        double* y = v.data() + r * d;
        double mx = in[0];
        for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, in[i]);
        double sum = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
            y[i] = std::exp(in[i] - mx);
            sum += y[i];
        }
        for (std::int64_t i = 0; i < d; ++i) y[i] /= sum;
    }
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const auto& s = x.shape();
    const std::int64_t d = s.back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        throw ShapeError("layernorm: affine parameter shape mismatch");
    const std::int64_t rows = x.numel() / d;
    auto xp = x.ptr();
    auto gp = gamma.ptr();
    auto bp = beta.ptr();

    // cache per-row mean and inverse stddev for the backward pass
    auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));

    Tensor out = make_op(s, {xp, gp, bp}, [xp, gp, bp, mu, rstd, rows, d](Node& n) {
        for (std::int64_t r = 0; r < rows; ++r) {
            const double m = (*mu)[size_t(r)], rs = (*rstd)[size_t(r)];
            const double* xv = xp->value.data() + r * d;
            const double* dy = n.grad.data() + r * d;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::int64_t i = 0; i < d; ++i) {
                const double xhat = (xv[i] - m) * rs;
                const double dxhat = dy[i] * gp->value[size_t(i)];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (gp->requires_grad) gp->grad[size_t(i)] += dy[i] * xhat;
                if (bp->requires_grad) bp->grad[size_t(i)] += dy[i];
            }
            if (xp->requires_grad) {
                double* dx = xp->grad.data() + r * d;
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::int64_t i = 0; i < d; ++i) {
                    const double xhat = (xv[i] - m) * rs;
                    const double dxhat = dy[i] * gp->value[size_t(i)];
                    dx[i] += rs * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                }
            }
        }
    });
    auto& v = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xv = x.data().data() + r * d;
        double m = 0.0;
        for (std::int64_t i = 0; i < d; ++i) m += xv[i];
        m /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t i = 0; i < d; ++i) var += (xv[i] - m) * (xv[i] - m);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mu)[size_t(r)] = m;
        (*rstd)[size_t(r)] = rs;
        double* y = v.data() + r * d;
        for (std::int64_t i = 0; i < d; ++i)
            y[i] = (xv[i] - m) * rs * gamma.data()[size_t(i)] + beta.data()[size_t(i)];
    }
    return out;
}

namespace {

// Lowered convolution: col is [Ci*K^3, O] with O = Xo*Yo*Zo so the forward is
// a single GEMM against the [Co, Ci*K^3] weight matrix.
struct ConvDims {
    std::int64_t Ci, X, Y, Z, Co, K, Xo, Yo, Zo;
    std::int64_t cols() const { return Ci * K * K * K; }
    std::int64_t out_voxels() const { return Xo * Yo * Zo; }
    bool direct() const { return K == 3 && Xo == X && Yo == Y && Zo == Z && Z >= 2; }
};

void im2col(const double* x, const ConvDims& d, int stride, int pad, double* col) {
    const std::int64_t O = d.out_voxels();
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < d.Ci; ++ci)
        for (std::int64_t kx = 0; kx < d.K; ++kx)
            for (std::int64_t ky = 0; ky < d.K; ++ky)
                for (std::int64_t kz = 0; kz < d.K; ++kz, ++row) {
                    double* dst = col + row * O;
                    const double* src = x + ci * d.X * d.Y * d.Z;
                    std::int64_t o = 0;
                    for (std::int64_t ox = 0; ox < d.Xo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= d.X) {
                            std::fill_n(dst + o, d.Yo * d.Zo, 0.0);
                            o += d.Yo * d.Zo;
                            continue;
                        }
                        for (std::int64_t oy = 0; oy < d.Yo; ++oy) {
                            const std::int64_t iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= d.Y) {
                                std::fill_n(dst + o, d.Zo, 0.0);
                                o += d.Zo;
                                continue;
                            }
                            const double* s = src + (ix * d.Y + iy) * d.Z - pad + kz;
                            for (std::int64_t oz = 0; oz < d.Zo; ++oz, ++o) {
                                const std::int64_t iz = oz * stride - pad + kz;
                                dst[o] = (iz < 0 || iz >= d.Z) ? 0.0 : s[oz * stride];
                            }
                        }
                    }
                }
}

// scatter-add of the lowered gradient back onto the input volume
void col2im_add(const double* col, const ConvDims& d, int stride, int pad, double* dx) {
    const std::int64_t O = d.out_voxels();
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < d.Ci; ++ci)
        for (std::int64_t kx = 0; kx < d.K; ++kx)
            for (std::int64_t ky = 0; ky < d.K; ++ky)
                for (std::int64_t kz = 0; kz < d.K; ++kz, ++row) {
                    const double* src = col + row * O;
                    double* dst = dx + ci * d.X * d.Y * d.Z;
                    std::int64_t o = 0;
                    for (std::int64_t ox = 0; ox < d.Xo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= d.X) {
                            o += d.Yo * d.Zo;
                            continue;
                        }
                        for (std::int64_t oy = 0; oy < d.Yo; ++oy) {
                            const std::int64_t iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= d.Y) {
                                o += d.Zo;
                                continue;
                            }
                            double* t = dst + (ix * d.Y + iy) * d.Z - pad + kz;
                            for (std::int64_t oz = 0; oz < d.Zo; ++oz, ++o) {
                                const std::int64_t iz = oz * stride - pad + kz;
                                if (iz >= 0 && iz < d.Z) t[oz * stride] += src[o];
                            }
                        }
                    }
                }
}

// Direct kernels for the dominant 3x3x3 / stride 1 / pad 1 case. The inner
// loops run along z with unit stride so the compiler can vectorize the
// three-tap accumulations; no lowering buffer is materialized.

void conv3_direct_fwd(const double* x, const double* w, const double* bias, const ConvDims& d,
                      double* y) {
    const std::int64_t X = d.X, Y = d.Y, Z = d.Z;
    for (std::int64_t co = 0; co < d.Co; ++co) {
        const double b = bias ? bias[co] : 0.0;
        std::fill_n(y + co * X * Y * Z, X * Y * Z, b);
    }
    for (std::int64_t ox = 0; ox < X; ++ox)
        for (std::int64_t oy = 0; oy < Y; ++oy)
            for (std::int64_t ci = 0; ci < d.Ci; ++ci)
                for (std::int64_t kx = 0; kx < 3; ++kx) {
                    const std::int64_t ix = ox + kx - 1;
                    if (ix < 0 || ix >= X) continue;
                    for (std::int64_t ky = 0; ky < 3; ++ky) {
                        const std::int64_t iy = oy + ky - 1;
                        if (iy < 0 || iy >= Y) continue;
                        const double* xr = x + ((ci * X + ix) * Y + iy) * Z;
                        for (std::int64_t co = 0; co < d.Co; ++co) {
                            const double* wk = w + (((co * d.Ci + ci) * 3 + kx) * 3 + ky) * 3;
                            double* yr = y + ((co * X + ox) * Y + oy) * Z;
                            const double w0 = wk[0], w1 = wk[1], w2 = wk[2];
                            yr[0] += w1 * xr[0] + w2 * xr[1];
                            for (std::int64_t oz = 1; oz < Z - 1; ++oz)
                                yr[oz] += w0 * xr[oz - 1] + w1 * xr[oz] + w2 * xr[oz + 1];
                            yr[Z - 1] += w0 * xr[Z - 2] + w1 * xr[Z - 1];
                        }
                    }
                }
}

void conv3_direct_dx(const double* dy, const double* w, const ConvDims& d, double* dx) {
    const std::int64_t X = d.X, Y = d.Y, Z = d.Z;
    for (std::int64_t ix = 0; ix < X; ++ix)
        for (std::int64_t iy = 0; iy < Y; ++iy)
            for (std::int64_t co = 0; co < d.Co; ++co)
                for (std::int64_t kx = 0; kx < 3; ++kx) {
                    const std::int64_t ox = ix - kx + 1;
                    if (ox < 0 || ox >= X) continue;
                    for (std::int64_t ky = 0; ky < 3; ++ky) {
                        const std::int64_t oy = iy - ky + 1;
                        if (oy < 0 || oy >= Y) continue;
                        const double* dyr = dy + ((co * X + ox) * Y + oy) * Z;
                        for (std::int64_t ci = 0; ci < d.Ci; ++ci) {
                            const double* wk = w + (((co * d.Ci + ci) * 3 + kx) * 3 + ky) * 3;
                            double* dxr = dx + ((ci * X + ix) * Y + iy) * Z;
                            const double w0 = wk[0], w1 = wk[1], w2 = wk[2];
                            dxr[0] += w0 * dyr[1] + w1 * dyr[0];
                            for (std::int64_t iz = 1; iz < Z - 1; ++iz)
                                dxr[iz] += w0 * dyr[iz + 1] + w1 * dyr[iz] + w2 * dyr[iz - 1];
                            dxr[Z - 1] += w1 * dyr[Z - 1] + w2 * dyr[Z - 2];
                        }
                    }
                }
}

void conv3_direct_dw(const double* x, const double* dy, const ConvDims& d, double* dw) {
    const std::int64_t X = d.X, Y = d.Y, Z = d.Z;
    for (std::int64_t ox = 0; ox < X; ++ox)
        for (std::int64_t oy = 0; oy < Y; ++oy)
            for (std::int64_t ci = 0; ci < d.Ci; ++ci)
                for (std::int64_t kx = 0; kx < 3; ++kx) {
                    const std::int64_t ix = ox + kx - 1;
                    if (ix < 0 || ix >= X) continue;
                    for (std::int64_t ky = 0; ky < 3; ++ky) {
                        const std::int64_t iy = oy + ky - 1;
                        if (iy < 0 || iy >= Y) continue;
                        const double* xr = x + ((ci * X + ix) * Y + iy) * Z;
                        for (std::int64_t co = 0; co < d.Co; ++co) {
                            const double* dyr = dy + ((co * X + ox) * Y + oy) * Z;
                            double* dwk = dw + (((co * d.Ci + ci) * 3 + kx) * 3 + ky) * 3;
                            double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                            s1 += xr[0] * dyr[0];
                            s2 += xr[1] * dyr[0];
                            for (std::int64_t oz = 1; oz < Z - 1; ++oz) {
                                s0 += xr[oz - 1] * dyr[oz];
                                s1 += xr[oz] * dyr[oz];
                                s2 += xr[oz + 1] * dyr[oz];
                            }
                            s0 += xr[Z - 2] * dyr[Z - 1];
                            s1 += xr[Z - 1] * dyr[Z - 1];
                            dwk[0] += s0;
                            dwk[1] += s1;
                            dwk[2] += s2;
                        }
                    }
                }
}

} // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, int stride,
              int pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 5 || ws.size() != 5) throw ShapeError("conv3d: rank-5 tensors required");
    if (xs[1] != ws[1]) throw ShapeError("conv3d: channel mismatch");
    if (ws[2] != ws[3] || ws[3] != ws[4]) throw ShapeError("conv3d: cubic kernel required");
    ConvDims d;
    d.Ci = xs[1];
    d.X = xs[2];
    d.Y = xs[3];
    d.Z = xs[4];
    d.Co = ws[0];
    d.K = ws[2];
    d.Xo = (d.X + 2 * pad - d.K) / stride + 1;
    d.Yo = (d.Y + 2 * pad - d.K) / stride + 1;
    d.Zo = (d.Z + 2 * pad - d.K) / stride + 1;
    const std::int64_t N = xs[0];
    if (d.Xo < 1 || d.Yo < 1 || d.Zo < 1) throw ShapeError("conv3d: output would be empty");
    if (b && b->shape() != Shape{d.Co}) throw ShapeError("conv3d: bias shape mismatch");

    auto xp = x.ptr();
    auto wp = w.ptr();
    auto bp = b ? b->ptr() : nullptr;
    std::vector<std::shared_ptr<Node>> parents{xp, wp};
    if (bp) parents.push_back(bp);

    const std::int64_t R = d.cols(), O = d.out_voxels();
    const std::int64_t in_sz = d.Ci * d.X * d.Y * d.Z;
    const std::int64_t out_sz = d.Co * O;
    const bool direct = stride == 1 && pad == 1 && d.direct();

    Tensor out = make_op(
        {N, d.Co, d.Xo, d.Yo, d.Zo}, parents,
        [xp, wp, bp, d, N, R, O, in_sz, out_sz, stride, pad, direct](Node& n) {
            if (direct) {
                for (std::int64_t nn = 0; nn < N; ++nn) {
                    const double* dy = n.grad.data() + nn * out_sz;
                    if (xp->requires_grad)
                        conv3_direct_dx(dy, wp->value.data(), d, xp->grad.data() + nn * in_sz);
                    if (wp->requires_grad)
                        conv3_direct_dw(xp->value.data() + nn * in_sz, dy, d, wp->grad.data());
                }
            } else {
                std::vector<double> col(static_cast<std::size_t>(R * O));
                std::vector<double> dcol;
                if (xp->requires_grad) dcol.resize(static_cast<std::size_t>(R * O));
                for (std::int64_t nn = 0; nn < N; ++nn) {
                    const double* dy = n.grad.data() + nn * out_sz;
                    if (wp->requires_grad) { // dW += dY * col^T
                        im2col(xp->value.data() + nn * in_sz, d, stride, pad, col.data());
                        gemm_nt(dy, col.data(), wp->grad.data(), d.Co, O, R, true);
                    }
                    if (xp->requires_grad) { // dcol = W^T * dY
                        gemm_tn(wp->value.data(), dy, dcol.data(), d.Co, R, O, false);
                        col2im_add(dcol.data(), d, stride, pad, xp->grad.data() + nn * in_sz);
                    }
                }
            }
            if (bp && bp->requires_grad) {
                for (std::int64_t co = 0; co < d.Co; ++co) {
                    double acc = 0.0;
                    for (std::int64_t nn = 0; nn < N; ++nn)
                        for (std::int64_t o = 0; o < O; ++o)
                            acc += n.grad[size_t(nn * out_sz + co * O + o)];
                    bp->grad[size_t(co)] += acc;
                }
            }
        });

    if (direct) {
        for (std::int64_t nn = 0; nn < N; ++nn)
            conv3_direct_fwd(x.data().data() + nn * in_sz, w.data().data(),
                             b ? b->data().data() : nullptr, d, out.data().data() + nn * out_sz);
    } else {
        std::vector<double> col(static_cast<std::size_t>(R * O));
        for (std::int64_t nn = 0; nn < N; ++nn) {
            im2col(x.data().data() + nn * in_sz, d, stride, pad, col.data());
            double* y = out.data().data() + nn * out_sz;
            gemm_nn(w.data().data(), col.data(), y, d.Co, R, O, false);
            if (b)
                for (std::int64_t co = 0; co < d.Co; ++co)
                    for (std::int64_t o = 0; o < O; ++o) y[co * O + o] += b->data()[size_t(co)];
        }
    }
    return out;
}

Tensor maxpool3d_2(const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 5) throw ShapeError("maxpool3d_2: rank-5 tensor required");
    const std::int64_t N = s[0], C = s[1], X = s[2], Y = s[3], Z = s[4];
    if (X % 2 || Y % 2 || Z % 2) throw ShapeError("maxpool3d_2: odd spatial dims");
    const std::int64_t Xo = X / 2, Yo = Y / 2, Zo = Z / 2;

    auto xp = x.ptr();
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(N * C * Xo * Yo * Zo));

    Tensor out = make_op({N, C, Xo, Yo, Zo}, {xp}, [xp, argmax](Node& n) {
        for (std::size_t o = 0; o < n.grad.size(); ++o)
            xp->grad[static_cast<std::size_t>((*argmax)[o])] += n.grad[o];
    });
    double* y = out.data().data();
    const double* xv = x.data().data();
    std::size_t o = 0;
    for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t ox = 0; ox < Xo; ++ox)
            for (std::int64_t oy = 0; oy < Yo; ++oy)
                for (std::int64_t oz = 0; oz < Zo; ++oz) {
                    double best = -1e300;
                    std::int64_t bi = 0;
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz) {
                                const std::int64_t idx =
                                    ((nc * X + 2 * ox + dx) * Y + 2 * oy + dy) * Z + 2 * oz + dz;
                                if (xv[idx] > best) {
                                    best = xv[idx];
                                    bi = idx;
                                }
                            }
                    y[o] = best;
                    (*argmax)[o++] = bi;
                }
    return out;
}

Tensor upsample_nearest3d_2(const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 5) throw ShapeError("upsample_nearest3d_2: rank-5 tensor required");
    const std::int64_t N = s[0], C = s[1], X = s[2], Y = s[3], Z = s[4];
    const std::int64_t Xo = 2 * X, Yo = 2 * Y, Zo = 2 * Z;

    auto xp = x.ptr();
    Tensor out = make_op({N, C, Xo, Yo, Zo}, {xp}, [xp, N, C, X, Y, Z, Xo, Yo, Zo](Node& n) {
        for (std::int64_t nc = 0; nc < N * C; ++nc)
            for (std::int64_t ix = 0; ix < X; ++ix)
                for (std::int64_t iy = 0; iy < Y; ++iy)
                    for (std::int64_t iz = 0; iz < Z; ++iz) {
                        double acc = 0.0;
                        for (int dx = 0; dx < 2; ++dx)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dz = 0; dz < 2; ++dz)
                                    acc += n.grad[((nc * Xo + 2 * ix + dx) * Yo + 2 * iy + dy) * Zo +
                                                  2 * iz + dz];
                        xp->grad[((nc * X + ix) * Y + iy) * Z + iz] += acc;
                    }
    });
    double* y = out.data().data();
    const double* xv = x.data().data();
    for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t ox = 0; ox < Xo; ++ox)
            for (std::int64_t oy = 0; oy < Yo; ++oy)
                for (std::int64_t oz = 0; oz < Zo; ++oz)
                    y[((nc * Xo + ox) * Yo + oy) * Zo + oz] =
                        xv[((nc * X + ox / 2) * Y + oy / 2) * Z + oz / 2];
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& idx) {
    const auto& s = table.shape();
    if (s.size() != 2) throw ShapeError("gather_rows: 2D table required");
    const std::int64_t H = s[1];
    const auto M = static_cast<std::int64_t>(idx.size());
    auto tp = table.ptr();
    auto idx_sp = std::make_shared<std::vector<std::int64_t>>(idx);

    Tensor out = make_op({M, H}, {tp}, [tp, idx_sp, H](Node& n) {
        for (std::size_t m = 0; m < idx_sp->size(); ++m) {
            const auto r = static_cast<std::size_t>((*idx_sp)[m]);
            for (std::int64_t h = 0; h < H; ++h)
                tp->grad[r * size_t(H) + size_t(h)] += n.grad[m * size_t(H) + size_t(h)];
        }
    });
    auto& v = out.data();
    for (std::size_t m = 0; m < idx.size(); ++m)
        std::copy_n(table.data().begin() + idx[m] * H, H, v.begin() + std::int64_t(m) * H);
    return out;
}

Tensor add_attn_extras(const Tensor& logits, const Tensor& bias, const std::vector<double>& mask,
                       std::int64_t n_heads, std::int64_t n_windows) {
    const auto& s = logits.shape();
    if (s.size() != 3) throw ShapeError("add_attn_extras: rank-3 logits required");
    const std::int64_t B = s[0], T = s[1];
    if (s[2] != T) throw ShapeError("add_attn_extras: square logits required");
    if (bias.shape() != Shape{n_heads, T, T}) throw ShapeError("add_attn_extras: bias shape");
    if (B % (n_heads * n_windows) != 0) throw ShapeError("add_attn_extras: batch not divisible");
    if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != n_windows * T * T)
        throw ShapeError("add_attn_extras: mask size");

    auto lp = logits.ptr();
    auto bp = bias.ptr();
    const std::int64_t TT = T * T;

    Tensor out = make_op({B, T, T}, {lp, bp}, [lp, bp, B, TT, n_heads](Node& n) {
        if (lp->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) lp->grad[i] += n.grad[i];
        if (bp->requires_grad) {
            for (std::int64_t b = 0; b < B; ++b) {
                const std::int64_t h = b % n_heads;
                for (std::int64_t i = 0; i < TT; ++i)
                    bp->grad[static_cast<std::size_t>(h * TT + i)] +=
                        n.grad[static_cast<std::size_t>(b * TT + i)];
            }
        }
    });
    auto& v = out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        const std::int64_t h = b % n_heads;
        const std::int64_t w = (b / n_heads) % n_windows;
        for (std::int64_t i = 0; i < TT; ++i) {
            double val = logits.data()[static_cast<std::size_t>(b * TT + i)] +
                         bias.data()[static_cast<std::size_t>(h * TT + i)];
            if (!mask.empty()) val += mask[static_cast<std::size_t>(w * TT + i)];
            v[static_cast<std::size_t>(b * TT + i)] = val;
        }
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    const auto n = x.numel();
    auto xp = x.ptr();
    Tensor out = make_op({1}, {xp}, [xp, n](Node& nd) {
        const double g = nd.grad[0] / static_cast<double>(n);
        for (auto& d : xp->grad) d += g;
    });
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out.data()[0] = acc / static_cast<double>(n);
    return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    const auto n = pred.numel();
    auto pp = pred.ptr(), tp = target.ptr();
    Tensor out = make_op({1}, {pp, tp}, [pp, tp, n](Node& nd) {
        const double g = 2.0 * nd.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < pp->value.size(); ++i) {
            const double d = pp->value[i] - tp->value[i];
            if (pp->requires_grad) pp->grad[i] += g * d;
            if (tp->requires_grad) tp->grad[i] -= g * d;
        }
    });
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data().size(); ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    out.data()[0] = acc / static_cast<double>(n);
    return out;
}

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mae_loss");
    const auto n = pred.numel();
    auto pp = pred.ptr(), tp = target.ptr();
    Tensor out = make_op({1}, {pp, tp}, [pp, tp, n](Node& nd) {
        const double g = nd.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < pp->value.size(); ++i) {
            const double s = pp->value[i] > tp->value[i] ? 1.0 : (pp->value[i] < tp->value[i] ? -1.0 : 0.0);
            if (pp->requires_grad) pp->grad[i] += g * s;
            if (tp->requires_grad) tp->grad[i] -= g * s;
        }
    });
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data().size(); ++i)
        acc += std::abs(pred.data()[i] - target.data()[i]);
    out.data()[0] = acc / static_cast<double>(n);
    return out;
}

Tensor smoothness_loss(const Tensor& x, bool l1) {
    const auto& s = x.shape();
    if (s.size() != 5) throw ShapeError("smoothness_loss: rank-5 tensor required");
    const std::int64_t N = s[0], C = s[1], X = s[2], Y = s[3], Z = s[4];
    const double denom = static_cast<double>(N * C * X * Y * Z);
    auto xp = x.ptr();

    auto at = [=](const double* base, std::int64_t nc, std::int64_t i, std::int64_t j,
                  std::int64_t k) { return base[((nc * X + i) * Y + j) * Z + k]; };

    Tensor out = make_op({1}, {xp}, [xp, N, C, X, Y, Z, denom, l1, at](Node& nd) {
        const double g = nd.grad[0] / denom;
        const double* v = xp->value.data();
        double* dx = xp->grad.data();
        auto dat = [=](std::int64_t nc, std::int64_t i, std::int64_t j, std::int64_t k) {
            return ((nc * X + i) * Y + j) * Z + k;
        };
        for (std::int64_t nc = 0; nc < N * C; ++nc)
            for (std::int64_t i = 0; i < X; ++i)
                for (std::int64_t j = 0; j < Y; ++j)
                    for (std::int64_t k = 0; k < Z; ++k) {
                        const double v0 = at(v, nc, i, j, k);
                        if (i + 1 < X) {
                            const double d = at(v, nc, i + 1, j, k) - v0;
                            const double gd = l1 ? g * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) : 2.0 * g * d;
                            dx[dat(nc, i + 1, j, k)] += gd;
                            dx[dat(nc, i, j, k)] -= gd;
                        }
                        if (j + 1 < Y) {
                            const double d = at(v, nc, i, j + 1, k) - v0;
                            const double gd = l1 ? g * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) : 2.0 * g * d;
                            dx[dat(nc, i, j + 1, k)] += gd;
                            dx[dat(nc, i, j, k)] -= gd;
                        }
                        if (k + 1 < Z) {
                            const double d = at(v, nc, i, j, k + 1) - v0;
                            const double gd = l1 ? g * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) : 2.0 * g * d;
                            dx[dat(nc, i, j, k + 1)] += gd;
                            dx[dat(nc, i, j, k)] -= gd;
                        }
                    }
    });
    const double* v = x.data().data();
    double acc = 0.0;
    for (std::int64_t nc = 0; nc < N * C; ++nc)
        for (std::int64_t i = 0; i < X; ++i)
            for (std::int64_t j = 0; j < Y; ++j)
                for (std::int64_t k = 0; k < Z; ++k) {
                    const double v0 = at(v, nc, i, j, k);
                    if (i + 1 < X) {
                        const double d = at(v, nc, i + 1, j, k) - v0;
                        acc += l1 ? std::abs(d) : d * d;
                    }
                    if (j + 1 < Y) {
                        const double d = at(v, nc, i, j + 1, k) - v0;
                        acc += l1 ? std::abs(d) : d * d;
                    }
                    if (k + 1 < Z) {
                        const double d = at(v, nc, i, j, k + 1) - v0;
                        acc += l1 ? std::abs(d) : d * d;
                    }
                }
    out.data()[0] = acc / denom;
    return out;
}

} // namespace regerr::nn

#include "sgalign/ops.hpp"

#include <cmath>

#include "sgalign/kernels.hpp"

namespace sgalign::ops {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

bool track(std::initializer_list<const Tensor*> inputs) {
    return Tape::current() != nullptr && any_requires_grad(inputs);
}

Tensor make_output(Shape shape, bool tracked) {
    Tensor out = Tensor::zeros(std::move(shape));
    if (tracked) {
        out.node()->requires_grad = true;
        out.node()->is_leaf = false;
        out.node()->ensure_grad();
    }
    return out;
}

void require_2d(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + " must be 2D, got " + shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

double* maybe_grad(const NodePtr& n) {
    if (!n->requires_grad) return nullptr;
    n->ensure_grad();
    return n->grad.data();
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
    }
    const bool tracked = track({&a, &b});
    Tensor out = make_output({m, n}, tracked);
    const auto& K = kernels::active();
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            K.axpy(pa[i * k + l], pb + l * n, pc + i * n, n);
        }
    }
    if (tracked) {
        NodePtr na = a.node(), nb = b.node(), nc = out.node();
        Tape::current()->record(nc, [na, nb, nc, m, k, n]() {
            const auto& Kb = kernels::active();
            const double* dc = nc->grad.data();
            if (double* da = maybe_grad(na)) { // dA = dC * B^T
                const double* B = nb->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t l = 0; l < k; ++l) {
                        da[i * k + l] += Kb.dot(dc + i * n, B + l * n, n);
                    }
                }
            }
            if (double* db = maybe_grad(nb)) { // dB = A^T * dC
                const double* A = na->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t l = 0; l < k; ++l) {
                        Kb.axpy(A[i * k + l], dc + i * n, db + l * n, n);
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose input");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    const bool tracked = track({&a});
    Tensor out = make_output({c, r}, tracked);
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) po[j * r + i] = pa[i * c + j];
    }
    if (tracked) {
        NodePtr na = a.node(), no = out.node();
        Tape::current()->record(no, [na, no, r, c]() {
            if (double* da = maybe_grad(na)) {
                const double* dg = no->grad.data();
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) da[i * c + j] += dg[j * r + i];
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const bool tracked = track({&a, &b});
    Tensor out = make_output(a.shape(), tracked);
    kernels::active().add(a.data(), b.data(), out.data(), a.numel());
    if (tracked) {
        NodePtr na = a.node(), nb = b.node(), no = out.node();
        Tape::current()->record(no, [na, nb, no]() {
            const std::size_t n = no->grad.size();
            const auto& K = kernels::active();
            if (double* da = maybe_grad(na)) K.axpy(1.0, no->grad.data(), da, n);
            if (double* db = maybe_grad(nb)) K.axpy(1.0, no->grad.data(), db, n);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const bool tracked = track({&a, &b});
    Tensor out = make_output(a.shape(), tracked);
    kernels::active().sub(a.data(), b.data(), out.data(), a.numel());
    if (tracked) {
        NodePtr na = a.node(), nb = b.node(), no = out.node();
        Tape::current()->record(no, [na, nb, no]() {
            const std::size_t n = no->grad.size();
            const auto& K = kernels::active();
            if (double* da = maybe_grad(na)) K.axpy(1.0, no->grad.data(), da, n);
            if (double* db = maybe_grad(nb)) K.axpy(-1.0, no->grad.data(), db, n);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const bool tracked = track({&a, &b});
    Tensor out = make_output(a.shape(), tracked);
    kernels::active().mul(a.data(), b.data(), out.data(), a.numel());
    if (tracked) {
        NodePtr na = a.node(), nb = b.node(), no = out.node();
        Tape::current()->record(no, [na, nb, no]() {
            const std::size_t n = no->grad.size();
            const double* dg = no->grad.data();
            if (double* da = maybe_grad(na)) {
                const double* pb = nb->data.data();
                for (std::size_t i = 0; i < n; ++i) da[i] += dg[i] * pb[i];
            }
            if (double* db = maybe_grad(nb)) {
                const double* pa = na->data.data();
                for (std::size_t i = 0; i < n; ++i) db[i] += dg[i] * pa[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    const bool tracked = track({&a});
    Tensor out = make_output(a.shape(), tracked);
    kernels::active().scale(a.data(), s, out.data(), a.numel());
    if (tracked) {
        NodePtr na = a.node(), no = out.node();
        Tape::current()->record(no, [na, no, s]() {
            if (double* da = maybe_grad(na)) {
                kernels::active().axpy(s, no->grad.data(), da, no->grad.size());
            }
        });
    }
    return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
    const std::size_t c = x.cols();
    if (bias.numel() != c) {
        throw ShapeError("add_rowwise: bias length " + shape_to_string(bias.shape()) +
                         " does not match last axis of " + shape_to_string(x.shape()));
    }
    const std::size_t r = x.numel() / c;
    const bool tracked = track({&x, &bias});
    Tensor out = make_output(x.shape(), tracked);
    const auto& K = kernels::active();
    for (std::size_t i = 0; i < r; ++i) {
        K.add(x.data() + i * c, bias.data(), out.data() + i * c, c);
    }
    if (tracked) {
        NodePtr nx = x.node(), nb = bias.node(), no = out.node();
        Tape::current()->record(no, [nx, nb, no, r, c]() {
            const auto& Kb = kernels::active();
            const double* dg = no->grad.data();
            if (double* dx = maybe_grad(nx)) Kb.axpy(1.0, dg, dx, r * c);
            if (double* db = maybe_grad(nb)) {
                for (std::size_t i = 0; i < r; ++i) Kb.axpy(1.0, dg + i * c, db, c);
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    const bool tracked = track({&x});
    Tensor out = make_output(x.shape(), tracked);
    const std::size_t n = x.numel();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        Tape::current()->record(no, [nx, no, n]() {
            if (double* dx = maybe_grad(nx)) {
                const double* dg = no->grad.data();
                const double* pxv = nx->data.data();
                for (std::size_t i = 0; i < n; ++i) {
                    if (pxv[i] > 0.0) dx[i] += dg[i];
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    const bool tracked = track({&x});
    Tensor out = make_output(x.shape(), tracked);
    const std::size_t n = x.numel();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * kInvSqrt2));
    }
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        Tape::current()->record(no, [nx, no, n]() {
            if (double* dx = maybe_grad(nx)) {
                const double* dg = no->grad.data();
                const double* pxv = nx->data.data();
                for (std::size_t i = 0; i < n; ++i) {
                    const double v = pxv[i];
                    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                    dx[i] += dg[i] * (cdf + v * pdf);
                }
            }
        });
    }
    return out;
}

Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint8_t>& keep) {
    const std::size_t n = logits.cols();
    if (keep.size() != n) {
        throw ShapeError("masked_softmax: mask length " + std::to_string(keep.size()) +
                         " does not match last axis of " + shape_to_string(logits.shape()));
    }
    bool any_keep = false;
    for (std::uint8_t k : keep) any_keep = any_keep || (k != 0);
    if (!any_keep) throw NumericError("masked_softmax: all positions masked, no attention target");

    const std::size_t rows = logits.numel() / n;
    const bool tracked = track({&logits});
    Tensor out = make_output(logits.shape(), tracked);
    const double* px = logits.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * n;
        double* orow = po + r * n;
        double m = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            if (keep[j] && row[j] > m) m = row[j];
        }
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (keep[j]) {
                orow[j] = std::exp(row[j] - m);
                s += orow[j];
            } else {
                orow[j] = 0.0;
            }
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
    }
    if (tracked) {
        NodePtr nx = logits.node(), no = out.node();
        auto mask = keep;
        Tape::current()->record(no, [nx, no, mask, rows, n]() {
            if (double* dx = maybe_grad(nx)) {
                const double* dg = no->grad.data();
                const double* y = no->data.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* yrow = y + r * n;
                    const double* grow = dg + r * n;
                    double inner = 0.0;
                    for (std::size_t j = 0; j < n; ++j) inner += grow[j] * yrow[j];
                    double* drow = dx + r * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        if (mask[j]) drow[j] += yrow[j] * (grow[j] - inner);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw NumericError("layer_norm: eps must be positive");
    const std::size_t d = x.cols();
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias must have length " + std::to_string(d));
    }
    const std::size_t rows = x.numel() / d;
    const bool tracked = track({&x, &gain, &bias});
    Tensor out = make_output(x.shape(), tracked);

    // per-row inverse stddev and mean, kept for backward
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    auto means = std::make_shared<std::vector<double>>(rows);
    const double* px = x.data();
    const double* pg = gain.data();
    const double* pb = bias.data();
    double* po = out.data();
    const auto& K = kernels::active();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        const double mu = K.sum(row, d) / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*means)[r] = mu;
        (*inv_std)[r] = is;
        double* orow = po + r * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = (row[j] - mu) * is * pg[j] + pb[j];
    }
    if (tracked) {
        NodePtr nx = x.node(), ng = gain.node(), nb = bias.node(), no = out.node();
        Tape::current()->record(no, [nx, ng, nb, no, inv_std, means, rows, d]() {
            const double* dg = no->grad.data();
            const double* px2 = nx->data.data();
            const double* pg2 = ng->data.data();
            double* dx = maybe_grad(nx);
            double* dgain = maybe_grad(ng);
            double* dbias = maybe_grad(nb);
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double mu = (*means)[r];
                const double is = (*inv_std)[r];
                const double* grow = dg + r * d;
                const double* xrow = px2 + r * d;
                // dxhat = dy * gain; accumulate the two row sums it needs
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double xhat = (xrow[j] - mu) * is;
                    const double dxhat = grow[j] * pg2[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (dgain) dgain[j] += grow[j] * xhat;
                    if (dbias) dbias[j] += grow[j];
                }
                if (dx) {
                    double* drow = dx + r * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double xhat = (xrow[j] - mu) * is;
                        const double dxhat = grow[j] * pg2[j];
                        drow[j] += is * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& x) {
    require_2d(x, "log_softmax input");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    const bool tracked = track({&x});
    Tensor out = make_output({r, c}, tracked);
    const auto& K = kernels::active();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = px + i * c;
        const double m = K.max(row, c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < c; ++j) po[i * c + j] = row[j] - lse;
    }
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        Tape::current()->record(no, [nx, no, r, c]() {
            if (double* dx = maybe_grad(nx)) {
                const double* dg = no->grad.data();
                const double* y = no->data.data();
                for (std::size_t i = 0; i < r; ++i) {
                    double total = 0.0;
                    for (std::size_t j = 0; j < c; ++j) total += dg[i * c + j];
                    for (std::size_t j = 0; j < c; ++j) {
                        dx[i * c + j] += dg[i * c + j] - std::exp(y[i * c + j]) * total;
                    }
                }
            }
        });
    }
    return out;
}

Tensor take_diagonal(const Tensor& square) {
    require_2d(square, "take_diagonal input");
    const std::size_t b = square.shape()[0];
    if (square.shape()[1] != b) {
        throw ShapeError("take_diagonal requires a square matrix, got " +
                         shape_to_string(square.shape()));
    }
    const bool tracked = track({&square});
    Tensor out = make_output({b}, tracked);
    for (std::size_t i = 0; i < b; ++i) out.data()[i] = square.data()[i * b + i];
    if (tracked) {
        NodePtr ns = square.node(), no = out.node();
        Tape::current()->record(no, [ns, no, b]() {
            if (double* ds = maybe_grad(ns)) {
                for (std::size_t i = 0; i < b; ++i) ds[i * b + i] += no->grad[i];
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    const bool tracked = track({&x});
    Tensor out = make_output({1}, tracked);
    out.data()[0] = kernels::active().sum(x.data(), x.numel());
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        Tape::current()->record(no, [nx, no]() {
            if (double* dx = maybe_grad(nx)) {
                const double g = no->grad[0];
                for (std::size_t i = 0; i < nx->data.size(); ++i) dx[i] += g;
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    require_2d(x, "gather_rows input");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    for (std::size_t idx : indices) {
        if (idx >= r) {
            throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                             shape_to_string(x.shape()));
        }
    }
    const bool tracked = track({&x});
    Tensor out = make_output({indices.size(), c}, tracked);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = x.data() + indices[i] * c;
        double* dst = out.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] = src[j];
    }
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        auto idx = indices;
        Tape::current()->record(no, [nx, no, idx, c]() {
            if (double* dx = maybe_grad(nx)) {
                const auto& K = kernels::active();
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    K.axpy(1.0, no->grad.data() + i * c, dx + idx[i] * c, c);
                }
            }
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty part list");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) {
        if (p.cols() != c) {
            throw ShapeError("concat_rows: column mismatch " + shape_to_string(p.shape()));
        }
        total += p.numel() / c;
        ptrs.push_back(&p);
    }
    bool tracked = Tape::current() != nullptr;
    if (tracked) {
        bool any = false;
        for (const Tensor& p : parts) any = any || p.requires_grad();
        tracked = any;
    }
    Tensor out = make_output({total, c}, tracked);
    std::size_t row = 0;
    for (const Tensor& p : parts) {
        const std::size_t pr = p.numel() / c;
        for (std::size_t i = 0; i < pr * c; ++i) out.data()[row * c + i] = p.data()[i];
        row += pr;
    }
    if (tracked) {
        std::vector<NodePtr> nodes;
        std::vector<std::size_t> row_counts;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node());
            row_counts.push_back(p.numel() / c);
        }
        NodePtr no = out.node();
        Tape::current()->record(no, [nodes, row_counts, no, c]() {
            const auto& K = kernels::active();
            std::size_t row2 = 0;
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                if (double* dp = maybe_grad(nodes[p])) {
                    K.axpy(1.0, no->grad.data() + row2 * c, dp, row_counts[p] * c);
                }
                row2 += row_counts[p];
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    require_2d(x, "slice_cols input");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (c0 >= c1 || c1 > c) {
        throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") for " + shape_to_string(x.shape()));
    }
    const std::size_t w = c1 - c0;
    const bool tracked = track({&x});
    Tensor out = make_output({r, w}, tracked);
    for (std::size_t i = 0; i < r; ++i) {
        const double* src = x.data() + i * c + c0;
        double* dst = out.data() + i * w;
        for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
    }
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        Tape::current()->record(no, [nx, no, r, c, c0, w]() {
            if (double* dx = maybe_grad(nx)) {
                const auto& K = kernels::active();
                for (std::size_t i = 0; i < r; ++i) {
                    K.axpy(1.0, no->grad.data() + i * w, dx + i * c + c0, w);
                }
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty part list");
    require_2d(parts.front(), "concat_cols input");
    const std::size_t r = parts.front().shape()[0];
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols input");
        if (p.shape()[0] != r) {
            throw ShapeError("concat_cols: row mismatch " + shape_to_string(p.shape()));
        }
        total += p.shape()[1];
    }
    bool tracked = false;
    for (const Tensor& p : parts) tracked = tracked || p.requires_grad();
    tracked = tracked && Tape::current() != nullptr;
    Tensor out = make_output({r, total}, tracked);
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.shape()[1];
        for (std::size_t i = 0; i < r; ++i) {
            const double* src = p.data() + i * pc;
            double* dst = out.data() + i * total + col;
            for (std::size_t j = 0; j < pc; ++j) dst[j] = src[j];
        }
        col += pc;
    }
    if (tracked) {
        std::vector<NodePtr> nodes;
        std::vector<std::size_t> widths;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node());
            widths.push_back(p.shape()[1]);
        }
        NodePtr no = out.node();
        Tape::current()->record(no, [nodes, widths, no, r, total]() {
            std::size_t col2 = 0;
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                if (double* dp = maybe_grad(nodes[p])) {
                    for (std::size_t i = 0; i < r; ++i) {
                        const double* g = no->grad.data() + i * total + col2;
                        double* d = dp + i * widths[p];
                        for (std::size_t j = 0; j < widths[p]; ++j) d[j] += g[j];
                    }
                }
                col2 += widths[p];
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
    }
    const bool tracked = track({&x});
    Tensor out = make_output(std::move(shape), tracked);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i];
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        Tape::current()->record(no, [nx, no]() {
            if (double* dx = maybe_grad(nx)) {
                kernels::active().axpy(1.0, no->grad.data(), dx, no->grad.size());
            }
        });
    }
    return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
    require_2d(x, "l2_normalize input");
    const std::size_t r = x.shape()[0], d = x.shape()[1];
    const bool tracked = track({&x});
    Tensor out = make_output({r, d}, tracked);
    auto norms = std::make_shared<std::vector<double>>(r);
    const auto& K = kernels::active();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.data() + i * d;
        const double nrm = std::sqrt(K.dot(row, row, d));
        if (nrm <= 1e-12) {
            throw NumericError("l2_normalize: row " + std::to_string(i) +
                               " has near-zero norm, cosine similarity undefined");
        }
        (*norms)[i] = nrm;
        K.scale(row, 1.0 / nrm, out.data() + i * d, d);
    }
    if (tracked) {
        NodePtr nx = x.node(), no = out.node();
        Tape::current()->record(no, [nx, no, norms, r, d]() {
            if (double* dx = maybe_grad(nx)) {
                const auto& Kb = kernels::active();
                for (std::size_t i = 0; i < r; ++i) {
                    const double* y = no->data.data() + i * d;
                    const double* g = no->grad.data() + i * d;
                    const double proj = Kb.dot(g, y, d);
                    const double inv = 1.0 / (*norms)[i];
                    double* drow = dx + i * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        drow[j] += (g[j] - y[j] * proj) * inv;
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride) {
    if (input.rank() != 3) throw ShapeError("conv2d: input must be [H,W,C], got " + shape_to_string(input.shape()));
    if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [kh,kw,Cin,Cout], got " + shape_to_string(weight.shape()));
    const std::size_t H = input.shape()[0], W = input.shape()[1], Cin = input.shape()[2];
    const std::size_t kh = weight.shape()[0], kw = weight.shape()[1];
    const std::size_t wc_in = weight.shape()[2], Cout = weight.shape()[3];
    if (wc_in != Cin) {
        throw ShapeError("conv2d: channel mismatch " + shape_to_string(input.shape()) + " vs " +
                         shape_to_string(weight.shape()));
    }
    if (bias.numel() != Cout) throw ShapeError("conv2d: bias length must equal Cout");
    if (stride == 0 || H < kh || W < kw || (H - kh) % stride != 0 || (W - kw) % stride != 0) {
        throw ShapeError("conv2d: geometry " + shape_to_string(input.shape()) + " with kernel " +
                         shape_to_string(weight.shape()) + " and stride " + std::to_string(stride) +
                         " does not tile");
    }
    const std::size_t Ho = (H - kh) / stride + 1;
    const std::size_t Wo = (W - kw) / stride + 1;
    const bool tracked = track({&input, &weight, &bias});
    Tensor out = make_output({Ho, Wo, Cout}, tracked);
    const auto& K = kernels::active();
    const double* pin = input.data();
    const double* pw = weight.data();
    double* po = out.data();
    for (std::size_t y = 0; y < Ho; ++y) {
        for (std::size_t x = 0; x < Wo; ++x) {
            double* ocell = po + (y * Wo + x) * Cout;
            K.add(bias.data(), ocell, ocell, Cout); // ocell starts at 0
            for (std::size_t dy = 0; dy < kh; ++dy) {
                for (std::size_t dx = 0; dx < kw; ++dx) {
                    const double* icell = pin + ((y * stride + dy) * W + (x * stride + dx)) * Cin;
                    const double* wtap = pw + (dy * kw + dx) * Cin * Cout;
                    for (std::size_t ci = 0; ci < Cin; ++ci) {
                        K.axpy(icell[ci], wtap + ci * Cout, ocell, Cout);
                    }
                }
            }
        }
    }
    if (tracked) {
        NodePtr ni = input.node(), nw = weight.node(), nb = bias.node(), no = out.node();
        Tape::current()->record(no, [ni, nw, nb, no, H, W, Cin, kh, kw, Cout, Ho, Wo, stride]() {
            const auto& Kb = kernels::active();
            const double* dout = no->grad.data();
            double* din = maybe_grad(ni);
            double* dw = maybe_grad(nw);
            double* db = maybe_grad(nb);
            const double* pin2 = ni->data.data();
            const double* pw2 = nw->data.data();
            for (std::size_t y = 0; y < Ho; ++y) {
                for (std::size_t x = 0; x < Wo; ++x) {
                    const double* gcell = dout + (y * Wo + x) * Cout;
                    if (db) Kb.axpy(1.0, gcell, db, Cout);
                    for (std::size_t dy = 0; dy < kh; ++dy) {
                        for (std::size_t dx = 0; dx < kw; ++dx) {
                            const std::size_t ioff = ((y * stride + dy) * W + (x * stride + dx)) * Cin;
                            const std::size_t woff = (dy * kw + dx) * Cin * Cout;
                            for (std::size_t ci = 0; ci < Cin; ++ci) {
                                if (din) din[ioff + ci] += Kb.dot(gcell, pw2 + woff + ci * Cout, Cout);
                                if (dw) Kb.axpy(pin2[ioff + ci], gcell, dw + woff + ci * Cout, Cout);
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

} // namespace sgalign::ops

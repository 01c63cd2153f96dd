#include "hctc/autodiff.hpp"
#include "hctc/chunking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hctc::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::variable(Matrix value) {
    nodes_.push_back({std::move(value), Matrix(), true, nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back({std::move(value), Matrix(), false, nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    nodes_.push_back({std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Matrix& Tape::grad_ref(Var v) {
    Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw std::logic_error("loss belongs to another tape");
    const Matrix& l = value(loss);
    if (l.rows() != 1 || l.cols() != 1) throw std::logic_error("backward needs a 1x1 loss");
    if (!std::isfinite(l(0, 0))) throw DivergenceError("non-finite loss", -1);
    grad_ref(loss).setOnes();
    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad, n.value);
    }
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::logic_error(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "add");
    return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_ref(a) += g;
        if (t.needs_grad(b)) t.grad_ref(b) += g;
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a.value(), b.value(), "sub");
    return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_ref(a) += g;
        if (t.needs_grad(b)) t.grad_ref(b) -= g;
    });
}

Var scale(Var a, double s) {
    return a.tape()->record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_ref(a) += s * g;
    });
}

Var add_constant(Var a, const Matrix& c) {
    check_same_shape(a.value(), c, "add_constant");
    return a.tape()->record(a.value() + c, {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_ref(a) += g;
    });
}

Var matmul(Var a, Var b) {
    if (a.value().cols() != b.value().rows()) throw std::logic_error("matmul: shape mismatch");
    return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_ref(a).noalias() += g * t.value(b).transpose();
        if (t.needs_grad(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * g;
    });
}

Var matmul_nt(Var a, Var b) {
    if (a.value().cols() != b.value().cols()) throw std::logic_error("matmul_nt: shape mismatch");
    return a.tape()->record(a.value() * b.value().transpose(), {a, b},
                            [a, b](Tape& t, const Matrix& g, const Matrix&) {
                                if (t.needs_grad(a)) t.grad_ref(a).noalias() += g * t.value(b);
                                if (t.needs_grad(b)) t.grad_ref(b).noalias() += g.transpose() * t.value(a);
                            });
}

Var add_row(Var a, Var row) {
    const Matrix& r = row.value();
    if (r.rows() != 1 || r.cols() != a.value().cols()) throw std::logic_error("add_row: shape mismatch");
    Matrix out = a.value();
    out.rowwise() += r.row(0);
    return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(a)) t.grad_ref(a) += g;
        if (t.needs_grad(row)) t.grad_ref(row) += g.colwise().sum();
    });
}

Var linear(Var x, Var weight, Var bias) {
    const Matrix& w = weight.value();
    if (x.value().cols() != w.rows() || bias.value().rows() != 1 || bias.value().cols() != w.cols())
        throw std::logic_error("linear: shape mismatch");
    Matrix out = x.value() * w;
    out.rowwise() += bias.value().row(0);
    return x.tape()->record(std::move(out), {x, weight, bias},
                            [x, weight, bias](Tape& t, const Matrix& g, const Matrix&) {
                                if (t.needs_grad(x)) t.grad_ref(x).noalias() += g * t.value(weight).transpose();
                                if (t.needs_grad(weight)) t.grad_ref(weight).noalias() += t.value(x).transpose() * g;
                                if (t.needs_grad(bias)) t.grad_ref(bias) += g.colwise().sum();
                            });
}

Var relu(Var a) {
    return a.tape()->record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_ref(a) += (t.value(a).array() > 0.0).select(g, 0.0);
    });
}

Var silu(Var a) {
    const Matrix& x = a.value();
    Matrix sig = (1.0 + (-x.array()).exp()).inverse().matrix();
    Matrix out = x.cwiseProduct(sig);
    return a.tape()->record(std::move(out), {a}, [a, sig](Tape& t, const Matrix& g, const Matrix&) {
        const auto x = t.value(a).array();
        t.grad_ref(a).array() += g.array() * sig.array() * (1.0 + x * (1.0 - sig.array()));
    });
}

Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_ref(a).array() += g(0, 0);
    });
}

Var row_block(Var a, int start, int rows) {
    Matrix out = a.value().middleRows(start, rows);
    return a.tape()->record(std::move(out), {a}, [a, start, rows](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_ref(a).middleRows(start, rows) += g;
    });
}

Var col_block(Var a, int start, int cols) {
    Matrix out = a.value().middleCols(start, cols);
    return a.tape()->record(std::move(out), {a}, [a, start, cols](Tape& t, const Matrix& g, const Matrix&) {
        t.grad_ref(a).middleCols(start, cols) += g;
    });
}

Var hconcat(std::span<const Var> parts) {
    if (parts.empty()) throw std::logic_error("hconcat: no inputs");
    const auto rows = parts[0].value().rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.value().rows() != rows) throw std::logic_error("hconcat: row mismatch");
        cols += p.value().cols();
    }
    Matrix out(rows, cols);
    std::vector<Var> ins(parts.begin(), parts.end());
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.value().cols()) = p.value();
        at += p.value().cols();
    }
    return parts[0].tape()->record(std::move(out), parts, [ins](Tape& t, const Matrix& g, const Matrix&) {
        Eigen::Index at = 0;
        for (const Var& p : ins) {
            const auto c = t.value(p).cols();
            if (t.needs_grad(p)) t.grad_ref(p) += g.middleCols(at, c);
            at += c;
        }
    });
}

Var vconcat(std::span<const Var> parts) {
    if (parts.empty()) throw std::logic_error("vconcat: no inputs");
    const auto cols = parts[0].value().cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        if (p.value().cols() != cols) throw std::logic_error("vconcat: column mismatch");
        rows += p.value().rows();
    }
    Matrix out(rows, cols);
    std::vector<Var> ins(parts.begin(), parts.end());
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.value().rows()) = p.value();
        at += p.value().rows();
    }
    return parts[0].tape()->record(std::move(out), parts, [ins](Tape& t, const Matrix& g, const Matrix&) {
        Eigen::Index at = 0;
        for (const Var& p : ins) {
            const auto r = t.value(p).rows();
            if (t.needs_grad(p)) t.grad_ref(p) += g.middleRows(at, r);
            at += r;
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    const Matrix& in = x.value();
    const auto n = in.cols();
    if (gain.value().cols() != n || bias.value().cols() != n) throw std::logic_error("layer_norm: shape mismatch");
    Matrix xhat(in.rows(), n);
    Eigen::VectorXd inv_std(in.rows());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
        const double mu = in.row(r).mean();
        const double var = (in.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (in.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
    out.rowwise() += bias.value().row(0);
    return x.tape()->record(
        std::move(out), {x, gain, bias},
        [x, gain, bias, xhat, inv_std](Tape& t, const Matrix& g, const Matrix&) {
            if (t.needs_grad(gain)) t.grad_ref(gain) += g.cwiseProduct(xhat).colwise().sum();
            if (t.needs_grad(bias)) t.grad_ref(bias) += g.colwise().sum();
            if (t.needs_grad(x)) {
                const Matrix dxhat = g.array().rowwise() * t.value(gain).row(0).array();
                Matrix& dx = t.grad_ref(x);
                for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                    dx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                }
            }
        });
}

Var masked_softmax(Var scores, const AttentionMask& mask) {
    const Matrix& s = scores.value();
    if (s.rows() != mask.size() || s.cols() != mask.size()) throw std::logic_error("masked_softmax: mask size mismatch");
    Matrix p = Matrix::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < s.cols(); ++j)
            if (mask(static_cast<int>(i), static_cast<int>(j))) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            if (mask(static_cast<int>(i), static_cast<int>(j))) {
                p(i, j) = std::exp(s(i, j) - mx);
                z += p(i, j);
            }
        }
        p.row(i) /= z;
    }
    return scores.tape()->record(std::move(p), {scores}, [scores](Tape& t, const Matrix& g, const Matrix& p) {
        const Eigen::VectorXd dot = g.cwiseProduct(p).rowwise().sum();
        t.grad_ref(scores).array() += p.array() * (g.colwise() - dot).array();
    });
}

Var log_softmax(Var logits) {
    const Matrix& x = logits.value();
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
        out.row(r) = x.row(r).array() - lse;
    }
    return logits.tape()->record(std::move(out), {logits}, [logits](Tape& t, const Matrix& g, const Matrix& y) {
        const Eigen::VectorXd gs = g.rowwise().sum();
        Matrix d = y.array().exp();
        d.array().colwise() *= gs.array();
        t.grad_ref(logits) += g - d;
    });
}

Var depthwise_conv(Var x, Var kernel, Var bias, std::span<const int> right_limit) {
    const Matrix& in = x.value();
    const Matrix& k = kernel.value();
    const auto frames = static_cast<int>(in.rows());
    const auto taps = static_cast<int>(k.rows());
    if (taps % 2 == 0) throw std::logic_error("depthwise_conv: kernel size must be odd");
    if (k.cols() != in.cols() || bias.value().cols() != in.cols()) throw std::logic_error("depthwise_conv: channel mismatch");
    if (static_cast<int>(right_limit.size()) != frames) throw std::logic_error("depthwise_conv: limit size mismatch");
    const int half = taps / 2;

    Matrix out(frames, in.cols());
    out.rowwise() = bias.value().row(0);
    std::vector<int> limit(right_limit.begin(), right_limit.end());
    for (int t = 0; t < frames; ++t) {
        const int hi = std::min({frames - 1, t + half, limit[t]});
        for (int s = std::max(0, t - half); s <= hi; ++s)
            out.row(t).array() += k.row(s - t + half).array() * in.row(s).array();
    }
    return x.tape()->record(
        std::move(out), {x, kernel, bias}, [x, kernel, bias, limit, half](Tape& t, const Matrix& g, const Matrix&) {
            const Matrix& in = t.value(x);
            const Matrix& k = t.value(kernel);
            const int frames = static_cast<int>(in.rows());
            const bool dx = t.needs_grad(x);
            const bool dk = t.needs_grad(kernel);
            Matrix* gx = dx ? &t.grad_ref(x) : nullptr;
            Matrix* gk = dk ? &t.grad_ref(kernel) : nullptr;
            for (int tt = 0; tt < frames; ++tt) {
                const int hi = std::min({frames - 1, tt + half, limit[tt]});
                for (int s = std::max(0, tt - half); s <= hi; ++s) {
                    const int j = s - tt + half;
                    if (dx) gx->row(s).array() += k.row(j).array() * g.row(tt).array();
                    if (dk) gk->row(j).array() += in.row(s).array() * g.row(tt).array();
                }
            }
            if (t.needs_grad(bias)) t.grad_ref(bias) += g.colwise().sum();
        });
}

Var replace_rows(Var x, std::span<const int> rows, Var row) {
    const Matrix& in = x.value();
    if (row.value().rows() != 1 || row.value().cols() != in.cols()) throw std::logic_error("replace_rows: shape mismatch");
    Matrix out = in;
    std::vector<int> idx(rows.begin(), rows.end());
    for (const int r : idx) {
        if (r < 0 || r >= in.rows()) throw std::logic_error("replace_rows: row out of range");
        out.row(r) = row.value().row(0);
    }
    return x.tape()->record(std::move(out), {x, row}, [x, row, idx](Tape& t, const Matrix& g, const Matrix&) {
        if (t.needs_grad(x)) {
            Matrix d = g;
            for (const int r : idx) d.row(r).setZero();
            t.grad_ref(x) += d;
        }
        if (t.needs_grad(row)) {
            Matrix& d = t.grad_ref(row);
            for (const int r : idx) d.row(0) += g.row(r);
        }
    });
}

}  // namespace hctc::ad

#include "fsos/tape.hpp"

#include <algorithm>
#include <cmath>

#include "fsos/error.hpp"

namespace fsos {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

[[noreturn]] void shape_fail(Primitive kind, const std::string& what) {
    throw ShapeError(std::string(primitive_name(kind)) + ": " + what);
}

// Views a rank-1 [D] or rank-2 [n,D] shape as (rows, cols).
std::pair<std::size_t, std::size_t> as_rows(Primitive kind, const Shape& s) {
    if (s.size() == 1) return {1, s[0]};
    if (s.size() == 2) return {s[0], s[1]};
    shape_fail(kind, "expected a vector or matrix, got " + shape_string(s));
}

}  // namespace

std::string_view primitive_name(Primitive kind) {
    switch (kind) {
        case Primitive::leaf: return "leaf";
        case Primitive::affine: return "affine";
        case Primitive::relu: return "relu";
        case Primitive::sigmoid: return "sigmoid";
        case Primitive::softmax_xent: return "softmax_xent";
        case Primitive::bce: return "bce";
        case Primitive::squared_distance: return "squared_distance";
        case Primitive::mean_rows: return "mean_rows";
        case Primitive::conv3x3_pool: return "conv3x3_pool";
        case Primitive::dot: return "dot";
        case Primitive::scale_shift: return "scale_shift";
        case Primitive::add: return "add";
        case Primitive::neg: return "neg";
        case Primitive::sum: return "sum";
        case Primitive::slice_rows: return "slice_rows";
        case Primitive::concat_rows: return "concat_rows";
        case Primitive::reshape: return "reshape";
    }
    return "unknown";
}

const Tape::Node& Tape::node(Var v) const {
    check_owned(v, "access");
    return nodes_[v.id];
}

void Tape::check_owned(Var v, std::string_view op) const {
    if (v.tape != this || v.id >= nodes_.size()) {
        throw AutodiffError(std::string(op) + ": value was not recorded on this tape");
    }
}

Var Tape::push(Node n) {
    if (consumed_) throw AutodiffError("tape already consumed by backward()");
    for (auto in : n.inputs) {
        if (nodes_[in].needs_grad) {
            n.needs_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(const Tensor& value) {
    Node n;
    n.shape = value.shape();
    n.value = value.data();
    return push(std::move(n));
}

Var Tape::constant(Shape shape, std::vector<double> values) {
    return constant(Tensor(std::move(shape), std::move(values)));
}

Var Tape::param(Tensor& tensor) {
    Node n;
    n.shape = tensor.shape();
    n.value = tensor.data();
    n.param = &tensor;
    n.needs_grad = tensor.requires_grad();
    return push(std::move(n));
}

const Shape& Tape::shape(Var v) const { return node(v).shape; }
std::span<const double> Tape::values(Var v) const { return node(v).value; }
Tensor Tape::tensor(Var v) const { return Tensor(node(v).shape, node(v).value); }

double Tape::item(Var v) const {
    const auto& n = node(v);
    if (n.value.size() != 1) throw ShapeError("item(): value is not scalar " + shape_string(n.shape));
    return n.value[0];
}

Var Tape::apply(Primitive kind, std::span<const Var> in) {
    auto need = [&](std::size_t count) {
        if (in.size() != count) {
            shape_fail(kind, "expects " + std::to_string(count) + " inputs, got " + std::to_string(in.size()));
        }
    };
    switch (kind) {
        case Primitive::affine: need(3); return affine(in[0], in[1], in[2]);
        case Primitive::relu: need(1); return relu(in[0]);
        case Primitive::sigmoid: need(1); return sigmoid(in[0]);
        case Primitive::softmax_xent: need(2); return softmax_xent(in[0], in[1]);
        case Primitive::bce: need(2); return bce(in[0], in[1]);
        case Primitive::squared_distance: need(2); return squared_distance(in[0], in[1]);
        case Primitive::mean_rows: need(1); return mean_rows(in[0]);
        case Primitive::conv3x3_pool: need(3); return conv3x3_pool(in[0], in[1], in[2]);
        case Primitive::dot: need(2); return dot(in[0], in[1]);
        case Primitive::scale_shift: need(3); return scale_shift(in[0], in[1], in[2]);
        case Primitive::add: need(2); return add(in[0], in[1]);
        case Primitive::neg: need(1); return neg(in[0]);
        case Primitive::sum: need(1); return sum(in[0]);
        case Primitive::concat_rows: return concat_rows(in);
        case Primitive::leaf:
        case Primitive::slice_rows:
        case Primitive::reshape:
            throw AutodiffError("apply: primitive '" + std::string(primitive_name(kind)) +
                                "' needs attributes; call it directly");
    }
    throw AutodiffError("apply: unknown primitive kind " + std::to_string(static_cast<int>(kind)));
}

Var Tape::affine(Var x, Var w, Var b) {
    check_owned(x, "affine");
    check_owned(w, "affine");
    check_owned(b, "affine");
    const auto& X = nodes_[x.id];
    const auto& W = nodes_[w.id];
    const auto& B = nodes_[b.id];
    auto [n, d] = as_rows(Primitive::affine, X.shape);
    if (W.shape.size() != 2 || W.shape[0] != d) {
        shape_fail(Primitive::affine, "x " + shape_string(X.shape) + " incompatible with W " + shape_string(W.shape));
    }
    const std::size_t m = W.shape[1];
    if (B.shape.size() != 1 || B.shape[0] != m) {
        shape_fail(Primitive::affine, "bias " + shape_string(B.shape) + " does not match output dim " + std::to_string(m));
    }
    Node out;
    out.kind = Primitive::affine;
    out.inputs = {x.id, w.id, b.id};
    out.shape = X.shape.size() == 1 ? Shape{m} : Shape{n, m};
    out.value.assign(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.value.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) row[j] = B.value[j];
        for (std::size_t k = 0; k < d; ++k) {
            const double xv = X.value[i * d + k];
            if (xv == 0.0) continue;
            const double* wr = W.value.data() + k * m;
            for (std::size_t j = 0; j < m; ++j) row[j] += xv * wr[j];
        }
    }
    return push(std::move(out));
}

Var Tape::relu(Var x) {
    check_owned(x, "relu");
    Node out;
    out.kind = Primitive::relu;
    out.inputs = {x.id};
    out.shape = nodes_[x.id].shape;
    out.value = nodes_[x.id].value;
    for (auto& v : out.value) v = v > 0.0 ? v : 0.0;
    return push(std::move(out));
}

Var Tape::sigmoid(Var x) {
    check_owned(x, "sigmoid");
    Node out;
    out.kind = Primitive::sigmoid;
    out.inputs = {x.id};
    out.shape = nodes_[x.id].shape;
    out.value = nodes_[x.id].value;
    for (auto& v : out.value) v = stable_sigmoid(v);
    return push(std::move(out));
}

Var Tape::softmax_xent(Var logits, Var labels) {
    check_owned(logits, "softmax_xent");
    check_owned(labels, "softmax_xent");
    const auto& Z = nodes_[logits.id];
    const auto& L = nodes_[labels.id];
    auto [n, c] = as_rows(Primitive::softmax_xent, Z.shape);
    if (L.value.size() != n) {
        shape_fail(Primitive::softmax_xent, "labels " + shape_string(L.shape) + " do not match " + std::to_string(n) + " rows");
    }
    if (L.needs_grad) shape_fail(Primitive::softmax_xent, "labels must be constant");
    Node out;
    out.kind = Primitive::softmax_xent;
    out.inputs = {logits.id, labels.id};
    out.shape = {1};
    out.saved.resize(n * c);  // softmax probabilities
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double label = L.value[i];
        if (label < 0.0 || label >= static_cast<double>(c) || label != std::floor(label)) {
            shape_fail(Primitive::softmax_xent, "label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
        }
        const double* z = Z.value.data() + i * c;
        const double zmax = *std::max_element(z, z + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - zmax);
        const double lse = zmax + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out.saved[i * c + j] = std::exp(z[j] - lse);
        total += lse - z[static_cast<std::size_t>(label)];
    }
    out.value = {total / static_cast<double>(n)};
    return push(std::move(out));
}

Var Tape::bce(Var logits, Var targets) {
    check_owned(logits, "bce");
    check_owned(targets, "bce");
    const auto& Z = nodes_[logits.id];
    const auto& Y = nodes_[targets.id];
    if (Z.value.size() != Y.value.size()) {
        shape_fail(Primitive::bce, "logits " + shape_string(Z.shape) + " vs targets " + shape_string(Y.shape));
    }
    if (Y.needs_grad) shape_fail(Primitive::bce, "targets must be constant");
    Node out;
    out.kind = Primitive::bce;
    out.inputs = {logits.id, targets.id};
    out.shape = {1};
    double total = 0.0;
    for (std::size_t i = 0; i < Z.value.size(); ++i) {
        const double y = Y.value[i];
        if (y < 0.0 || y > 1.0) shape_fail(Primitive::bce, "target outside [0,1]");
        total += softplus(Z.value[i]) - y * Z.value[i];
    }
    out.value = {total / static_cast<double>(Z.value.size())};
    return push(std::move(out));
}

Var Tape::squared_distance(Var a, Var b) {
    check_owned(a, "squared_distance");
    check_owned(b, "squared_distance");
    const auto& A = nodes_[a.id];
    const auto& B = nodes_[b.id];
    auto [m, da] = as_rows(Primitive::squared_distance, A.shape);
    auto [n, db] = as_rows(Primitive::squared_distance, B.shape);
    if (da != db) {
        shape_fail(Primitive::squared_distance, "dimension mismatch " + shape_string(A.shape) + " vs " + shape_string(B.shape));
    }
    Node out;
    out.kind = Primitive::squared_distance;
    out.inputs = {a.id, b.id};
    out.shape = (A.shape.size() == 1 && B.shape.size() == 1) ? Shape{1} : Shape{m, n};
    out.value.resize(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = A.value.data() + i * da;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = B.value.data() + j * da;
            double s = 0.0;
            for (std::size_t k = 0; k < da; ++k) {
                const double diff = ai[k] - bj[k];
                s += diff * diff;
            }
            out.value[i * n + j] = s;
        }
    }
    return push(std::move(out));
}

Var Tape::mean_rows(Var x) {
    check_owned(x, "mean_rows");
    const auto& X = nodes_[x.id];
    if (X.shape.size() != 2) shape_fail(Primitive::mean_rows, "expected a matrix, got " + shape_string(X.shape));
    const std::size_t n = X.shape[0], d = X.shape[1];
    Node out;
    out.kind = Primitive::mean_rows;
    out.inputs = {x.id};
    out.shape = {d};
    out.value.assign(d, 0.0);
    // Summing each column in sorted order makes the mean bit-identical under
    // any permutation of the rows.
    std::vector<double> column(n);
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < n; ++i) column[i] = X.value[i * d + k];
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (double v : column) s += v;
        out.value[k] = s / static_cast<double>(n);
    }
    return push(std::move(out));
}

Var Tape::conv3x3_pool(Var x, Var w, Var b) {
    check_owned(x, "conv3x3_pool");
    check_owned(w, "conv3x3_pool");
    check_owned(b, "conv3x3_pool");
    const auto& X = nodes_[x.id];
    const auto& W = nodes_[w.id];
    const auto& B = nodes_[b.id];
    std::size_t N, C, H, Wd;
    if (X.shape.size() == 3) {
        N = 1, C = X.shape[0], H = X.shape[1], Wd = X.shape[2];
    } else if (X.shape.size() == 4) {
        N = X.shape[0], C = X.shape[1], H = X.shape[2], Wd = X.shape[3];
    } else {
        shape_fail(Primitive::conv3x3_pool, "expected [C,H,W] or [N,C,H,W], got " + shape_string(X.shape));
    }
    if (H < 2 || Wd < 2) shape_fail(Primitive::conv3x3_pool, "spatial dims must be >= 2, got " + shape_string(X.shape));
    if (W.shape.size() != 4 || W.shape[1] != C || W.shape[2] != 3 || W.shape[3] != 3) {
        shape_fail(Primitive::conv3x3_pool, "weight " + shape_string(W.shape) + " incompatible with input " + shape_string(X.shape));
    }
    const std::size_t O = W.shape[0];
    if (B.shape.size() != 1 || B.shape[0] != O) {
        shape_fail(Primitive::conv3x3_pool, "bias " + shape_string(B.shape) + " does not match " + std::to_string(O) + " channels");
    }
    const std::size_t Ho = H / 2, Wo = Wd / 2;

    // Pre-activation of the convolution, kept for backward.
    std::vector<double> pre(N * O * H * Wd);
    for (std::size_t nn = 0; nn < N; ++nn) {
        for (std::size_t o = 0; o < O; ++o) {
            double* dst = pre.data() + (nn * O + o) * H * Wd;
            std::fill(dst, dst + H * Wd, B.value[o]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* src = X.value.data() + (nn * C + c) * H * Wd;
                const double* ker = W.value.data() + (o * C + c) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const double kv = ker[ky * 3 + kx];
                        for (std::size_t yy = 0; yy < H; ++yy) {
                            const long sy = static_cast<long>(yy) + ky - 1;
                            if (sy < 0 || sy >= static_cast<long>(H)) continue;
                            for (std::size_t xx = 0; xx < Wd; ++xx) {
                                const long sx = static_cast<long>(xx) + kx - 1;
                                if (sx < 0 || sx >= static_cast<long>(Wd)) continue;
                                dst[yy * Wd + xx] += kv * src[static_cast<std::size_t>(sy) * Wd + static_cast<std::size_t>(sx)];
                            }
                        }
                    }
                }
            }
        }
    }

    Node out;
    out.kind = Primitive::conv3x3_pool;
    out.inputs = {x.id, w.id, b.id};
    out.shape = X.shape.size() == 3 ? Shape{O, Ho, Wo} : Shape{N, O, Ho, Wo};
    out.value.resize(N * O * Ho * Wo);
    out.indices.resize(out.value.size());  // flat index into `pre` of each pooled max
    for (std::size_t plane = 0; plane < N * O; ++plane) {
        const double* p = pre.data() + plane * H * Wd;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                std::size_t best = (2 * oy) * Wd + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (2 * oy + dy) * Wd + 2 * ox + dx;
                        if (p[idx] > p[best]) best = idx;
                    }
                }
                const std::size_t o_idx = plane * Ho * Wo + oy * Wo + ox;
                out.value[o_idx] = p[best] > 0.0 ? p[best] : 0.0;
                out.indices[o_idx] = plane * H * Wd + best;
            }
        }
    }
    out.saved = std::move(pre);
    return push(std::move(out));
}

Var Tape::dot(Var a, Var b) {
    check_owned(a, "dot");
    check_owned(b, "dot");
    const auto& A = nodes_[a.id];
    const auto& B = nodes_[b.id];
    auto [m, da] = as_rows(Primitive::dot, A.shape);
    auto [n, db] = as_rows(Primitive::dot, B.shape);
    if (da != db) shape_fail(Primitive::dot, "dimension mismatch " + shape_string(A.shape) + " vs " + shape_string(B.shape));
    Node out;
    out.kind = Primitive::dot;
    out.inputs = {a.id, b.id};
    out.shape = (A.shape.size() == 1 && B.shape.size() == 1) ? Shape{1} : Shape{m, n};
    out.value.resize(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < da; ++k) s += A.value[i * da + k] * B.value[j * da + k];
            out.value[i * n + j] = s;
        }
    }
    return push(std::move(out));
}

namespace {

// (channels, inner) for scale_shift broadcasting: rank 1 is elementwise,
// otherwise axis 1 is the channel axis.
std::pair<std::size_t, std::size_t> channel_layout(const Shape& s) {
    if (s.size() == 1) return {s[0], 1};
    std::size_t inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
    return {s[1], inner};
}

}  // namespace

Var Tape::scale_shift(Var x, Var scale, Var shift) {
    check_owned(x, "scale_shift");
    check_owned(scale, "scale_shift");
    check_owned(shift, "scale_shift");
    const auto& X = nodes_[x.id];
    const auto& S = nodes_[scale.id];
    const auto& T = nodes_[shift.id];
    auto [C, inner] = channel_layout(X.shape);
    if (S.value.size() != C || T.value.size() != C) {
        shape_fail(Primitive::scale_shift, "x " + shape_string(X.shape) + " needs " + std::to_string(C) +
                                               " channels, got scale " + shape_string(S.shape) + " shift " + shape_string(T.shape));
    }
    Node out;
    out.kind = Primitive::scale_shift;
    out.inputs = {x.id, scale.id, shift.id};
    out.shape = X.shape;
    out.value.resize(X.value.size());
    for (std::size_t i = 0; i < X.value.size(); ++i) {
        const std::size_t c = (i / inner) % C;
        out.value[i] = X.value[i] * S.value[c] + T.value[c];
    }
    return push(std::move(out));
}

Var Tape::add(Var a, Var b) {
    check_owned(a, "add");
    check_owned(b, "add");
    const auto& A = nodes_[a.id];
    const auto& B = nodes_[b.id];
    if (B.value.size() != 1 && B.shape != A.shape) {
        shape_fail(Primitive::add, "cannot broadcast " + shape_string(B.shape) + " onto " + shape_string(A.shape));
    }
    Node out;
    out.kind = Primitive::add;
    out.inputs = {a.id, b.id};
    out.shape = A.shape;
    out.value = A.value;
    if (B.value.size() == 1) {
        for (auto& v : out.value) v += B.value[0];
    } else {
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] += B.value[i];
    }
    return push(std::move(out));
}

Var Tape::neg(Var x) {
    check_owned(x, "neg");
    Node out;
    out.kind = Primitive::neg;
    out.inputs = {x.id};
    out.shape = nodes_[x.id].shape;
    out.value = nodes_[x.id].value;
    for (auto& v : out.value) v = -v;
    return push(std::move(out));
}

Var Tape::sum(Var x) {
    check_owned(x, "sum");
    Node out;
    out.kind = Primitive::sum;
    out.inputs = {x.id};
    out.shape = {1};
    double s = 0.0;
    for (auto v : nodes_[x.id].value) s += v;
    out.value = {s};
    return push(std::move(out));
}

Var Tape::slice_rows(Var x, std::size_t begin, std::size_t count) {
    check_owned(x, "slice_rows");
    const auto& X = nodes_[x.id];
    if (count == 0 || begin + count > X.shape[0]) {
        shape_fail(Primitive::slice_rows, "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                              ") out of range for " + shape_string(X.shape));
    }
    const std::size_t stride = X.value.size() / X.shape[0];
    Node out;
    out.kind = Primitive::slice_rows;
    out.inputs = {x.id};
    out.shape = X.shape;
    out.shape[0] = count;
    out.value.assign(X.value.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                     X.value.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
    out.indices = {begin * stride};
    return push(std::move(out));
}

Var Tape::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) shape_fail(Primitive::concat_rows, "no inputs");
    for (auto p : parts) check_owned(p, "concat_rows");
    // Rank-1 parts become single rows.
    const Shape& first = nodes_[parts[0].id].shape;
    Shape row_shape = first.size() == 1 ? first : Shape(first.begin() + 1, first.end());
    std::size_t rows = 0;
    Node out;
    out.kind = Primitive::concat_rows;
    for (auto p : parts) {
        const auto& P = nodes_[p.id];
        Shape r = P.shape.size() == 1 ? P.shape : Shape(P.shape.begin() + 1, P.shape.end());
        if (r != row_shape || (P.shape.size() == 1) != (first.size() == 1)) {
            shape_fail(Primitive::concat_rows, "part " + shape_string(P.shape) + " incompatible with " + shape_string(first));
        }
        rows += P.shape.size() == 1 ? 1 : P.shape[0];
        out.inputs.push_back(p.id);
        out.value.insert(out.value.end(), P.value.begin(), P.value.end());
    }
    out.shape = {rows};
    out.shape.insert(out.shape.end(), row_shape.begin(), row_shape.end());
    return push(std::move(out));
}

Var Tape::reshape(Var x, Shape shape) {
    check_owned(x, "reshape");
    const auto& X = nodes_[x.id];
    if (shape_size(shape) != X.value.size() || shape.empty()) {
        shape_fail(Primitive::reshape, "cannot reshape " + shape_string(X.shape) + " to " + shape_string(shape));
    }
    Node out;
    out.kind = Primitive::reshape;
    out.inputs = {x.id};
    out.shape = std::move(shape);
    out.value = X.value;
    return push(std::move(out));
}

void Tape::backward(Var loss) {
    if (consumed_) throw AutodiffError("backward: tape already consumed");
    check_owned(loss, "backward");
    if (nodes_[loss.id].value.size() != 1) {
        throw AutodiffError("backward: loss must be scalar, got " + shape_string(nodes_[loss.id].shape));
    }
    consumed_ = true;
    std::vector<std::vector<double>> grads(nodes_.size());
    grads[loss.id] = {1.0};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (!n.needs_grad || grads[i].empty()) continue;
        if (n.kind == Primitive::leaf) {
            if (n.param) n.param->accumulate_grad(grads[i]);
            continue;
        }
        backprop(n, grads[i], grads);
        grads[i].clear();
        grads[i].shrink_to_fit();
    }
}

void Tape::backprop(const Node& n, const std::vector<double>& g, std::vector<std::vector<double>>& grads) const {
    auto sink = [&](std::size_t slot) -> std::vector<double>* {
        const auto id = n.inputs[slot];
        if (!nodes_[id].needs_grad) return nullptr;
        auto& buf = grads[id];
        if (buf.empty()) buf.assign(nodes_[id].value.size(), 0.0);
        return &buf;
    };
    auto in = [&](std::size_t slot) -> const Node& { return nodes_[n.inputs[slot]]; };

    switch (n.kind) {
        case Primitive::leaf: return;
        case Primitive::affine: {
            const auto& X = in(0);
            const auto& W = in(1);
            auto [rows, d] = as_rows(Primitive::affine, X.shape);
            const std::size_t m = W.shape[1];
            if (auto* gx = sink(0)) {
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t k = 0; k < d; ++k) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * W.value[k * m + j];
                        (*gx)[i * d + k] += s;
                    }
                }
            }
            if (auto* gw = sink(1)) {
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t k = 0; k < d; ++k) {
                        const double xv = X.value[i * d + k];
                        if (xv == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) (*gw)[k * m + j] += xv * g[i * m + j];
                    }
                }
            }
            if (auto* gb = sink(2)) {
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g[i * m + j];
                }
            }
            return;
        }
        case Primitive::relu: {
            if (auto* gx = sink(0)) {
                const auto& X = in(0);
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += X.value[i] > 0.0 ? g[i] : 0.0;
            }
            return;
        }
        case Primitive::sigmoid: {
            if (auto* gx = sink(0)) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double y = n.value[i];
                    (*gx)[i] += g[i] * y * (1.0 - y);
                }
            }
            return;
        }
        case Primitive::softmax_xent: {
            if (auto* gz = sink(0)) {
                const auto& L = in(1);
                const std::size_t rows = L.value.size();
                const std::size_t c = n.saved.size() / rows;
                const double scale = g[0] / static_cast<double>(rows);
                for (std::size_t i = 0; i < rows; ++i) {
                    const auto label = static_cast<std::size_t>(L.value[i]);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double target = j == label ? 1.0 : 0.0;
                        (*gz)[i * c + j] += scale * (n.saved[i * c + j] - target);
                    }
                }
            }
            return;
        }
        case Primitive::bce: {
            if (auto* gz = sink(0)) {
                const auto& Z = in(0);
                const auto& Y = in(1);
                const double scale = g[0] / static_cast<double>(Z.value.size());
                for (std::size_t i = 0; i < Z.value.size(); ++i) {
                    (*gz)[i] += scale * (stable_sigmoid(Z.value[i]) - Y.value[i]);
                }
            }
            return;
        }
        case Primitive::squared_distance: {
            const auto& A = in(0);
            const auto& B = in(1);
            auto [m, d] = as_rows(Primitive::squared_distance, A.shape);
            auto [cols, d2] = as_rows(Primitive::squared_distance, B.shape);
            (void)d2;
            auto* ga = sink(0);
            auto* gb = sink(1);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    const double gij = 2.0 * g[i * cols + j];
                    if (gij == 0.0) continue;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = A.value[i * d + k] - B.value[j * d + k];
                        if (ga) (*ga)[i * d + k] += gij * diff;
                        if (gb) (*gb)[j * d + k] -= gij * diff;
                    }
                }
            }
            return;
        }
        case Primitive::mean_rows: {
            if (auto* gx = sink(0)) {
                const auto& X = in(0);
                const std::size_t rows = X.shape[0], d = X.shape[1];
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t k = 0; k < d; ++k) (*gx)[i * d + k] += g[k] / static_cast<double>(rows);
                }
            }
            return;
        }
        case Primitive::conv3x3_pool: {
            const auto& X = in(0);
            const auto& W = in(1);
            std::size_t N, C, H, Wd;
            if (X.shape.size() == 3) {
                N = 1, C = X.shape[0], H = X.shape[1], Wd = X.shape[2];
            } else {
                N = X.shape[0], C = X.shape[1], H = X.shape[2], Wd = X.shape[3];
            }
            const std::size_t O = W.shape[0];
            // Route pooled gradients back to the pre-activation map.
            std::vector<double> gpre(n.saved.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t src = n.indices[i];
                if (n.saved[src] > 0.0) gpre[src] += g[i];
            }
            auto* gx = sink(0);
            auto* gw = sink(1);
            auto* gb = sink(2);
            for (std::size_t nn = 0; nn < N; ++nn) {
                for (std::size_t o = 0; o < O; ++o) {
                    const double* gp = gpre.data() + (nn * O + o) * H * Wd;
                    if (gb) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < H * Wd; ++i) s += gp[i];
                        (*gb)[o] += s;
                    }
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* src = X.value.data() + (nn * C + c) * H * Wd;
                        const double* ker = W.value.data() + (o * C + c) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            for (int kx = 0; kx < 3; ++kx) {
                                double acc = 0.0;
                                const double kv = ker[ky * 3 + kx];
                                for (std::size_t yy = 0; yy < H; ++yy) {
                                    const long sy = static_cast<long>(yy) + ky - 1;
                                    if (sy < 0 || sy >= static_cast<long>(H)) continue;
                                    for (std::size_t xx = 0; xx < Wd; ++xx) {
                                        const long sx = static_cast<long>(xx) + kx - 1;
                                        if (sx < 0 || sx >= static_cast<long>(Wd)) continue;
                                        const double gv = gp[yy * Wd + xx];
                                        if (gv == 0.0) continue;
                                        const std::size_t s_idx = static_cast<std::size_t>(sy) * Wd + static_cast<std::size_t>(sx);
                                        acc += gv * src[s_idx];
                                        if (gx) (*gx)[(nn * C + c) * H * Wd + s_idx] += gv * kv;
                                    }
                                }
                                if (gw) (*gw)[(o * C + c) * 9 + static_cast<std::size_t>(ky * 3 + kx)] += acc;
                            }
                        }
                    }
                }
            }
            return;
        }
        case Primitive::dot: {
            const auto& A = in(0);
            const auto& B = in(1);
            auto [m, d] = as_rows(Primitive::dot, A.shape);
            auto [cols, d2] = as_rows(Primitive::dot, B.shape);
            (void)d2;
            auto* ga = sink(0);
            auto* gb = sink(1);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    const double gij = g[i * cols + j];
                    if (gij == 0.0) continue;
                    for (std::size_t k = 0; k < d; ++k) {
                        if (ga) (*ga)[i * d + k] += gij * B.value[j * d + k];
                        if (gb) (*gb)[j * d + k] += gij * A.value[i * d + k];
                    }
                }
            }
            return;
        }
        case Primitive::scale_shift: {
            const auto& X = in(0);
            const auto& S = in(1);
            auto [C, inner] = channel_layout(X.shape);
            auto* gx = sink(0);
            auto* gs = sink(1);
            auto* gt = sink(2);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t c = (i / inner) % C;
                if (gx) (*gx)[i] += g[i] * S.value[c];
                if (gs) (*gs)[c] += g[i] * X.value[i];
                if (gt) (*gt)[c] += g[i];
            }
            return;
        }
        case Primitive::add: {
            if (auto* ga = sink(0)) {
                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
            }
            if (auto* gb = sink(1)) {
                if (gb->size() == 1 && g.size() != 1) {
                    double s = 0.0;
                    for (auto v : g) s += v;
                    (*gb)[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
                }
            }
            return;
        }
        case Primitive::neg: {
            if (auto* gx = sink(0)) {
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] -= g[i];
            }
            return;
        }
        case Primitive::sum: {
            if (auto* gx = sink(0)) {
                for (auto& v : *gx) v += g[0];
            }
            return;
        }
        case Primitive::slice_rows: {
            if (auto* gx = sink(0)) {
                const std::size_t offset = n.indices[0];
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[offset + i] += g[i];
            }
            return;
        }
        case Primitive::concat_rows: {
            std::size_t offset = 0;
            for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
                const std::size_t len = in(slot).value.size();
                if (auto* gp = sink(slot)) {
                    for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[offset + i];
                }
                offset += len;
            }
            return;
        }
        case Primitive::reshape: {
            if (auto* gx = sink(0)) {
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
            }
            return;
        }
    }
}

}  // namespace fsos

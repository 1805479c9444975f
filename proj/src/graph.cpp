#include "faircc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "faircc/errors.hpp"

namespace faircc {

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct RowView {
    int rows;
    int cols;
};

RowView row_view(const Tensor& t, const char* op) {
    if (t.rank() == 1) return {1, t.dim(0)};
    if (t.rank() == 2) return {t.dim(0), t.dim(1)};
    throw DimensionError(std::string(op) + ": expected 1-D or 2-D tensor, got " + t.shape_str());
}

}  // namespace

void Graph::check_var(Var v, const char* who) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw ContractError(std::string(who) + ": invalid Var handle");
}

int Graph::make(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> back,
                const char* op_name) {
    if (!value.all_finite())
        throw NumericError(std::string(op_name) + " produced a non-finite value");
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    for (int p : n.parents) {
        if (p >= static_cast<int>(nodes_.size()))
            throw ContractError("graph parents must precede children");
        if (nodes_[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_buf(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

Var Graph::constant(Tensor value) { return {make(std::move(value), {}, nullptr, "constant")}; }

Var Graph::param(Tensor value) {
    const int id = make(std::move(value), {}, nullptr, "param");
    node(id).requires_grad = true;
    node(id).param = true;
    return {id};
}

const Tensor& Graph::value(Var v) const {
    check_var(v, "value");
    return node(v.id).value;
}

const Tensor& Graph::grad(Var v) const {
    check_var(v, "grad");
    const Node& n = node(v.id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

bool Graph::is_param(Var v) const {
    check_var(v, "is_param");
    return node(v.id).param;
}

Var Graph::add(Var a, Var b) {
    check_var(a, "add");
    check_var(b, "add");
    const Tensor& ta = node(a.id).value;
    const Tensor& tb = node(b.id).value;
    if (!ta.same_shape(tb))
        throw DimensionError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    accumulate(out, tb);
    const int pa = a.id, pb = b.id;
    return {make(std::move(out), {pa, pb},
                 [pa, pb](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     if (g.wants_grad(pa)) accumulate(g.grad_buf(pa), gr);
                     if (g.wants_grad(pb)) accumulate(g.grad_buf(pb), gr);
                 },
                 "add")};
}

Var Graph::sub(Var a, Var b) {
    check_var(a, "sub");
    check_var(b, "sub");
    const Tensor& ta = node(a.id).value;
    const Tensor& tb = node(b.id).value;
    if (!ta.same_shape(tb))
        throw DimensionError("sub: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    {
        double* d = out.data();
        const double* s = tb.data();
        for (std::size_t i = 0; i < out.size(); ++i) d[i] -= s[i];
    }
    const int pa = a.id, pb = b.id;
    return {make(std::move(out), {pa, pb},
                 [pa, pb](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     if (g.wants_grad(pa)) accumulate(g.grad_buf(pa), gr);
                     if (g.wants_grad(pb)) {
                         Tensor& dst = g.grad_buf(pb);
                         for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) -= gr.at(i);
                     }
                 },
                 "sub")};
}

Var Graph::mul(Var a, Var b) {
    check_var(a, "mul");
    check_var(b, "mul");
    const Tensor& ta = node(a.id).value;
    const Tensor& tb = node(b.id).value;
    if (!ta.same_shape(tb))
        throw DimensionError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    {
        double* d = out.data();
        const double* s = tb.data();
        for (std::size_t i = 0; i < out.size(); ++i) d[i] *= s[i];
    }
    const int pa = a.id, pb = b.id;
    return {make(std::move(out), {pa, pb},
                 [pa, pb](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& va = g.node(pa).value;
                     const Tensor& vb = g.node(pb).value;
                     if (g.wants_grad(pa)) {
                         Tensor& dst = g.grad_buf(pa);
                         for (std::size_t i = 0; i < dst.size(); ++i)
                             dst.at(i) += gr.at(i) * vb.at(i);
                     }
                     if (g.wants_grad(pb)) {
                         Tensor& dst = g.grad_buf(pb);
                         for (std::size_t i = 0; i < dst.size(); ++i)
                             dst.at(i) += gr.at(i) * va.at(i);
                     }
                 },
                 "mul")};
}

Var Graph::scale(Var a, double c) {
    check_var(a, "scale");
    Tensor out = node(a.id).value;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= c;
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa, c](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     Tensor& dst = g.grad_buf(pa);
                     for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) += c * gr.at(i);
                 },
                 "scale")};
}

Var Graph::sigmoid(Var a) {
    check_var(a, "sigmoid");
    Tensor out = node(a.id).value;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = stable_sigmoid(out.at(i));
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& y = g.node(self).value;
                     Tensor& dst = g.grad_buf(pa);
                     for (std::size_t i = 0; i < dst.size(); ++i) {
                         const double s = y.at(i);
                         dst.at(i) += gr.at(i) * s * (1.0 - s);
                     }
                 },
                 "sigmoid")};
}

Var Graph::gelu(Var a) {
    check_var(a, "gelu");
    Tensor out = node(a.id).value;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = out.at(i);
        out.at(i) = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& x = g.node(pa).value;
                     Tensor& dst = g.grad_buf(pa);
                     constexpr double kInvSqrt2Pi = 0.3989422804014327;
                     for (std::size_t i = 0; i < dst.size(); ++i) {
                         const double xi = x.at(i);
                         const double cdf = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
                         const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
                         dst.at(i) += gr.at(i) * (cdf + xi * pdf);
                     }
                 },
                 "gelu")};
}

Var Graph::relu(Var a) {
    check_var(a, "relu");
    Tensor out = node(a.id).value;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = std::max(0.0, out.at(i));
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& x = g.node(pa).value;
                     Tensor& dst = g.grad_buf(pa);
                     for (std::size_t i = 0; i < dst.size(); ++i)
                         if (x.at(i) > 0.0) dst.at(i) += gr.at(i);
                 },
                 "relu")};
}

Var Graph::sqrt_safe(Var a) {
    check_var(a, "sqrt_safe");
    Tensor out = node(a.id).value;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.at(i) < 0.0) throw NumericError("sqrt_safe: negative input");
        out.at(i) = std::sqrt(out.at(i));
    }
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& y = g.node(self).value;
                     Tensor& dst = g.grad_buf(pa);
                     for (std::size_t i = 0; i < dst.size(); ++i)
                         if (y.at(i) > 0.0) dst.at(i) += gr.at(i) / (2.0 * y.at(i));
                 },
                 "sqrt_safe")};
}

Var Graph::matmul(Var a, Var b) {
    check_var(a, "matmul");
    check_var(b, "matmul");
    Tensor out = dense::mm(node(a.id).value, node(b.id).value);
    const int pa = a.id, pb = b.id;
    return {make(std::move(out), {pa, pb},
                 [pa, pb](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& va = g.node(pa).value;
                     const Tensor& vb = g.node(pb).value;
                     if (g.wants_grad(pa)) accumulate(g.grad_buf(pa), dense::mm_bt(gr, vb));
                     if (g.wants_grad(pb)) accumulate(g.grad_buf(pb), dense::mm_at(va, gr));
                 },
                 "matmul")};
}

Var Graph::matvec(Var m, Var v) {
    check_var(m, "matvec");
    check_var(v, "matvec");
    const Tensor& tm = node(m.id).value;
    const Tensor& tv = node(v.id).value;
    if (tv.rank() != 1 || tm.rank() != 2 || tm.cols() != tv.dim(0))
        throw DimensionError("matvec: need (r,c) x (c), got " + tm.shape_str() + " x " +
                             tv.shape_str());
    const int r = tm.rows(), c = tm.cols();
    Tensor out({r});
    for (int i = 0; i < r; ++i) out.at(static_cast<std::size_t>(i)) = dense::dot(tm.row(i), tv.values());
    const int pm = m.id, pv = v.id;
    return {make(std::move(out), {pm, pv},
                 [pm, pv, r, c](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& vm = g.node(pm).value;
                     const Tensor& vv = g.node(pv).value;
                     if (g.wants_grad(pm)) {
                         Tensor& dst = g.grad_buf(pm);
                         for (int i = 0; i < r; ++i) {
                             const double gi = gr.at(static_cast<std::size_t>(i));
                             if (gi == 0.0) continue;
                             for (int j = 0; j < c; ++j) dst.at(i, j) += gi * vv.at(static_cast<std::size_t>(j));
                         }
                     }
                     if (g.wants_grad(pv)) {
                         Tensor& dst = g.grad_buf(pv);
                         for (int i = 0; i < r; ++i) {
                             const double gi = gr.at(static_cast<std::size_t>(i));
                             if (gi == 0.0) continue;
                             for (int j = 0; j < c; ++j) dst.at(static_cast<std::size_t>(j)) += gi * vm.at(i, j);
                         }
                     }
                 },
                 "matvec")};
}

Var Graph::dot(Var a, Var b) {
    check_var(a, "dot");
    check_var(b, "dot");
    const Tensor& ta = node(a.id).value;
    const Tensor& tb = node(b.id).value;
    if (ta.rank() != 1 || tb.rank() != 1 || ta.dim(0) != tb.dim(0))
        throw DimensionError("dot: need equal-length vectors");
    Tensor out = Tensor::scalar(dense::dot(ta.values(), tb.values()));
    const int pa = a.id, pb = b.id;
    return {make(std::move(out), {pa, pb},
                 [pa, pb](Graph& g, int self) {
                     const double gs = g.node(self).grad.at(0);
                     const Tensor& va = g.node(pa).value;
                     const Tensor& vb = g.node(pb).value;
                     if (g.wants_grad(pa)) {
                         Tensor& dst = g.grad_buf(pa);
                         for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) += gs * vb.at(i);
                     }
                     if (g.wants_grad(pb)) {
                         Tensor& dst = g.grad_buf(pb);
                         for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) += gs * va.at(i);
                     }
                 },
                 "dot")};
}

Var Graph::transpose(Var a) {
    check_var(a, "transpose");
    Tensor out = dense::transpose(node(a.id).value);
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     accumulate(g.grad_buf(pa), dense::transpose(g.node(self).grad));
                 },
                 "transpose")};
}

Var Graph::add_rowvec(Var m, Var v) {
    check_var(m, "add_rowvec");
    check_var(v, "add_rowvec");
    const Tensor& tm = node(m.id).value;
    const Tensor& tv = node(v.id).value;
    if (tm.rank() != 2 || tv.rank() != 1 || tm.cols() != tv.dim(0))
        throw DimensionError("add_rowvec: need (r,c) + (c)");
    Tensor out = tm;
    const int r = tm.rows(), c = tm.cols();
    for (int i = 0; i < r; ++i) {
        double* row = out.row(i).data();
        for (int j = 0; j < c; ++j) row[j] += tv.at(static_cast<std::size_t>(j));
    }
    const int pm = m.id, pv = v.id;
    return {make(std::move(out), {pm, pv},
                 [pm, pv, r, c](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     if (g.wants_grad(pm)) accumulate(g.grad_buf(pm), gr);
                     if (g.wants_grad(pv)) {
                         Tensor& dst = g.grad_buf(pv);
                         for (int i = 0; i < r; ++i)
                             for (int j = 0; j < c; ++j) dst.at(static_cast<std::size_t>(j)) += gr.at(i, j);
                     }
                 },
                 "add_rowvec")};
}

Var Graph::sum(Var a) {
    check_var(a, "sum");
    const Tensor& ta = node(a.id).value;
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += ta.at(i);
    const int pa = a.id;
    return {make(Tensor::scalar(s), {pa},
                 [pa](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const double gs = g.node(self).grad.at(0);
                     Tensor& dst = g.grad_buf(pa);
                     for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) += gs;
                 },
                 "sum")};
}

Var Graph::mean(Var a) {
    check_var(a, "mean");
    const std::size_t n = node(a.id).value.size();
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Graph::pick(Var a, int index) {
    check_var(a, "pick");
    const Tensor& ta = node(a.id).value;
    if (index < 0 || static_cast<std::size_t>(index) >= ta.size())
        throw DimensionError("pick: index out of range");
    const int pa = a.id;
    return {make(Tensor::scalar(ta.at(static_cast<std::size_t>(index))), {pa},
                 [pa, index](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     g.grad_buf(pa).at(static_cast<std::size_t>(index)) += g.node(self).grad.at(0);
                 },
                 "pick")};
}

Var Graph::gather(Var a, std::vector<int> idx) {
    check_var(a, "gather");
    const Tensor& ta = node(a.id).value;
    if (ta.rank() != 1) throw DimensionError("gather: expected 1-D tensor");
    if (idx.empty()) throw DimensionError("gather: empty index list");
    Tensor out({static_cast<int>(idx.size())});
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const int i = idx[j];
        if (i < 0 || i >= ta.dim(0)) throw DimensionError("gather: index out of range");
        out.at(j) = ta.at(static_cast<std::size_t>(i));
    }
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa, idx = std::move(idx)](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     Tensor& dst = g.grad_buf(pa);
                     for (std::size_t j = 0; j < idx.size(); ++j)
                         dst.at(static_cast<std::size_t>(idx[j])) += gr.at(j);
                 },
                 "gather")};
}

Var Graph::gather_rows(Var a, std::vector<int> rows) {
    check_var(a, "gather_rows");
    const Tensor& ta = node(a.id).value;
    if (ta.rank() != 2) throw DimensionError("gather_rows: expected 2-D tensor");
    if (rows.empty()) throw DimensionError("gather_rows: empty row list");
    const int c = ta.cols();
    Tensor out({static_cast<int>(rows.size()), c});
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const int r = rows[j];
        if (r < 0 || r >= ta.rows()) throw DimensionError("gather_rows: row out of range");
        std::copy_n(ta.row(r).data(), c, out.row(static_cast<int>(j)).data());
    }
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa, rows = std::move(rows), c](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     Tensor& dst = g.grad_buf(pa);
                     for (std::size_t j = 0; j < rows.size(); ++j) {
                         const double* src = gr.row(static_cast<int>(j)).data();
                         double* d = dst.row(rows[j]).data();
                         for (int k = 0; k < c; ++k) d[k] += src[k];
                     }
                 },
                 "gather_rows")};
}

Var Graph::concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat: no parts");
    int total = 0;
    for (Var p : parts) {
        check_var(p, "concat");
        const Tensor& t = node(p.id).value;
        if (t.rank() != 1) throw DimensionError("concat: expected 1-D parts");
        total += t.dim(0);
    }
    Tensor out({total});
    std::vector<int> pids;
    std::vector<int> offsets;
    int off = 0;
    for (Var p : parts) {
        const Tensor& t = node(p.id).value;
        std::copy_n(t.data(), t.size(), out.data() + off);
        pids.push_back(p.id);
        offsets.push_back(off);
        off += static_cast<int>(t.size());
    }
    return {make(std::move(out), pids,
                 [pids, offsets](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     for (std::size_t k = 0; k < pids.size(); ++k) {
                         if (!g.wants_grad(pids[k])) continue;
                         Tensor& dst = g.grad_buf(pids[k]);
                         for (std::size_t i = 0; i < dst.size(); ++i)
                             dst.at(i) += gr.at(static_cast<std::size_t>(offsets[k]) + i);
                     }
                 },
                 "concat")};
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    int rows = -1, total_cols = 0;
    for (Var p : parts) {
        check_var(p, "concat_cols");
        const Tensor& t = node(p.id).value;
        if (t.rank() != 2) throw DimensionError("concat_cols: expected 2-D parts");
        if (rows < 0) rows = t.rows();
        if (t.rows() != rows) throw DimensionError("concat_cols: row count mismatch");
        total_cols += t.cols();
    }
    Tensor out({rows, total_cols});
    std::vector<int> pids;
    std::vector<int> offsets;
    int off = 0;
    for (Var p : parts) {
        const Tensor& t = node(p.id).value;
        const int c = t.cols();
        for (int i = 0; i < rows; ++i)
            std::copy_n(t.row(i).data(), c, out.row(i).data() + off);
        pids.push_back(p.id);
        offsets.push_back(off);
        off += c;
    }
    return {make(std::move(out), pids,
                 [pids, offsets, rows](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     for (std::size_t k = 0; k < pids.size(); ++k) {
                         if (!g.wants_grad(pids[k])) continue;
                         Tensor& dst = g.grad_buf(pids[k]);
                         const int c = dst.cols();
                         for (int i = 0; i < rows; ++i) {
                             const double* src = gr.row(i).data() + offsets[k];
                             double* d = dst.row(i).data();
                             for (int j = 0; j < c; ++j) d[j] += src[j];
                         }
                     }
                 },
                 "concat_cols")};
}

Var Graph::slice_cols(Var a, int c0, int c1) {
    check_var(a, "slice_cols");
    const Tensor& ta = node(a.id).value;
    if (ta.rank() != 2) throw DimensionError("slice_cols: expected 2-D tensor");
    if (c0 < 0 || c1 <= c0 || c1 > ta.cols()) throw DimensionError("slice_cols: bad column range");
    const int r = ta.rows(), c = c1 - c0;
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) std::copy_n(ta.row(i).data() + c0, c, out.row(i).data());
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa, c0, r, c](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     Tensor& dst = g.grad_buf(pa);
                     for (int i = 0; i < r; ++i) {
                         const double* src = gr.row(i).data();
                         double* d = dst.row(i).data() + c0;
                         for (int j = 0; j < c; ++j) d[j] += src[j];
                     }
                 },
                 "slice_cols")};
}

Var Graph::softmax(Var a) {
    check_var(a, "softmax");
    const Tensor& ta = node(a.id).value;
    const RowView rv = row_view(ta, "softmax");
    Tensor out = ta;
    for (int i = 0; i < rv.rows; ++i) {
        double* row = out.data() + static_cast<std::size_t>(i) * rv.cols;
        const double m = *std::max_element(row, row + rv.cols);
        double s = 0.0;
        for (int j = 0; j < rv.cols; ++j) {
            row[j] = std::exp(row[j] - m);
            s += row[j];
        }
        for (int j = 0; j < rv.cols; ++j) row[j] /= s;
    }
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa, rv](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& y = g.node(self).value;
                     Tensor& dst = g.grad_buf(pa);
                     for (int i = 0; i < rv.rows; ++i) {
                         const std::size_t base = static_cast<std::size_t>(i) * rv.cols;
                         double gy = 0.0;
                         for (int j = 0; j < rv.cols; ++j) gy += gr.at(base + j) * y.at(base + j);
                         for (int j = 0; j < rv.cols; ++j)
                             dst.at(base + j) += y.at(base + j) * (gr.at(base + j) - gy);
                     }
                 },
                 "softmax")};
}

Var Graph::log_softmax(Var a) {
    check_var(a, "log_softmax");
    const Tensor& ta = node(a.id).value;
    const RowView rv = row_view(ta, "log_softmax");
    Tensor out = ta;
    for (int i = 0; i < rv.rows; ++i) {
        double* row = out.data() + static_cast<std::size_t>(i) * rv.cols;
        const double m = *std::max_element(row, row + rv.cols);
        double s = 0.0;
        for (int j = 0; j < rv.cols; ++j) s += std::exp(row[j] - m);
        const double lse = m + std::log(s);
        for (int j = 0; j < rv.cols; ++j) row[j] -= lse;
    }
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa, rv](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& y = g.node(self).value;
                     Tensor& dst = g.grad_buf(pa);
                     for (int i = 0; i < rv.rows; ++i) {
                         const std::size_t base = static_cast<std::size_t>(i) * rv.cols;
                         double gsum = 0.0;
                         for (int j = 0; j < rv.cols; ++j) gsum += gr.at(base + j);
                         for (int j = 0; j < rv.cols; ++j)
                             dst.at(base + j) += gr.at(base + j) - std::exp(y.at(base + j)) * gsum;
                     }
                 },
                 "log_softmax")};
}

Var Graph::logsumexp(Var a) {
    check_var(a, "logsumexp");
    const Tensor& ta = node(a.id).value;
    const RowView rv = row_view(ta, "logsumexp");
    Tensor out(ta.rank() == 1 ? std::vector<int>{1} : std::vector<int>{rv.rows});
    for (int i = 0; i < rv.rows; ++i) {
        const double* row = ta.data() + static_cast<std::size_t>(i) * rv.cols;
        const double m = *std::max_element(row, row + rv.cols);
        double s = 0.0;
        for (int j = 0; j < rv.cols; ++j) s += std::exp(row[j] - m);
        out.at(static_cast<std::size_t>(i)) = m + std::log(s);
    }
    const int pa = a.id;
    return {make(std::move(out), {pa},
                 [pa, rv](Graph& g, int self) {
                     if (!g.wants_grad(pa)) return;
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& lse = g.node(self).value;
                     const Tensor& x = g.node(pa).value;
                     Tensor& dst = g.grad_buf(pa);
                     for (int i = 0; i < rv.rows; ++i) {
                         const double gi = gr.at(static_cast<std::size_t>(i));
                         if (gi == 0.0) continue;
                         const std::size_t base = static_cast<std::size_t>(i) * rv.cols;
                         const double l = lse.at(static_cast<std::size_t>(i));
                         for (int j = 0; j < rv.cols; ++j)
                             dst.at(base + j) += gi * std::exp(x.at(base + j) - l);
                     }
                 },
                 "logsumexp")};
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    check_var(x, "layer_norm");
    check_var(gain, "layer_norm");
    check_var(bias, "layer_norm");
    const Tensor& tx = node(x.id).value;
    const RowView rv = row_view(tx, "layer_norm");
    if (rv.cols < 2) throw DimensionError("layer_norm: need at least 2 features per row");
    const Tensor& tg = node(gain.id).value;
    const Tensor& tb = node(bias.id).value;
    if (tg.rank() != 1 || tg.dim(0) != rv.cols || tb.rank() != 1 || tb.dim(0) != rv.cols)
        throw DimensionError("layer_norm: gain/bias must be 1-D of row width");

    Tensor out = tx;
    for (int i = 0; i < rv.rows; ++i) {
        double* row = out.data() + static_cast<std::size_t>(i) * rv.cols;
        double mu = 0.0;
        for (int j = 0; j < rv.cols; ++j) mu += row[j];
        mu /= rv.cols;
        double var = 0.0;
        for (int j = 0; j < rv.cols; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= rv.cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < rv.cols; ++j)
            row[j] = tg.at(static_cast<std::size_t>(j)) * (row[j] - mu) * inv +
                     tb.at(static_cast<std::size_t>(j));
    }
    const int px = x.id, pg = gain.id, pb = bias.id;
    return {make(std::move(out), {px, pg, pb},
                 [px, pg, pb, rv, eps](Graph& g, int self) {
                     const Tensor& gr = g.node(self).grad;
                     const Tensor& tx2 = g.node(px).value;
                     const Tensor& tg2 = g.node(pg).value;
                     const int n = rv.cols;
                     for (int i = 0; i < rv.rows; ++i) {
                         const std::size_t base = static_cast<std::size_t>(i) * n;
                         double mu = 0.0;
                         for (int j = 0; j < n; ++j) mu += tx2.at(base + j);
                         mu /= n;
                         double var = 0.0;
                         for (int j = 0; j < n; ++j) {
                             const double d = tx2.at(base + j) - mu;
                             var += d * d;
                         }
                         var /= n;
                         const double inv = 1.0 / std::sqrt(var + eps);

                         double sum1 = 0.0, sum2 = 0.0;
                         for (int j = 0; j < n; ++j) {
                             const double xhat = (tx2.at(base + j) - mu) * inv;
                             const double dxhat = gr.at(base + j) * tg2.at(static_cast<std::size_t>(j));
                             sum1 += dxhat;
                             sum2 += dxhat * xhat;
                         }
                         if (g.wants_grad(px)) {
                             Tensor& dx = g.grad_buf(px);
                             for (int j = 0; j < n; ++j) {
                                 const double xhat = (tx2.at(base + j) - mu) * inv;
                                 const double dxhat =
                                     gr.at(base + j) * tg2.at(static_cast<std::size_t>(j));
                                 dx.at(base + j) += inv * (dxhat - sum1 / n - xhat * sum2 / n);
                             }
                         }
                         if (g.wants_grad(pg)) {
                             Tensor& dg = g.grad_buf(pg);
                             for (int j = 0; j < n; ++j) {
                                 const double xhat = (tx2.at(base + j) - mu) * inv;
                                 dg.at(static_cast<std::size_t>(j)) += gr.at(base + j) * xhat;
                             }
                         }
                         if (g.wants_grad(pb)) {
                             Tensor& db = g.grad_buf(pb);
                             for (int j = 0; j < n; ++j)
                                 db.at(static_cast<std::size_t>(j)) += gr.at(base + j);
                         }
                     }
                 },
                 "layer_norm")};
}

Var Graph::bce_with_logits_sum(Var logits, Tensor targets) {
    check_var(logits, "bce_with_logits_sum");
    const Tensor& tl = node(logits.id).value;
    if (!tl.same_shape(targets))
        throw DimensionError("bce_with_logits_sum: target shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < tl.size(); ++i) {
        const double l = tl.at(i);
        const double t = targets.at(i);
        total += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
    }
    const int pl = logits.id;
    return {make(Tensor::scalar(total), {pl},
                 [pl, targets = std::move(targets)](Graph& g, int self) {
                     if (!g.wants_grad(pl)) return;
                     const double gs = g.node(self).grad.at(0);
                     const Tensor& tl2 = g.node(pl).value;
                     Tensor& dst = g.grad_buf(pl);
                     for (std::size_t i = 0; i < dst.size(); ++i)
                         dst.at(i) += gs * (stable_sigmoid(tl2.at(i)) - targets.at(i));
                 },
                 "bce_with_logits_sum")};
}

void Graph::backward(Var loss) {
    check_var(loss, "backward");
    if (ran_backward_) throw ContractError("backward: may only run once per graph");
    ran_backward_ = true;
    const Node& ln = node(loss.id);
    if (ln.value.size() != 1) throw ContractError("backward: loss must be scalar");
    grad_buf(loss.id).at(0) = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = node(id);
        if (!n.requires_grad || n.grad.empty() || !n.back) continue;
        n.back(*this, id);
    }
    for (const Node& n : nodes_) {
        if (!n.grad.empty() && !n.grad.all_finite())
            throw NumericError("backward produced a non-finite gradient");
    }
}

Var Binder::param(Tensor& t) {
    auto it = bound_.find(&t);
    if (it != bound_.end()) return it->second;
    const Var v = g_->param(t);
    bound_.emplace(&t, v);
    order_.emplace_back(&t, v);
    return v;
}

void Sgd::update(const std::string& key, Tensor& parameter, const Tensor& gradient,
                 const SgdConfig& cfg) {
    if (!parameter.same_shape(gradient))
        throw DimensionError("sgd: gradient shape mismatch for " + key);
    Tensor& vel = velocity_[key];
    if (!vel.same_shape(parameter)) vel = Tensor(parameter.shape());
    for (std::size_t i = 0; i < parameter.size(); ++i) {
        const double g = gradient.at(i) + cfg.weight_decay * parameter.at(i);
        vel.at(i) = cfg.momentum * vel.at(i) + g;
        parameter.at(i) -= cfg.lr * vel.at(i);
    }
}

}  // namespace faircc

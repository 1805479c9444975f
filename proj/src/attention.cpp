#include "faircc/attention.hpp"

#include <cmath>

#include "faircc/errors.hpp"

namespace faircc {

MhsaBlockParams MhsaBlockParams::init(int dim, int heads, int mlp_width, Rng& rng) {
    if (dim <= 0 || heads <= 0 || mlp_width <= 0)
        throw ConfigError("attention block: dimensions must be positive");
    if (dim % heads != 0)
        throw ConfigError("attention block: dim must be divisible by head count");
    MhsaBlockParams p;
    p.heads = heads;
    const double attn_sd = 1.0 / std::sqrt(static_cast<double>(dim));
    p.wq = Tensor::randn({dim, dim}, rng, attn_sd);
    p.bq = Tensor({dim});
    p.wk = Tensor::randn({dim, dim}, rng, attn_sd);
    p.wv = Tensor::randn({dim, dim}, rng, attn_sd);
    p.bv = Tensor({dim});
    p.wo = Tensor::randn({dim, dim}, rng, attn_sd);
    p.bo = Tensor({dim});
    p.ln_gain = Tensor::full({dim}, 1.0);
    p.ln_bias = Tensor({dim});
    p.mlp_w1 = Tensor::randn({dim, mlp_width}, rng, attn_sd);
    p.mlp_b1 = Tensor({mlp_width});
    p.mlp_w2 = Tensor::randn({mlp_width, dim}, rng, 1.0 / std::sqrt(static_cast<double>(mlp_width)));
    p.mlp_b2 = Tensor({dim});
    return p;
}

std::vector<std::pair<std::string, Tensor*>> MhsaBlockParams::named() {
    return {{"wq", &wq},         {"bq", &bq},         {"wk", &wk},
            {"wv", &wv},         {"bv", &bv},         {"wo", &wo},       {"bo", &bo},
            {"ln_g", &ln_gain},  {"ln_b", &ln_bias},  {"mw1", &mlp_w1},  {"mb1", &mlp_b1},
            {"mw2", &mlp_w2},    {"mb2", &mlp_b2}};
}

std::vector<std::pair<std::string, const Tensor*>> MhsaBlockParams::named() const {
    auto mut = const_cast<MhsaBlockParams*>(this)->named();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [k, t] : mut) out.emplace_back(k, t);
    return out;
}

MhsaBlockVars MhsaBlockVars::bind(Binder& b, MhsaBlockParams& p) {
    MhsaBlockVars v;
    v.wq = b(p.wq);
    v.bq = b(p.bq);
    v.wk = b(p.wk);
    v.wv = b(p.wv);
    v.bv = b(p.bv);
    v.wo = b(p.wo);
    v.bo = b(p.bo);
    v.ln_gain = b(p.ln_gain);
    v.ln_bias = b(p.ln_bias);
    v.mlp_w1 = b(p.mlp_w1);
    v.mlp_b1 = b(p.mlp_b1);
    v.mlp_w2 = b(p.mlp_w2);
    v.mlp_b2 = b(p.mlp_b2);
    v.heads = p.heads;
    return v;
}

MhsaBlockVars MhsaBlockVars::bind_const(Graph& g, const MhsaBlockParams& p) {
    MhsaBlockVars v;
    v.wq = g.constant(p.wq);
    v.bq = g.constant(p.bq);
    v.wk = g.constant(p.wk);
    v.wv = g.constant(p.wv);
    v.bv = g.constant(p.bv);
    v.wo = g.constant(p.wo);
    v.bo = g.constant(p.bo);
    v.ln_gain = g.constant(p.ln_gain);
    v.ln_bias = g.constant(p.ln_bias);
    v.mlp_w1 = g.constant(p.mlp_w1);
    v.mlp_b1 = g.constant(p.mlp_b1);
    v.mlp_w2 = g.constant(p.mlp_w2);
    v.mlp_b2 = g.constant(p.mlp_b2);
    v.heads = p.heads;
    return v;
}

Var multi_head_self_attention(Graph& g, Var z, const MhsaBlockVars& p) {
    const Tensor& tz = g.value(z);
    if (tz.rank() != 2) throw DimensionError("mhsa: expected a 2-D token matrix");
    const int dim = tz.cols();
    if (dim % p.heads != 0) throw ConfigError("mhsa: dim not divisible by head count");
    const int dh = dim / p.heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    const Var q = g.add_rowvec(g.matmul(z, p.wq), p.bq);
    const Var k = g.matmul(z, p.wk);
    const Var v = g.add_rowvec(g.matmul(z, p.wv), p.bv);

    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        const int c0 = h * dh, c1 = (h + 1) * dh;
        const Var qh = g.slice_cols(q, c0, c1);
        const Var kh = g.slice_cols(k, c0, c1);
        const Var vh = g.slice_cols(v, c0, c1);
        const Var scores = g.scale(g.matmul(qh, g.transpose(kh)), scl);
        const Var attn = g.softmax(scores);
        heads.push_back(g.matmul(attn, vh));
    }
    const Var merged = p.heads == 1 ? heads[0] : g.concat_cols(heads);
    return g.add_rowvec(g.matmul(merged, p.wo), p.bo);
}

Var mhsa_block(Graph& g, Var z, const MhsaBlockVars& p) {
    const Var a = g.add(z, multi_head_self_attention(g, z, p));
    const Var normed = g.layer_norm(a, p.ln_gain, p.ln_bias);
    const Var hidden = g.gelu(g.add_rowvec(g.matmul(normed, p.mlp_w1), p.mlp_b1));
    const Var mlp_out = g.add_rowvec(g.matmul(hidden, p.mlp_w2), p.mlp_b2);
    return g.add(a, mlp_out);
}

}  // namespace faircc

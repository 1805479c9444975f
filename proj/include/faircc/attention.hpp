#pragma once

#include <string>
#include <vector>

#include "faircc/graph.hpp"
#include "faircc/rng.hpp"
#include "faircc/tensor.hpp"

namespace faircc {

// Parameters of one residual self-attention block:
//   a = z + MHSA(z)
//   out = a + MLP(LN(a))
// The attention branch runs on z directly; only the MLP branch normalizes.
// Keys carry no bias: softmax is invariant to a per-row constant, so a key
// bias would be a dead parameter.
struct MhsaBlockParams {
    Tensor wq, bq, wk, wv, bv, wo, bo;
    Tensor ln_gain, ln_bias;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    int heads = 4;

    static MhsaBlockParams init(int dim, int heads, int mlp_width, Rng& rng);
    // Ordered (suffix, tensor) pairs for binding, serialization and SGD keys.
    std::vector<std::pair<std::string, Tensor*>> named();
    std::vector<std::pair<std::string, const Tensor*>> named() const;
};

// Bound graph handles for one block; `bind` inserts parameters as trainable
// leaves, `bind_const` as constants (inference).
struct MhsaBlockVars {
    Var wq, bq, wk, wv, bv, wo, bo;
    Var ln_gain, ln_bias;
    Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    int heads = 4;

    static MhsaBlockVars bind(Binder& b, MhsaBlockParams& p);
    static MhsaBlockVars bind_const(Graph& g, const MhsaBlockParams& p);
};

// Scaled dot-product multi-head self-attention over the rows of z ((M+1) x D).
Var multi_head_self_attention(Graph& g, Var z, const MhsaBlockVars& p);

// Full block as described above. Throws ConfigError if D is not divisible by
// the head count.
Var mhsa_block(Graph& g, Var z, const MhsaBlockVars& p);

}  // namespace faircc

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "faircc/attention.hpp"
#include "faircc/errors.hpp"
#include "faircc/gradcheck.hpp"
#include "faircc/graph.hpp"
#include "faircc/rng.hpp"
#include "faircc/tensor.hpp"

using namespace faircc;

namespace {

// Independent triple-loop product used as the matmul oracle.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

// Brute-force multi-head attention in plain doubles (no graph), including the
// residual; mirrors the a = z + MHSA(z) part of the block.
Tensor naive_mhsa(const Tensor& z, const MhsaBlockParams& p) {
    const int n = z.rows(), d = z.cols(), heads = p.heads, dh = d / heads;
    auto affine = [&](const Tensor& w, const Tensor& b) {
        Tensor out({n, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                double s = b.at(static_cast<std::size_t>(j));
                for (int k = 0; k < d; ++k) s += z.at(i, k) * w.at(k, j);
                out.at(i, j) = s;
            }
        return out;
    };
    const Tensor q = affine(p.wq, p.bq), v = affine(p.wv, p.bv);
    Tensor k({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += z.at(i, c) * p.wk.at(c, j);
            k.at(i, j) = s;
        }
    Tensor merged({n, d});
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        for (int i = 0; i < n; ++i) {
            std::vector<double> scores(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int c = 0; c < dh; ++c) s += q.at(i, c0 + c) * k.at(j, c0 + c);
                scores[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
            }
            const double m = *std::max_element(scores.begin(), scores.end());
            double denom = 0.0;
            for (double& s : scores) {
                s = std::exp(s - m);
                denom += s;
            }
            for (double& s : scores) s /= denom;
            for (int c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) acc += scores[static_cast<std::size_t>(j)] * v.at(j, c0 + c);
                merged.at(i, c0 + c) = acc;
            }
        }
    }
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            double s = p.bo.at(static_cast<std::size_t>(j));
            for (int c = 0; c < d; ++c) s += merged.at(i, c) * p.wo.at(c, j);
            out.at(i, j) = z.at(i, j) + s;
        }
    return out;
}

}  // namespace

TEST_CASE("matmul identity, zero and oracle cases") {
    Graph g;
    Rng rng(7);

    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    const Tensor a = Tensor::randn({3, 3}, rng);
    const Var prod = g.matmul(g.constant(eye), g.constant(a));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(g.value(prod).at(i) == doctest::Approx(a.at(i)).epsilon(1e-14));

    const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    const Tensor zcol = Tensor::zeros({2, 1});
    const Var zero = g.matmul(g.constant(m), g.constant(zcol));
    CHECK(g.value(zero).at(0) == 0.0);
    CHECK(g.value(zero).at(1) == 0.0);

    const Tensor x = Tensor::randn({5, 7}, rng);
    const Tensor y = Tensor::randn({7, 3}, rng);
    const Var p = g.matmul(g.constant(x), g.constant(y));
    const Tensor expect = naive_matmul(x, y);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(std::abs(g.value(p).at(i) - expect.at(i)) < 1e-12);

    CHECK_THROWS_AS(g.matmul(g.constant(x), g.constant(x)), DimensionError);
}

TEST_CASE("softmax values, normalization and shift invariance") {
    Graph g;
    const Var sym = g.softmax(g.constant(Tensor::row_vector({0.0, 0.0})));
    CHECK(g.value(sym).at(0) == doctest::Approx(0.5).epsilon(1e-12));

    const Var two = g.softmax(g.constant(Tensor::row_vector({1.0, 0.0})));
    const double e = std::exp(1.0);
    CHECK(std::abs(g.value(two).at(0) - e / (e + 1.0)) < 1e-12);
    CHECK(g.value(two).at(0) == doctest::Approx(0.73106).epsilon(1e-4));
    CHECK(g.value(two).at(1) == doctest::Approx(0.26894).epsilon(1e-4));

    for (double c : {-3.0, 0.0, 41.5}) {
        const Var u = g.softmax(g.constant(Tensor::row_vector({c, c, c, c})));
        for (int i = 0; i < 4; ++i) CHECK(std::abs(g.value(u).at(static_cast<std::size_t>(i)) - 0.25) < 1e-12);
    }

    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor logits = Tensor::randn({9}, rng, 3.0);
        Tensor shifted = logits;
        const double c = rng.uniform(-50.0, 50.0);
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted.at(i) += c;
        const Var y0 = g.softmax(g.constant(logits));
        const Var y1 = g.softmax(g.constant(shifted));
        double total = 0.0;
        for (std::size_t i = 0; i < g.value(y0).size(); ++i) {
            total += g.value(y0).at(i);
            CHECK(std::abs(g.value(y0).at(i) - g.value(y1).at(i)) < 1e-12);
            CHECK(g.value(y0).at(i) > 0.0);
            CHECK(g.value(y0).at(i) < 1.0);
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }

    CHECK_THROWS_AS(g.softmax(g.constant(Tensor())), DimensionError);
}

TEST_CASE("layer_norm examples and moments") {
    Graph g;
    const Var ones_gain = g.constant(Tensor::full({4}, 1.0));
    const Var zero_bias = g.constant(Tensor::zeros({4}));

    const Var flat = g.layer_norm(g.constant(Tensor::full({4}, 3.7)), ones_gain, zero_bias);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(g.value(flat).at(i)) < 1e-9);

    const Var pm = g.layer_norm(g.constant(Tensor::row_vector({1.0, -1.0})),
                                g.constant(Tensor::full({2}, 1.0)), g.constant(Tensor::zeros({2})));
    const double expect = 1.0 / std::sqrt(1.0 + 1e-6);
    CHECK(g.value(pm).at(0) == doctest::Approx(expect).epsilon(1e-14));
    CHECK(g.value(pm).at(1) == doctest::Approx(-expect).epsilon(1e-14));
    CHECK(g.value(pm).at(0) == doctest::Approx(1.0).epsilon(1e-5));

    Rng rng(3);
    const Tensor x = Tensor::randn({6}, rng, 2.0);
    const Tensor b = Tensor::randn({6}, rng);
    const Var biased = g.layer_norm(g.constant(x), g.constant(Tensor::zeros({6})), g.constant(b));
    for (std::size_t i = 0; i < 6; ++i) CHECK(g.value(biased).at(i) == doctest::Approx(b.at(i)).epsilon(1e-14));

    // Pre-affine moments: exact zero mean; unit variance up to the epsilon
    // term, which drops below 1e-9 once the input variance is large.
    const Tensor wide = Tensor::randn({16}, rng, 100.0);
    const Var normed = g.layer_norm(g.constant(wide), g.constant(Tensor::full({16}, 1.0)),
                                    g.constant(Tensor::zeros({16})));
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 16; ++i) mu += g.value(normed).at(i);
    mu /= 16.0;
    for (std::size_t i = 0; i < 16; ++i) {
        const double d = g.value(normed).at(i) - mu;
        var += d * d;
    }
    var /= 16.0;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);

    CHECK_THROWS_AS(g.layer_norm(g.constant(Tensor::row_vector({1.0})),
                                 g.constant(Tensor::row_vector({1.0})),
                                 g.constant(Tensor::row_vector({0.0}))),
                    DimensionError);
}

TEST_CASE("mhsa_block shape, determinism, permutation and oracle") {
    SUBCASE("shape contract at full size") {
        Rng rng(21);
        MhsaBlockParams p = MhsaBlockParams::init(64, 4, 256, rng);
        Graph g;
        const Var z = g.constant(Tensor::randn({129, 64}, rng));
        const Var out = mhsa_block(g, z, MhsaBlockVars::bind_const(g, p));
        CHECK(g.value(out).rows() == 129);
        CHECK(g.value(out).cols() == 64);
    }

    SUBCASE("bit determinism for a fixed seed") {
        auto run = [] {
            Rng rng(5);
            MhsaBlockParams p = MhsaBlockParams::init(16, 4, 64, rng);
            Graph g;
            const Var z = g.constant(Tensor::randn({9, 16}, rng));
            const Var out = mhsa_block(g, z, MhsaBlockVars::bind_const(g, p));
            return g.value(out);
        };
        CHECK(run().bit_equal(run()));
    }

    SUBCASE("matches brute-force attention and is permutation-equivariant") {
        Rng rng(13);
        MhsaBlockParams p = MhsaBlockParams::init(8, 2, 32, rng);
        const Tensor z = Tensor::randn({5, 8}, rng);  // M=4 deltas + center row

        Graph g;
        const MhsaBlockVars pv = MhsaBlockVars::bind_const(g, p);
        const Var attn = g.add(g.constant(z), multi_head_self_attention(g, g.constant(z), pv));
        const Tensor oracle = naive_mhsa(z, p);
        for (std::size_t i = 0; i < oracle.size(); ++i)
            CHECK(std::abs(g.value(attn).at(i) - oracle.at(i)) < 1e-12);

        const std::vector<int> perm = {3, 0, 4, 1, 2};
        Tensor zp({5, 8});
        for (int i = 0; i < 5; ++i)
            std::copy_n(z.row(perm[static_cast<std::size_t>(i)]).data(), 8, zp.row(i).data());
        Graph g2;
        const Var base = mhsa_block(g2, g2.constant(z), MhsaBlockVars::bind_const(g2, p));
        const Var permuted = mhsa_block(g2, g2.constant(zp), MhsaBlockVars::bind_const(g2, p));
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 8; ++j)
                CHECK(std::abs(g2.value(permuted).at(i, j) -
                               g2.value(base).at(perm[static_cast<std::size_t>(i)], j)) < 1e-12);
    }

    SUBCASE("indivisible head count is a configuration error") {
        Rng rng(1);
        CHECK_THROWS_AS(MhsaBlockParams::init(10, 4, 40, rng), ConfigError);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("sum gradient is all ones") {
        Graph g;
        const Var x = g.param(Tensor::row_vector({1.0, -2.0, 3.0}));
        g.backward(g.sum(x));
        for (std::size_t i = 0; i < 3; ++i) CHECK(g.grad(x).at(i) == 1.0);
    }

    SUBCASE("dot(x, x) gradient is 2x") {
        Graph g;
        const Var x = g.param(Tensor::row_vector({0.5, -1.5, 2.0, 4.0}));
        g.backward(g.dot(x, x));
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(g.grad(x).at(i) == doctest::Approx(2.0 * g.value(x).at(i)).epsilon(1e-14));
    }

    SUBCASE("non-scalar loss is a contract error") {
        Graph g;
        const Var x = g.param(Tensor::row_vector({1.0, 2.0}));
        CHECK_THROWS_AS(g.backward(x), ContractError);
    }

    SUBCASE("overflow is caught") {
        Graph g;
        const Var x = g.constant(Tensor::row_vector({1e200}));
        CHECK_THROWS_AS(g.mul(x, x), NumericError);
    }
}

TEST_CASE("finite differences validate composite gradients") {
    SUBCASE("linear map is exact") {
        Rng rng(17);
        const Tensor w = Tensor::randn({6}, rng);
        const Tensor x0 = Tensor::randn({6}, rng);
        auto fn = [&](std::span<const double> p) {
            double s = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) s += w.at(i) * p[i];
            return s;
        };
        const GradCheckResult r = finite_diff_check(fn, x0.values(), w.values(), 1e-5);
        CHECK(r.max_rel_err < 1e-10);
    }

    SUBCASE("softmax -> log -> sum composite") {
        Rng rng(19);
        for (int trial = 0; trial < 10; ++trial) {
            const Tensor x0 = Tensor::randn({7}, rng, 2.0);
            auto fn = [&](std::span<const double> p) {
                Graph g;
                const Var x = g.constant(Tensor::from({7}, {p.begin(), p.end()}));
                return g.value(g.sum(g.log_softmax(x))).at(0);
            };
            Graph g;
            const Var x = g.param(x0);
            g.backward(g.sum(g.log_softmax(x)));
            const GradCheckResult r = finite_diff_check(fn, x0.values(), g.grad(x).values(), 1e-5);
            CHECK(r.max_rel_err < 1e-4);
        }
    }

    SUBCASE("mhsa_block composed to a scalar") {
        Rng rng(23);
        MhsaBlockParams p = MhsaBlockParams::init(8, 2, 16, rng);
        const Tensor z0 = Tensor::randn({5, 8}, rng);
        auto fn = [&](std::span<const double> pt) {
            Graph g;
            const Var z = g.constant(Tensor::from({5, 8}, {pt.begin(), pt.end()}));
            const Var out = mhsa_block(g, z, MhsaBlockVars::bind_const(g, p));
            return g.value(g.sum(out)).at(0);
        };
        Graph g;
        const Var z = g.param(z0);
        const Var out = mhsa_block(g, z, MhsaBlockVars::bind_const(g, p));
        g.backward(g.sum(out));
        const GradCheckResult r = finite_diff_check(fn, z0.values(), g.grad(z).values(), 1e-5);
        CHECK(r.max_rel_err < 1e-3);
    }

    SUBCASE("layer_norm parameters") {
        Rng rng(29);
        const Tensor x0 = Tensor::randn({2, 6}, rng);
        const Tensor g0 = Tensor::randn({6}, rng);
        const Tensor b0 = Tensor::randn({6}, rng);
        auto fn = [&](std::span<const double> pt) {
            Graph g;
            const Var x = g.constant(x0);
            const Var gain = g.constant(Tensor::from({6}, {pt.begin(), pt.end()}));
            const Var bias = g.constant(b0);
            return g.value(g.sum(g.square(g.layer_norm(x, gain, bias)))).at(0);
        };
        Graph g;
        const Var gain = g.param(g0);
        const Var loss = g.sum(g.square(g.layer_norm(g.constant(x0), gain, g.constant(b0))));
        g.backward(loss);
        const GradCheckResult r = finite_diff_check(fn, g0.values(), g.grad(gain).values(), 1e-5);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("rng streams are deterministic and forkable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    Rng f1 = c.fork(1), f2 = c.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());
    int lo = 0, hi = 0;
    Rng d(9);
    for (int i = 0; i < 1000; ++i) {
        const int v = d.uniform_int(2, 5);
        CHECK(v >= 2);
        CHECK(v <= 5);
        if (v == 2) ++lo;
        if (v == 5) ++hi;
    }
    CHECK(lo > 100);
    CHECK(hi > 100);
}

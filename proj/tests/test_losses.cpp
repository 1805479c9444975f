#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "faircc/errors.hpp"
#include "faircc/gradcheck.hpp"
#include "faircc/losses.hpp"
#include "faircc/rng.hpp"

using namespace faircc;

namespace {

Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows.front().size());
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        std::copy(rows[static_cast<std::size_t>(i)].begin(), rows[static_cast<std::size_t>(i)].end(),
                  out.row(i).data());
    return out;
}

}  // namespace

TEST_CASE("enforcement values") {
    const Tensor c = Tensor::row_vector({1.0});

    SUBCASE("single candidate") {
        const Tensor f = Tensor::row_vector({0.3});
        CHECK(enforcement(f, c, stack_rows({{0.3}})) == doctest::Approx(1.0).epsilon(1e-15));
    }

    SUBCASE("two equal logits") {
        const Tensor f = Tensor::row_vector({0.7});
        CHECK(enforcement(f, c, stack_rows({{0.7}, {0.7}})) == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("hand evaluation e/(e+1)") {
        const Tensor f = Tensor::row_vector({1.0});
        const double got = enforcement(f, c, stack_rows({{1.0}, {0.0}}));
        const double e = std::exp(1.0);
        CHECK(got == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
        CHECK(got == doctest::Approx(0.73106).epsilon(1e-4));
    }

    SUBCASE("feature must be a candidate") {
        CHECK_THROWS_AS(enforcement(Tensor::row_vector({9.0}), c, stack_rows({{1.0}})),
                        ContractError);
    }

    SUBCASE("stable under large logits") {
        const Tensor f = Tensor::row_vector({800.0});
        const double got = enforcement(f, Tensor::row_vector({1.0}), stack_rows({{800.0}, {798.0}}));
        CHECK(std::isfinite(got));
        CHECK(got == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    }
}

TEST_CASE("contrastive cluster loss") {
    Graph g;
    const Var c = g.constant(Tensor::row_vector({1.0}));

    SUBCASE("sole member has enforcement 1") {
        const Var cand = g.constant(stack_rows({{0.4}}));
        const std::vector<int> assigned = {0};
        const Var loss = contrastive_cluster_loss(g, cand, assigned, c, false);
        CHECK(g.value(loss).at(0) == doctest::Approx(0.0).epsilon(1e-15));
    }

    SUBCASE("two identical members") {
        const Var cand = g.constant(stack_rows({{0.9}, {0.9}}));
        const std::vector<int> assigned = {0, 1};
        const Var plain = contrastive_cluster_loss(g, cand, assigned, c, false);
        const Var normed = contrastive_cluster_loss(g, cand, assigned, c, true);
        CHECK(g.value(plain).at(0) == doctest::Approx(1.38629).epsilon(1e-5));
        CHECK(g.value(plain).at(0) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
        CHECK(g.value(normed).at(0) == doctest::Approx(0.69315).epsilon(1e-5));
    }

    SUBCASE("empty assignment contributes zero") {
        const Var cand = g.constant(stack_rows({{0.9}, {0.1}}));
        const Var loss = contrastive_cluster_loss(g, cand, {}, c, true);
        CHECK(g.value(loss).at(0) == 0.0);
    }

    SUBCASE("non-negative on random instances") {
        Rng rng(101);
        for (int trial = 0; trial < 20; ++trial) {
            Graph gg;
            const int n = rng.uniform_int(2, 12), d = rng.uniform_int(1, 5);
            const Var cand = gg.constant(Tensor::randn({n, d}, rng, 2.0));
            const Var cc = gg.constant(Tensor::randn({d}, rng));
            std::vector<int> assigned;
            for (int i = 0; i < n; ++i)
                if (rng.uniform() < 0.5) assigned.push_back(i);
            const Var loss =
                contrastive_cluster_loss(gg, cand, assigned, cc, rng.uniform() < 0.5);
            CHECK(gg.value(loss).at(0) >= 0.0);
        }
    }
}

TEST_CASE("fairness cluster loss") {
    SUBCASE("alpha must be positive") {
        Graph g;
        const Var cand = g.constant(stack_rows({{1.0}}));
        const Var c = g.constant(Tensor::row_vector({1.0}));
        const Var v = g.constant(Tensor::row_vector({0.5}));
        const std::vector<int> assigned = {0};
        CHECK_THROWS_AS(fairness_cluster_loss(g, cand, assigned, c, v, 0.0, false), ConfigError);
        CHECK_THROWS_AS(fairness_cluster_loss(g, cand, assigned, c, v, -0.1, false), ConfigError);
    }

    SUBCASE("alpha = 1 reduces to contrastive over the augmented set plus the v-term") {
        Rng rng(7);
        Graph g;
        const int n = 5, d = 3;
        const Tensor cand_t = Tensor::randn({n, d}, rng);
        const Tensor c_t = Tensor::randn({d}, rng);
        const Tensor v_t = Tensor::randn({d}, rng);
        const std::vector<int> assigned = {0, 2, 3};

        const Var fair = fairness_cluster_loss(g, g.constant(cand_t), assigned, g.constant(c_t),
                                               g.constant(v_t), 1.0, false);

        // Augment the candidate matrix with v as an extra row.
        Tensor aug({n + 1, d});
        for (int i = 0; i < n; ++i) std::copy_n(cand_t.row(i).data(), d, aug.row(i).data());
        std::copy_n(v_t.data(), d, aug.row(n).data());
        const Var cont =
            contrastive_cluster_loss(g, g.constant(aug), assigned, g.constant(c_t), false);
        const double v_term = -std::log(enforcement(v_t, c_t, aug));
        CHECK(g.value(fair).at(0) ==
              doctest::Approx(g.value(cont).at(0) + v_term).epsilon(1e-12));
    }

    SUBCASE("gradient matches central differences") {
        Rng rng(13);
        for (int trial = 0; trial < 10; ++trial) {
            const int n = 6, d = 3;
            const Tensor cand0 = Tensor::randn({n, d}, rng, 0.7);
            const Tensor c0 = Tensor::randn({d}, rng, 0.7);
            const Tensor v0 = Tensor::randn({d}, rng, 0.7);
            const std::vector<int> assigned = {0, 2, 3};
            const double alpha = 0.37;
            const bool normalize = trial % 2 == 0;

            // Parameters: flattened candidates followed by v.
            auto fn = [&](std::span<const double> p) {
                Graph g;
                const Var cand =
                    g.constant(Tensor::from({n, d}, {p.begin(), p.begin() + n * d}));
                const Var v = g.constant(Tensor::from({d}, {p.begin() + n * d, p.end()}));
                const Var loss = fairness_cluster_loss(g, cand, assigned, g.constant(c0), v,
                                                       alpha, normalize);
                return g.value(loss).at(0);
            };
            std::vector<double> point(cand0.values().begin(), cand0.values().end());
            point.insert(point.end(), v0.values().begin(), v0.values().end());

            Graph g;
            const Var cand = g.param(cand0);
            const Var v = g.param(v0);
            const Var loss =
                fairness_cluster_loss(g, cand, assigned, g.constant(c0), v, alpha, normalize);
            CHECK(g.value(loss).at(0) >= 0.0);
            g.backward(loss);
            std::vector<double> analytic(g.grad(cand).values().begin(), g.grad(cand).values().end());
            analytic.insert(analytic.end(), g.grad(v).values().begin(), g.grad(v).values().end());

            const auto r = finite_diff_check(fn, point, analytic, 1e-5);
            CHECK(r.max_rel_err < 1e-4);
        }
    }

    SUBCASE("autodiff optimization reaches the proposition-2 optimum") {
        // One-dimensional features with c = [1] make the logits free variables;
        // candidates == assigned, so the enforcements sum to 1 at the optimum.
        const int l = 100;
        const double alpha = 0.05;
        Tensor cand = Tensor::zeros({l, 1});
        Tensor v = Tensor::zeros({1});
        std::vector<int> assigned(l);
        for (int i = 0; i < l; ++i) assigned[static_cast<std::size_t>(i)] = i;

        const double lr = 1.0 / (alpha * l + 1.0);
        Sgd opt;
        SgdConfig cfg{lr, 0.0, 0.0};
        for (int it = 0; it < 6000; ++it) {
            Graph g;
            Binder bind(g);
            const Var loss = fairness_cluster_loss(g, bind(cand), assigned,
                                                   g.constant(Tensor::row_vector({1.0})), bind(v),
                                                   alpha, false);
            g.backward(loss);
            for (const auto& [t, var] : bind.params())
                opt.update(t == &cand ? "cand" : "v", *t, g.grad(var), cfg);
        }
        // Enforcement of each member and of v over the augmented candidate set.
        Tensor aug({l + 1, 1});
        for (int i = 0; i < l; ++i) aug.at(i, 0) = cand.at(i, 0);
        aug.at(l, 0) = v.at(0);
        const auto w = enforcement_all(Tensor::row_vector({1.0}), aug);
        for (int i = 0; i < l; ++i)
            CHECK(w[static_cast<std::size_t>(i)] == doctest::Approx(1.0 / 120.0).epsilon(1e-4));
        CHECK(w[static_cast<std::size_t>(l)] == doctest::Approx(1.0 / 6.0).epsilon(1e-4));
    }
}

TEST_CASE("cluster regularizer") {
    auto reg_value = [](const std::vector<std::vector<double>>& centroids, double margin) {
        Graph g;
        std::vector<Var> vars;
        for (const auto& c : centroids) vars.push_back(g.constant(Tensor::row_vector(c)));
        return g.value(cluster_regularizer(g, vars, margin)).at(0);
    };

    CHECK(reg_value({{0.0, 0.0}, {25.0, 0.0}}, 10.0) == 0.0);
    CHECK(reg_value({{3.0, 4.0}, {3.0, 4.0}}, 10.0) == doctest::Approx(400.0).epsilon(1e-12));
    CHECK(reg_value({{0.0, 0.0}, {14.0, 0.0}}, 10.0) == doctest::Approx(36.0).epsilon(1e-12));
    CHECK(reg_value({{1.0, 1.0}}, 10.0) == 0.0);  // single centroid, no pairs

    SUBCASE("gradient matches central differences away from the kink") {
        Rng rng(23);
        for (int trial = 0; trial < 10; ++trial) {
            const int k = 4, d = 3;
            const Tensor pts = Tensor::randn({k, d}, rng, 6.0);
            auto fn = [&](std::span<const double> p) {
                Graph g;
                std::vector<Var> vars;
                for (int i = 0; i < k; ++i)
                    vars.push_back(g.constant(
                        Tensor::from({d}, {p.begin() + i * d, p.begin() + (i + 1) * d})));
                return g.value(cluster_regularizer(g, vars, 10.0)).at(0);
            };
            Graph g;
            std::vector<Var> vars;
            std::vector<Var> params;
            for (int i = 0; i < k; ++i) {
                const Var v = g.param(Tensor::from(
                    {d}, {pts.values().begin() + i * d, pts.values().begin() + (i + 1) * d}));
                vars.push_back(v);
                params.push_back(v);
            }
            const Var loss = cluster_regularizer(g, vars, 10.0);
            CHECK(g.value(loss).at(0) >= 0.0);
            g.backward(loss);
            std::vector<double> analytic;
            for (const Var v : params)
                analytic.insert(analytic.end(), g.grad(v).values().begin(), g.grad(v).values().end());
            const auto r = finite_diff_check(fn, pts.values(), analytic, 1e-6);
            CHECK(r.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("cross entropy") {
    SUBCASE("overwhelming margin drives the loss to zero") {
        Graph g;
        const Var logits = g.constant(Tensor::row_vector({40.0, 0.0, 0.0}));
        CHECK(g.value(cross_entropy(g, logits, 0)).at(0) < 1e-6);
    }

    SUBCASE("uniform logits give ln(n)") {
        Graph g;
        const Var logits = g.constant(Tensor::row_vector({2.0, 2.0, 2.0, 2.0}));
        const double got = g.value(cross_entropy(g, logits, 2)).at(0);
        CHECK(got == doctest::Approx(std::log(4.0)).epsilon(1e-12));
        CHECK(got == doctest::Approx(1.38629).epsilon(1e-5));
    }

    SUBCASE("out-of-range target") {
        Graph g;
        const Var logits = g.constant(Tensor::row_vector({1.0, 2.0}));
        CHECK_THROWS_AS(cross_entropy(g, logits, 2), ContractError);
        CHECK_THROWS_AS(cross_entropy(g, logits, -1), ContractError);
    }

    SUBCASE("gradient matches central differences") {
        Rng rng(37);
        for (int trial = 0; trial < 10; ++trial) {
            const Tensor x0 = Tensor::randn({6}, rng, 2.0);
            const int target = rng.uniform_int(0, 5);
            auto fn = [&](std::span<const double> p) {
                Graph g;
                const Var x = g.constant(Tensor::from({6}, {p.begin(), p.end()}));
                return g.value(cross_entropy(g, x, target)).at(0);
            };
            Graph g;
            const Var x = g.param(x0);
            const Var loss = cross_entropy(g, x, target);
            CHECK(g.value(loss).at(0) >= 0.0);
            g.backward(loss);
            const auto r = finite_diff_check(fn, x0.values(), g.grad(x).values(), 1e-5);
            CHECK(r.max_rel_err < 1e-4);
        }
    }

    SUBCASE("row-mean variant skips negative targets") {
        Graph g;
        const Var logits =
            g.constant(Tensor::from({3, 2}, {40.0, 0.0, 0.0, 40.0, 5.0, 5.0}));
        const std::vector<int> targets = {0, 1, -1};
        CHECK(g.value(cross_entropy_mean(g, logits, targets)).at(0) < 1e-6);
        const std::vector<int> none = {-1, -1, -1};
        CHECK(g.value(cross_entropy_mean(g, logits, none)).at(0) == 0.0);
    }
}

TEST_CASE("total objective") {
    Graph g;
    const Var ce = g.scalar_const(2.0);
    const std::vector<Var> terms = {g.scalar_const(1.5), g.scalar_const(1.5)};
    const Var reg = g.scalar_const(0.5);

    ObjectiveConfig off;
    off.lambda_cl = 0.0;
    off.lambda_c = 0.0;
    CHECK(g.value(total_objective(g, ce, terms, reg, off)).at(0) == 2.0);

    ObjectiveConfig on;  // both weights 1
    CHECK(g.value(total_objective(g, ce, terms, reg, on)).at(0) ==
          doctest::Approx(5.5).epsilon(1e-15));

    SUBCASE("gradient of the combined objective") {
        Rng rng(41);
        const int n = 4, d = 2;
        const Tensor cand0 = Tensor::randn({n, d}, rng);
        const Tensor c0 = Tensor::randn({d}, rng);
        const Tensor v0 = Tensor::randn({d}, rng);
        const Tensor logits0 = Tensor::randn({3}, rng);
        const std::vector<int> assigned = {0, 1};
        ObjectiveConfig cfg;
        cfg.margin = 2.0;

        auto build = [&](Graph& g2, Var cand, Var v, Var logits) {
            const Var ce2 = cross_entropy(g2, logits, 1);
            const Var fair = fairness_cluster_loss(g2, cand, assigned, g2.constant(c0), v, 0.05,
                                                   true);
            std::vector<Var> cents = {g2.constant(c0), v};
            const Var reg2 = cluster_regularizer(g2, cents, cfg.margin);
            const std::vector<Var> terms2 = {fair};
            return total_objective(g2, ce2, terms2, reg2, cfg);
        };
        auto fn = [&](std::span<const double> p) {
            Graph g2;
            const Var cand = g2.constant(Tensor::from({n, d}, {p.begin(), p.begin() + n * d}));
            const Var v =
                g2.constant(Tensor::from({d}, {p.begin() + n * d, p.begin() + n * d + d}));
            const Var logits = g2.constant(Tensor::from({3}, {p.begin() + n * d + d, p.end()}));
            return g2.value(build(g2, cand, v, logits)).at(0);
        };
        std::vector<double> point(cand0.values().begin(), cand0.values().end());
        point.insert(point.end(), v0.values().begin(), v0.values().end());
        point.insert(point.end(), logits0.values().begin(), logits0.values().end());

        Graph g2;
        const Var cand = g2.param(cand0);
        const Var v = g2.param(v0);
        const Var logits = g2.param(logits0);
        g2.backward(build(g2, cand, v, logits));
        std::vector<double> analytic(g2.grad(cand).values().begin(), g2.grad(cand).values().end());
        analytic.insert(analytic.end(), g2.grad(v).values().begin(), g2.grad(v).values().end());
        analytic.insert(analytic.end(), g2.grad(logits).values().begin(),
                        g2.grad(logits).values().end());
        const auto r = finite_diff_check(fn, point, analytic, 1e-5);
        CHECK(r.max_rel_err < 1e-4);
    }
}

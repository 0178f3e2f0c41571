#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "secvit/attention.hpp"
#include "secvit/gradcheck.hpp"
#include "secvit/random.hpp"
#include "support/oracles.hpp"

using namespace secvit;

namespace {

template <typename T>
AttentionParams<T> make_params(std::uint64_t seed, std::size_t d, std::size_t heads) {
    Rng rng(seed);
    return init_attention<T>(rng, d, heads);
}

// projections on plain tensors, for oracle-side computations
Tensor<double> project(const Tensor<double>& x, const LinearParams<double>& p) {
    return linear(x, p.weight, p.has_bias ? &p.bias : nullptr);
}

}  // namespace

TEST_CASE("one cluster reproduces full attention (f64)") {
    Rng rng(201);
    for (int rep = 0; rep < 5; ++rep) {
        std::size_t L = 4 + rng.index(60);
        std::size_t heads = 1 + rng.index(4);
        std::size_t d = heads * (2 + rng.index(6));
        auto p = make_params<double>(300 + rep, d, heads);
        Tensor<double> x = rng.tensor_uniform<double>({L, d}, -2, 2);
        Tensor<double> a = cluster_attention_forward(x, p, 1);
        Tensor<double> b = full_attention_forward(x, p);
        REQUIRE(max_abs_diff(a, b) < 1e-10);
    }
}

TEST_CASE("one cluster reproduces full attention (f32)") {
    Rng rng(202);
    auto p = make_params<float>(301, 16, 4);
    Tensor<float> x = rng.tensor_uniform<float>({24, 16}, -2, 2);
    Tensor<float> a = cluster_attention_forward(x, p, 1);
    Tensor<float> b = full_attention_forward(x, p);
    REQUIRE(max_abs_diff(a, b) < 1e-5);
}

TEST_CASE("singleton clusters pass values straight through the output projection") {
    Rng rng(203);
    std::size_t L = 6, d = 4;
    auto p = make_params<double>(302, d, 2);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -1, 1);

    Tensor<double> out = cluster_attention_forward(x, p, L);  // one token per cluster
    Tensor<double> v = project(x, p.wv);
    Tensor<double> want = project(v, p.wo);
    REQUIRE(max_abs_diff(out, want) < 1e-12);
}

TEST_CASE("cluster attention matches the per-cluster dense oracle") {
    Rng rng(204);
    std::size_t L = 8, d = 4, heads = 2, M = 2;
    auto p = make_params<double>(303, d, heads);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -2, 2);

    ClusterAttentionTrace<double> trace;
    Tape<double> t;
    t.set_recording(false);
    Var<double> out = cluster_attention(t, t.constant(x), lift(t, p), M, nullptr, &trace);

    Tensor<double> q = project(x, p.wq);
    Tensor<double> k = project(x, p.wk);
    Tensor<double> v = project(x, p.wv);
    std::size_t N = trace.plan.cluster_size;

    Tensor<double> pre(Shape{L, d});
    for (std::size_t m = 0; m < M; ++m) {
        std::vector<std::uint32_t> rows(
            trace.plan.idx.begin() + m * N,
            trace.plan.idx.begin() + m * N + trace.plan.cluster_valid(m));
        Tensor<double> ym = oracle::subset_attention(q, k, v, rows, heads);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) pre.at(rows[r], j) = ym.at(r, j);
    }
    Tensor<double> want = project(pre, p.wo);
    REQUIRE(max_abs_diff(t.value(out), want) < 1e-10);
    REQUIRE(max_abs_diff(t.value(trace.restored), pre) < 1e-10);
}

TEST_CASE("padded clusters mask the dummies exactly") {
    Rng rng(205);
    std::size_t L = 10, d = 6, heads = 2, M = 4;  // pads 2 dummies, N = 3
    auto p = make_params<double>(304, d, heads);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -2, 2);

    ClusterAttentionTrace<double> trace;
    Tape<double> t;
    t.set_recording(false);
    Var<double> out = cluster_attention(t, t.constant(x), lift(t, p), M, nullptr, &trace);
    REQUIRE(trace.plan.padded == 2);

    // masked attention over a padded cluster must equal dense attention over
    // just its real members
    Tensor<double> q = project(x, p.wq);
    Tensor<double> k = project(x, p.wk);
    Tensor<double> v = project(x, p.wv);
    std::size_t N = trace.plan.cluster_size;
    Tensor<double> pre(Shape{L, d});
    for (std::size_t m = 0; m < M; ++m) {
        std::size_t valid = trace.plan.cluster_valid(m);
        std::vector<std::uint32_t> rows(trace.plan.idx.begin() + m * N,
                                        trace.plan.idx.begin() + m * N + valid);
        Tensor<double> ym = oracle::subset_attention(q, k, v, rows, heads);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) pre.at(rows[r], j) = ym.at(r, j);
    }
    Tensor<double> want = project(pre, p.wo);
    REQUIRE(max_abs_diff(t.value(out), want) < 1e-10);
}

TEST_CASE("attention is strictly intra-cluster") {
    Rng rng(206);
    std::size_t L = 12, d = 8, heads = 2, M = 3;
    auto p = make_params<double>(305, d, heads);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -2, 2);

    Tape<double> t1;
    t1.set_recording(false);
    ClusterAttentionTrace<double> base;
    cluster_attention(t1, t1.constant(x), lift(t1, p), M, nullptr, &base);

    std::size_t target = 1;
    Tensor<double> zeroed = x;
    for (std::size_t i = 0; i < L; ++i)
        if (base.plan.cluster_of(i) != target)
            for (std::size_t j = 0; j < d; ++j) zeroed.at(i, j) = 0.0;

    Tape<double> t2;
    t2.set_recording(false);
    ClusterAttentionTrace<double> mod;
    cluster_attention(t2, t2.constant(zeroed), lift(t2, p), M, &base.plan, &mod);

    // pre-projection outputs of the target cluster are bitwise unchanged
    const Tensor<double>& pre1 = t1.value(base.restored);
    const Tensor<double>& pre2 = t2.value(mod.restored);
    for (std::size_t i = 0; i < L; ++i)
        if (base.plan.cluster_of(i) == target)
            for (std::size_t j = 0; j < d; ++j) REQUIRE(pre1.at(i, j) == pre2.at(i, j));
}

TEST_CASE("full attention basics") {
    Rng rng(207);
    std::size_t d = 6;
    auto p = make_params<double>(306, d, 3);

    // single token: output is W_O applied to its value row
    Tensor<double> one = rng.tensor_uniform<double>({1, d}, -2, 2);
    Tensor<double> got = full_attention_forward(one, p);
    Tensor<double> want = project(project(one, p.wv), p.wo);
    REQUIRE(max_abs_diff(got, want) < 1e-12);

    // identical tokens give identical output rows
    Tensor<double> rowvals = rng.tensor_uniform<double>({1, d}, -2, 2);
    Tensor<double> uniform(Shape{5, d});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < d; ++j) uniform.at(i, j) = rowvals[j];
    Tensor<double> u = full_attention_forward(uniform, p);
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 0; j < d; ++j) REQUIRE(u.at(i, j) == u.at(0, j));
}

TEST_CASE("full attention matches the naive loop oracle") {
    Rng rng(208);
    std::size_t L = 7, d = 6, heads = 2;
    auto p = make_params<double>(307, d, heads);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -2, 2);

    Tensor<double> q = project(x, p.wq);
    Tensor<double> k = project(x, p.wk);
    Tensor<double> v = project(x, p.wv);
    std::vector<std::uint32_t> all(L);
    for (std::uint32_t i = 0; i < L; ++i) all[i] = i;
    Tensor<double> want = project(oracle::subset_attention(q, k, v, all, heads), p.wo);

    REQUIRE(max_abs_diff(full_attention_forward(x, p), want) < 1e-12);
}

TEST_CASE("connector output counts and row-stochastic weights") {
    Rng rng(209);
    std::size_t L = 576, d = 16, heads = 4;
    auto p = make_params<double>(308, d, heads);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -1, 1);

    for (std::size_t G : {std::size_t(288), std::size_t(144)}) {
        Tape<double> t;
        t.set_recording(false);
        ConnectorTrace<double> trace;
        Var<double> out =
            connector_compress(t, t.constant(x), lift(t, p), ConnectorConfig{G, true}, &trace);
        REQUIRE(t.value(out).dim(0) == G);
        REQUIRE(t.value(out).dim(1) == d);

        const Tensor<double>& w = t.value(trace.weights);
        std::size_t S = L / G;
        for (std::size_t b = 0; b < G * heads; ++b) {
            double sum = 0;
            for (std::size_t s = 0; s < S; ++s) sum += w[b * S + s];
            REQUIRE(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("connector on identical tokens is a projected value row") {
    Rng rng(210);
    std::size_t d = 8;
    auto p = make_params<double>(309, d, 2);
    Tensor<double> row = rng.tensor_uniform<double>({1, d}, -1, 1);
    Tensor<double> x(Shape{6, d});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < d; ++j) x.at(i, j) = row[j];

    Tensor<double> out = connector_forward(x, p, ConnectorConfig{3, true});
    Tensor<double> want = project(project(row, p.wv), p.wo);
    for (std::size_t g = 0; g < 3; ++g)
        for (std::size_t j = 0; j < d; ++j)
            REQUIRE(std::abs(out.at(g, j) - want.at(0, j)) < 1e-10);
}

TEST_CASE("connector with singleton groups equals per-token attention up to order") {
    Rng rng(211);
    std::size_t L = 6, d = 4;
    auto p = make_params<double>(310, d, 2);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -2, 2);

    Tensor<double> conn = connector_forward(x, p, ConnectorConfig{L, true});
    Tensor<double> clus = cluster_attention_forward(x, p, L);

    // connector row n is the token at sorted rank n
    Tensor<double> k = project(x, p.wk);
    auto [sim, idx] = similarity_rank(k, compute_center(k));
    for (std::size_t n = 0; n < L; ++n)
        for (std::size_t j = 0; j < d; ++j)
            REQUIRE(std::abs(conn.at(n, j) - clus.at(idx[n], j)) < 1e-10);
}

TEST_CASE("interleaved and sequential connectors differ on generic tokens") {
    Rng rng(212);
    std::size_t L = 8, d = 4;
    auto p = make_params<double>(311, d, 1);
    Tensor<double> x = rng.tensor_uniform<double>({L, d}, -2, 2);

    Tensor<double> il = connector_forward(x, p, ConnectorConfig{4, true});
    Tensor<double> sq = connector_forward(x, p, ConnectorConfig{4, false});
    REQUIRE(il.dim(0) == 4);
    REQUIRE(sq.dim(0) == 4);
    REQUIRE(max_abs_diff(il, sq) > 1e-6);  // different group members, different outputs

    Tape<double> t;
    Var<double> xv = t.constant(x);
    REQUIRE_THROWS_AS(connector_compress(t, xv, lift(t, p), ConnectorConfig{3, true}),
                      std::invalid_argument);
}

TEST_CASE("gradcheck through cluster attention incl. padding") {
    Rng rng(213);
    std::size_t L = 9, d = 4, heads = 2, M = 2;  // pads one dummy token
    auto p = make_params<double>(312, d, heads);
    Tensor<double> x0 = rng.tensor_uniform<double>({L, d}, -2, 2);

    {
        // plan must not flip under the finite-difference probes
        Tensor<double> k = project(x0, p.wk);
        auto [sim, idx] = similarity_rank(k, compute_center(k));
        std::vector<double> sorted;
        for (auto i : idx) sorted.push_back(sim[i]);
        for (std::size_t r = 0; r + 1 < sorted.size(); ++r)
            REQUIRE(sorted[r] - sorted[r + 1] > 1e-3);
    }

    auto rx = gradcheck("cluster_attention x", x0, [&](Tape<double>& t, Var<double> v) {
        Rng wr(1);
        Var<double> w = t.constant(wr.tensor_uniform<double>({L, d}, -1, 1));
        return sum_all(mul(cluster_attention(t, v, lift(t, p), M), w));
    });
    CAPTURE(rx.max_err);
    REQUIRE(rx.pass);

    // parameter gradient via a lifted copy
    auto rw = gradcheck("cluster_attention wq", p.wq.weight, [&](Tape<double>& t, Var<double> v) {
        AttentionVars<double> av = lift(t, p);
        av.wq.weight = v;
        Rng wr(2);
        Var<double> w = t.constant(wr.tensor_uniform<double>({L, d}, -1, 1));
        return sum_all(mul(cluster_attention(t, t.constant(x0), av, M), w));
    });
    CAPTURE(rw.max_err);
    REQUIRE(rw.pass);
}

TEST_CASE("gradcheck through the connector") {
    Rng rng(214);
    std::size_t L = 6, d = 4, heads = 2;
    auto p = make_params<double>(313, d, heads);
    Tensor<double> x0 = rng.tensor_uniform<double>({L, d}, -2, 2);

    auto r = gradcheck("connector x", x0, [&](Tape<double>& t, Var<double> v) {
        Rng wr(3);
        Var<double> w = t.constant(wr.tensor_uniform<double>({3, d}, -1, 1));
        return sum_all(mul(connector_compress(t, v, lift(t, p), ConnectorConfig{3, true}), w));
    });
    CAPTURE(r.max_err);
    REQUIRE(r.pass);
}

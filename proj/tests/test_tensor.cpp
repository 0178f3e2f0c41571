#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "secvit/kernels.hpp"
#include "secvit/random.hpp"
#include "secvit/tensor.hpp"
#include "support/oracles.hpp"

using namespace secvit;

TEST_CASE("tensor shape bookkeeping") {
    Tensor<double> t(Shape{2, 3});
    REQUIRE(t.size() == 6);
    REQUIRE(t.rank() == 2);
    REQUIRE_THROWS_AS(Tensor<double>(Shape{2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(t.reshaped(Shape{4}), std::invalid_argument);

    Tensor<double> scalar(Shape{});
    REQUIRE(scalar.size() == 1);

    Tensor<double> empty(Shape{0, 4});
    REQUIRE(empty.size() == 0);
}

TEST_CASE("finite guard surfaces NaN") {
    Tensor<double> t(Shape{2}, {1.0, std::nan("")});
    REQUIRE(!all_finite(t));
    REQUIRE_THROWS_AS(ensure_finite(t, "test"), std::runtime_error);
}

TEST_CASE("matmul identity and small cases") {
    Tensor<double> eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor<double> a(Shape{2, 2}, {3, 4, 5, 6});
    Tensor<double> prod = matmul(eye, a);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(prod[i] == a[i]);  // exact

    Tensor<double> row(Shape{1, 2}, {1, 2});
    Tensor<double> col(Shape{2, 1}, {3, 4});
    REQUIRE(matmul(row, col)[0] == 11.0);

    REQUIRE_THROWS_AS(matmul(row, row), std::invalid_argument);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(7);
    Tensor<double> a = rng.tensor_uniform<double>({5, 7}, -2, 2);
    Tensor<double> b = rng.tensor_uniform<double>({7, 3}, -2, 2);
    Tensor<double> got = matmul(a, b);
    Tensor<double> want = oracle::matmul2d(a, b);
    REQUIRE(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("matmul batched vs per-slice oracle") {
    Rng rng(11);
    Tensor<double> a = rng.tensor_uniform<double>({3, 4, 5}, -1, 1);
    Tensor<double> b = rng.tensor_uniform<double>({3, 5, 2}, -1, 1);
    Tensor<double> got = matmul(a, b);
    for (std::size_t s = 0; s < 3; ++s) {
        Tensor<double> as(Shape{4, 5});
        Tensor<double> bs(Shape{5, 2});
        std::copy(a.data() + s * 20, a.data() + (s + 1) * 20, as.data());
        std::copy(b.data() + s * 10, b.data() + (s + 1) * 10, bs.data());
        Tensor<double> want = oracle::matmul2d(as, bs);
        for (std::size_t i = 0; i < want.size(); ++i)
            REQUIRE(std::abs(got[s * 8 + i] - want[i]) < 1e-12);
    }

    // rank-2 operand broadcast across the batch
    Tensor<double> shared = rng.tensor_uniform<double>({5, 2}, -1, 1);
    Tensor<double> got2 = matmul(a, shared);
    for (std::size_t s = 0; s < 3; ++s) {
        Tensor<double> as(Shape{4, 5});
        std::copy(a.data() + s * 20, a.data() + (s + 1) * 20, as.data());
        Tensor<double> want = oracle::matmul2d(as, shared);
        for (std::size_t i = 0; i < want.size(); ++i)
            REQUIRE(std::abs(got2[s * 8 + i] - want[i]) < 1e-12);
    }
}

TEST_CASE("matmul is bitwise independent of thread count") {
    Rng rng(23);
    Tensor<double> a = rng.tensor_uniform<double>({4, 33, 17}, -2, 2);
    Tensor<double> b = rng.tensor_uniform<double>({4, 17, 29}, -2, 2);
    Tensor<double> one = matmul(a, b);
    set_threads(4);
    Tensor<double> four = matmul(a, b);
    set_threads(1);
    REQUIRE(max_abs_diff(one, four) == 0.0);
}

TEST_CASE("softmax rows") {
    Tensor<double> flat(Shape{3}, {0, 0, 0});
    Tensor<double> s = softmax_lastdim(flat);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(std::abs(s[i] - 1.0 / 3) < 1e-15);

    Tensor<double> big(Shape{2}, {1000, 0});
    Tensor<double> sb = softmax_lastdim(big);
    REQUIRE(std::abs(sb[0] - 1.0) < 1e-12);
    REQUIRE(sb[1] < 1e-12);

    Rng rng(3);
    Tensor<double> x = rng.tensor_uniform<double>({4, 6}, -3, 3);
    Tensor<double> y = softmax_lastdim(x);
    for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0;
        for (std::size_t j = 0; j < 6; ++j) sum += y.at(r, j);
        REQUIRE(std::abs(sum - 1.0) < 1e-12);
    }

    // shift invariance
    Tensor<double> shifted = x;
    for (auto& v : shifted.vec()) v += 17.5;
    Tensor<double> ys = softmax_lastdim(shifted);
    REQUIRE(max_abs_diff(y, ys) < 1e-12);

    // f32 rows sum to 1 within 1e-6
    Rng rng2(4);
    Tensor<float> xf = rng2.tensor_uniform<float>({4, 6}, -3, 3);
    Tensor<float> yf = softmax_lastdim(xf);
    for (std::size_t r = 0; r < 4; ++r) {
        float sum = 0;
        for (std::size_t j = 0; j < 6; ++j) sum += yf.at(r, j);
        REQUIRE(std::abs(sum - 1.0f) < 1e-6f);
    }
}

TEST_CASE("masked softmax zeroes the tail") {
    Tensor<double> x(Shape{1, 2, 4}, {1, 2, 3, 4, 4, 3, 2, 1});
    auto y = masked_softmax_lastdim(x, {2});
    for (std::size_t i = 0; i < 2; ++i) {
        REQUIRE(y[i * 4 + 2] == 0.0);
        REQUIRE(y[i * 4 + 3] == 0.0);
        REQUIRE(std::abs(y[i * 4] + y[i * 4 + 1] - 1.0) < 1e-12);
    }
    auto z = masked_softmax_lastdim(x, {0});
    for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(z[i] == 0.0);
}

TEST_CASE("mean_pool_tokens") {
    Tensor<double> x(Shape{2, 2}, {1, 3, 3, 1});
    auto m = mean_pool_tokens(x);
    REQUIRE(m[0] == 2.0);
    REQUIRE(m[1] == 2.0);

    Tensor<double> single(Shape{1, 2}, {5, 7});
    auto ms = mean_pool_tokens(single);
    REQUIRE(ms[0] == 5.0);
    REQUIRE(ms[1] == 7.0);

    Rng rng(9);
    Tensor<double> big = rng.tensor_uniform<double>({16, 4}, -2, 2);
    auto got = mean_pool_tokens(big);
    auto want = oracle::column_means(big);
    for (std::size_t j = 0; j < 4; ++j) REQUIRE(std::abs(got[j] - want[j]) < 1e-12);

    REQUIRE_THROWS_AS(mean_pool_tokens(Tensor<double>(Shape{0, 4})), std::invalid_argument);
}

TEST_CASE("gather_rows permutes and validates") {
    Tensor<double> x(Shape{3, 2}, {1, 1, 2, 2, 3, 3});
    auto y = gather_rows(x, {2, 0, 1});
    REQUIRE(y.at(0, 0) == 3.0);
    REQUIRE(y.at(1, 0) == 1.0);
    REQUIRE(y.at(2, 0) == 2.0);

    auto id = gather_rows(x, {0, 1, 2});
    REQUIRE(max_abs_diff(id, x) == 0.0);

    // gather then inverse gather is exact identity
    auto back = gather_rows(y, {1, 2, 0});
    REQUIRE(max_abs_diff(back, x) == 0.0);

    REQUIRE_THROWS_AS(gather_rows(x, {0, 1, 3}), std::invalid_argument);
    REQUIRE_THROWS_AS(gather_rows(x, {0, 1, 1}), std::invalid_argument);
    REQUIRE_THROWS_AS(gather_rows(x, {0, 1}), std::invalid_argument);
}

TEST_CASE("layer_norm") {
    Tensor<double> gamma = Tensor<double>::full({4}, 1.0);
    Tensor<double> beta(Shape{4});

    Tensor<double> constant = Tensor<double>::full({1, 4}, 3.0);
    auto yc = layer_norm(constant, gamma, beta, 1e-6);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(std::abs(yc[i]) < 1e-9);

    Tensor<double> pm(Shape{1, 2}, {1, -1});
    Tensor<double> g2 = Tensor<double>::full({2}, 1.0);
    Tensor<double> b2(Shape{2});
    auto yp = layer_norm(pm, g2, b2, 1e-12);
    REQUIRE(std::abs(yp[0] - 1.0) < 1e-6);
    REQUIRE(std::abs(yp[1] + 1.0) < 1e-6);

    Rng rng(5);
    Tensor<double> x = rng.tensor_uniform<double>({3, 8}, -2, 2);
    Tensor<double> g8 = Tensor<double>::full({8}, 1.0);
    Tensor<double> b8(Shape{8});
    auto y = layer_norm(x, g8, b8, 1e-6);
    for (std::size_t r = 0; r < 3; ++r) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < 8; ++j) mu += y.at(r, j);
        mu /= 8;
        for (std::size_t j = 0; j < 8; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu);
        var /= 8;
        REQUIRE(std::abs(mu) < 1e-6);
        REQUIRE(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("dwconv2d_3x3") {
    // delta kernel reproduces the input
    Rng rng(13);
    Tensor<double> x = rng.tensor_uniform<double>({2, 4, 4}, -1, 1);
    Tensor<double> delta(Shape{2, 3, 3});
    delta.at(0, 1, 1) = 1.0;
    delta.at(1, 1, 1) = 1.0;
    REQUIRE(max_abs_diff(dwconv2d_3x3(x, delta), x) == 0.0);

    // all-ones input and kernel: centre sees 9 taps, corners see 4
    Tensor<double> ones = Tensor<double>::full({1, 3, 3}, 1.0);
    Tensor<double> kone = Tensor<double>::full({1, 3, 3}, 1.0);
    auto y = dwconv2d_3x3(ones, kone);
    REQUIRE(y.at(0, 1, 1) == 9.0);
    REQUIRE(y.at(0, 0, 0) == 4.0);
    REQUIRE(y.at(0, 0, 2) == 4.0);
    REQUIRE(y.at(0, 2, 0) == 4.0);

    Tensor<double> xr = rng.tensor_uniform<double>({2, 5, 5}, -2, 2);
    Tensor<double> kr = rng.tensor_uniform<double>({2, 3, 3}, -1, 1);
    REQUIRE(max_abs_diff(dwconv2d_3x3(xr, kr), oracle::dwconv3x3(xr, kr)) < 1e-12);
}

TEST_CASE("conv2d_stride") {
    Rng rng(17);
    // stride 2 with a delta kernel subsamples the input
    Tensor<double> x = rng.tensor_uniform<double>({1, 4, 4}, -1, 1);
    Tensor<double> w(Shape{1, 1, 3, 3});
    w[4] = 1.0;  // centre tap
    auto sub = conv2d_stride<double>(x, w, nullptr, 2);
    REQUIRE(sub.dim(1) == 2);
    REQUIRE(sub.at(0, 0, 0) == x.at(0, 0, 0));
    REQUIRE(sub.at(0, 0, 1) == x.at(0, 0, 2));
    REQUIRE(sub.at(0, 1, 1) == x.at(0, 2, 2));

    auto same = conv2d_stride<double>(x, w, nullptr, 1);
    REQUIRE(max_abs_diff(same, x) == 0.0);

    Tensor<double> xr = rng.tensor_uniform<double>({3, 5, 5}, -2, 2);
    Tensor<double> wr = rng.tensor_uniform<double>({4, 3, 3, 3}, -1, 1);
    std::vector<double> bias = {0.1, -0.2, 0.3, 0.4};
    Tensor<double> bt(Shape{4}, std::vector<double>(bias));
    for (int stride : {1, 2}) {
        auto got = conv2d_stride(xr, wr, &bt, stride);
        auto want = oracle::conv3x3(xr, wr, bias, stride);
        REQUIRE(max_abs_diff(got, want) < 1e-12);
    }

    REQUIRE_THROWS_AS(conv2d_stride<double>(xr, wr, nullptr, 3), std::invalid_argument);
}

TEST_CASE("transpose and swap_middle_axes round-trip") {
    Rng rng(19);
    Tensor<double> x = rng.tensor_uniform<double>({2, 3, 5}, -1, 1);
    REQUIRE(max_abs_diff(transpose_last2(transpose_last2(x)), x) == 0.0);

    Tensor<double> y = rng.tensor_uniform<double>({2, 3, 4, 5}, -1, 1);
    REQUIRE(max_abs_diff(swap_middle_axes(swap_middle_axes(y)), y) == 0.0);
}

// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "reportrl/math.hpp"
#include "reportrl/parallel.hpp"
#include "reportrl/rng.hpp"
#include "reportrl/util.hpp"

using namespace reportrl;

TEST_CASE("rng reproduces the same sequence for the same seed") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng stream derivation ignores draws made so far") {
    Rng a(7), b(7);
    for (int i = 0; i < 100; ++i) (void)b.next_u64();
    CHECK(a.derive("x").next_u64() == b.derive("x").next_u64());
    CHECK(a.derive(3).next_u64() == b.derive(3).next_u64());
}

TEST_CASE("derived streams differ across labels and indices") {
    Rng r(7);
    CHECK(r.derive("a").next_u64() != r.derive("b").next_u64());
    CHECK(r.derive(0).next_u64() != r.derive(1).next_u64());
    CHECK(Rng::derive_seed(7, "a") != Rng::derive_seed(7, "b"));
    CHECK(Rng::derive_seed(7, "a") != Rng::derive_seed(8, "a"));
}

TEST_CASE("uniform stays in [0,1) and uniform_pos in (0,1]") {
    Rng r(1);
    for (int i = 0; i < 20000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        double v = r.uniform_pos();
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("normal draws match a standard normal in mean and std") {
    Rng r(99);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        s += x;
        s2 += x * x;
    }
    double m = s / n;
    double var = s2 / n - m * m;
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.01);
}

TEST_CASE("uniform_index covers [0,n) roughly uniformly") {
    Rng r(5);
    std::vector<int> counts(10, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[r.uniform_index(10)];
    for (int c : counts) {
        CHECK(c > 9000);
        CHECK(c < 11000);
    }
}

TEST_CASE("bernoulli tracks its probability") {
    Rng r(17);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += r.bernoulli(0.3) ? 1 : 0;
    CHECK(std::abs(hits / static_cast<double>(n) - 0.3) < 0.01);
}

TEST_CASE("parallel_for gives identical results for any worker count") {
    const std::size_t n = 977;
    auto run = [&](int workers) {
        std::vector<double> out(n);
        parallel_for(n, workers, [&](std::size_t i) {
            Rng rng = Rng(123).derive(static_cast<std::uint64_t>(i));
            out[i] = rng.normal() + rng.uniform();
        });
        return out;
    };
    auto base = run(1);
    CHECK(run(3) == base);
    CHECK(run(8) == base);
}

TEST_CASE("parallel_for propagates the first exception") {
    CHECK_THROWS_AS(parallel_for(100, 4,
                                 [&](std::size_t i) {
                                     if (i == 31) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}

TEST_CASE("matvec and its transpose-accumulate agree with hand results") {
    // M = [[1,2],[3,4],[5,6]], x = [1,-1]
    Vec m{1, 2, 3, 4, 5, 6}, x{1, -1}, out(3);
    matvec(m.data(), 3, 2, x.data(), out.data());
    CHECK(out == Vec{-1, -1, -1});

    Vec y{1, 0, 2}, acc(2, 0.0); // M^T y = [1+10, 2+12]
    matvec_t_acc(m.data(), 3, 2, y.data(), acc.data());
    CHECK(acc == Vec{11, 14});
}

TEST_CASE("outer_acc accumulates a b^T") {
    Vec m(6, 1.0), a{2, 0, -1}, b{1, 3};
    outer_acc(m.data(), 3, 2, a.data(), b.data());
    CHECK(m == Vec{3, 7, 1, 1, 0, -2});
}

TEST_CASE("logsumexp is shift-stable and matches brute force") {
    Vec v{1000.0, 1000.0 + std::log(2.0)};
    CHECK(logsumexp(v.data(), 2) == doctest::Approx(1000.0 + std::log(3.0)).epsilon(1e-12));
    Vec w{-2.0, 0.5, 3.0};
    double brute = std::log(std::exp(-2.0) + std::exp(0.5) + std::exp(3.0));
    CHECK(logsumexp(w.data(), 3) == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("population std of one 1 among eight matches the known value") {
    // mean 1/8, var = 7/64, std = sqrt(7)/8
    Vec v{1, 0, 0, 0, 0, 0, 0, 0};
    CHECK(pop_std(v) == doctest::Approx(std::sqrt(7.0) / 8.0).epsilon(1e-12));
    CHECK(pop_std(v) == doctest::Approx(0.3307).epsilon(1e-4));
    CHECK(mean(v) == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("pop_std of a five-five binary split is exactly one half") {
    Vec v{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    CHECK(pop_std(v) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("flatten and unflatten round-trip a parameter set") {
    Vec a{1, 2, 3}, b{4, 5};
    std::vector<ParamView> views{{"a", &a}, {"b", &b}};
    Vec flat = flatten(views);
    CHECK(flat == Vec{1, 2, 3, 4, 5});
    Vec mod{9, 8, 7, 6, 5};
    unflatten(mod, views);
    CHECK(a == Vec{9, 8, 7});
    CHECK(b == Vec{6, 5});
}

TEST_CASE("adam first step has magnitude close to lr and minimizes a quadratic") {
    Vec p{5.0};
    Vec g{2.0 * 5.0};
    std::vector<ParamView> params{{"p", &p}}, grads{{"g", &g}};
    Adam opt(0.1);
    opt.step(params, grads);
    // bias-corrected first step: lr * g / (|g| + eps) ~= lr * sign(g)
    CHECK(p[0] == doctest::Approx(5.0 - 0.1).epsilon(1e-6));

    for (int i = 0; i < 500; ++i) {
        g[0] = 2.0 * p[0];
        opt.step(params, grads);
    }
    CHECK(std::abs(p[0]) < 1e-2);
}

TEST_CASE("fnv1a64 matches published reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("hash_hex renders 16 lowercase hex digits") {
    CHECK(hash_hex(0) == "0000000000000000");
    CHECK(hash_hex(0xdeadbeefULL) == "00000000deadbeef");
    CHECK(hash_hex(0xffffffffffffffffULL) == "ffffffffffffffff");
}

TEST_CASE("file helpers round-trip and fail loudly") {
    const std::string path = "/tmp/reportrl_test_util.txt";
    write_text_file(path, "hello\nworld\n");
    CHECK(read_text_file(path) == "hello\nworld\n");
    CHECK(file_exists(path));
    CHECK(file_content_hash(path) == fnv1a64("hello\nworld\n"));
    CHECK_FALSE(file_exists("/tmp/reportrl_definitely_missing_404"));
    CHECK_THROWS_WITH_AS(read_text_file("/tmp/reportrl_definitely_missing_404"),
                         doctest::Contains("/tmp/reportrl_definitely_missing_404"),
                         std::runtime_error);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "p2sc/losses.hpp"
#include "p2sc/rng.hpp"
#include "support/oracles.hpp"

using namespace p2sc;

namespace {

Tensor rand_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = false) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    std::vector<double> vals(static_cast<size_t>(n));
    for (double& v : vals) v = rng.uniform(lo, hi);
    Tensor t = Tensor::from_data(shape, std::move(vals));
    t.set_requires_grad(requires_grad);
    return t;
}

std::vector<oracle::P3> to_points(const Tensor& t) {
    std::vector<oracle::P3> out;
    for (int64_t i = 0; i < t.dim(0); ++i) {
        out.push_back({t.at({i, 0}), t.at({i, 1}), t.at({i, 2})});
    }
    return out;
}

}  // namespace

TEST_CASE("margin loss closed forms") {
    LossConfig cfg;
    SUBCASE("confident correct prediction costs nothing") {
        Tensor lengths = Tensor::from_data({2}, {0.95, 0.05});
        CHECK(margin_loss(lengths, 0, cfg).item() == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("all-zero lengths cost (m+)^2 for the target only") {
        Tensor lengths = Tensor::zeros({3});
        CHECK(margin_loss(lengths, 1, cfg).item() == doctest::Approx(0.81).epsilon(1e-12));
    }
    SUBCASE("two half-confident capsules") {
        // target: (0.9-0.5)^2 = 0.16; other: 0.5*(0.5-0.1)^2 = 0.08
        Tensor lengths = Tensor::from_data({2}, {0.5, 0.5});
        CHECK(margin_loss(lengths, 0, cfg).item() == doctest::Approx(0.24).epsilon(1e-12));
    }
    SUBCASE("label bounds are enforced") {
        Tensor lengths = Tensor::from_data({2}, {0.5, 0.5});
        CHECK_THROWS(margin_loss(lengths, -1, cfg));
        CHECK_THROWS(margin_loss(lengths, 2, cfg));
    }
}

TEST_CASE("margin loss is nonnegative and matches the oracle") {
    RngStream rng(211);
    LossConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor lengths = rand_tensor(rng, {5}, 0.0, 1.0);
        int label = static_cast<int>(rng.uniform_int(5));
        double got = margin_loss(lengths, label, cfg).item();
        CHECK(got >= 0.0);
        oracle::Vec l(lengths.values().begin(), lengths.values().end());
        CHECK(got == doctest::Approx(oracle::margin(l, static_cast<size_t>(label)))
                         .epsilon(1e-12));
    }
}

TEST_CASE("margin loss gradient agrees with finite differences") {
    RngStream rng(223);
    LossConfig cfg;
    Tensor x = rand_tensor(rng, {4}, 0.05, 0.95, true);
    double err = grad_check([&](const Tensor& t) { return margin_loss(t, 2, cfg); }, x);
    CHECK(err <= 1e-6);
}

TEST_CASE("chamfer closed forms") {
    SUBCASE("identical clouds have zero distance") {
        Tensor x = Tensor::from_data({3, 3}, {0, 0, 0, 1, 0, 0, 0, 1, 0});
        CHECK(chamfer(x, x).item() == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("two single points at unit separation cost 2") {
        // mean-of-minima in each direction is 1, total 2
        Tensor a = Tensor::from_data({1, 3}, {0, 0, 0});
        Tensor b = Tensor::from_data({1, 3}, {1, 0, 0});
        CHECK(chamfer(a, b).item() == doctest::Approx(2.0).epsilon(1e-14));
    }
    SUBCASE("asymmetric sizes average per side") {
        // a = {0, e_x}; b = {0}. a->b side: (0 + 1)/2; b->a side: 0
        Tensor a = Tensor::from_data({2, 3}, {0, 0, 0, 1, 0, 0});
        Tensor b = Tensor::from_data({1, 3}, {0, 0, 0});
        CHECK(chamfer(a, b).item() == doctest::Approx(0.5).epsilon(1e-14));
    }
}

TEST_CASE("chamfer is symmetric and permutation invariant") {
    RngStream rng(227);
    Tensor a = rand_tensor(rng, {6, 3});
    Tensor b = rand_tensor(rng, {4, 3});
    double ab = chamfer(a, b).item();
    double ba = chamfer(b, a).item();
    CHECK(ab == doctest::Approx(ba).epsilon(1e-14));

    std::vector<int64_t> perm = {5, 0, 3, 1, 4, 2};
    Tensor ap = ops::gather_rows(a, perm);
    CHECK(chamfer(ap, b).item() == doctest::Approx(ab).epsilon(1e-12));
}

TEST_CASE("chamfer matches the oracle on random clouds") {
    RngStream rng(229);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = rand_tensor(rng, {5, 3}, -2, 2);
        Tensor b = rand_tensor(rng, {7, 3}, -2, 2);
        double got = chamfer(a, b).item();
        double expect = oracle::chamfer(to_points(a), to_points(b));
        CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("chamfer gradient agrees with finite differences away from ties") {
    RngStream rng(233);
    Tensor target = rand_tensor(rng, {5, 3}, -1, 1);
    Tensor x = rand_tensor(rng, {4, 3}, -1, 1, true);
    double err = grad_check([&](const Tensor& t) { return chamfer(target, t); }, x);
    CHECK(err <= 1e-5);
}

TEST_CASE("chamfer of coincident points backpropagates finitely") {
    // the zero-distance branch must not divide by zero
    Tensor a = Tensor::from_data({1, 3}, {0.5, 0.5, 0.5});
    Tensor b = Tensor::from_data({1, 3}, {0.5, 0.5, 0.5}, /*requires_grad=*/true);
    Tensor d = chamfer(a, b);
    d.backward();
    REQUIRE(b.has_grad());
    for (double g : b.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("decoder configuration is validated") {
    ParamRegistry reg;
    RngStream rng(239);
    SUBCASE("exactly four widths") {
        CHECK_THROWS(ReconstructionDecoder(reg, "decoder", 16, {32, 64, 96}, rng));
        CHECK_THROWS(ReconstructionDecoder(reg, "decoder", 16, {32, 64, 96, 128, 192}, rng));
    }
    SUBCASE("last width must be a multiple of 3") {
        CHECK_THROWS(ReconstructionDecoder(reg, "decoder", 16, {32, 64, 96, 100}, rng));
    }
    SUBCASE("a valid decoder reports its point count") {
        ReconstructionDecoder dec(reg, "decoder", 16, {32, 64, 96, 48}, rng);
        CHECK(dec.points == 16);
    }
}

TEST_CASE("decoder shapes and determinism") {
    ParamRegistry reg;
    RngStream rng(241);
    ReconstructionDecoder dec(reg, "decoder", 8, {16, 32, 48, 24}, rng);

    RngStream data(242);
    Tensor caps = rand_tensor(data, {3, 8});
    Tensor out = dec.forward(caps, /*training=*/true);
    CHECK(out.shape() == Shape{3, 24});

    Tensor one = rand_tensor(data, {8});
    Tensor cloud_a = dec.reconstruct(one);
    Tensor cloud_b = dec.reconstruct(one);
    REQUIRE(cloud_a.shape() == Shape{8, 3});
    auto av = cloud_a.values();
    auto bv = cloud_b.values();
    for (size_t i = 0; i < av.size(); ++i) CHECK(av[i] == bv[i]);  // bitwise

    // [1, d] input is accepted too
    Tensor cloud_c = dec.reconstruct(rand_tensor(data, {1, 8}));
    CHECK(cloud_c.shape() == Shape{8, 3});
}

TEST_CASE("reconstruction loss backpropagates into the capsules") {
    ParamRegistry reg;
    RngStream rng(251);
    ReconstructionDecoder dec(reg, "decoder", 6, {8, 16, 24, 12}, rng);

    // batch of two so training-mode batchnorm has real statistics (a batch of
    // one would standardize every activation to its own mean and go constant)
    RngStream data(252);
    Tensor t0 = rand_tensor(data, {4, 3});
    Tensor t1 = rand_tensor(data, {4, 3});
    Tensor v = rand_tensor(data, {2, 6}, -0.5, 0.5, true);

    auto loss_of = [&]() {
        Tensor decoded = dec.forward(v, /*training=*/true);  // [2, 12]
        Tensor r0 = ops::reshape(ops::gather_rows(decoded, {0}), {4, 3});
        Tensor r1 = ops::reshape(ops::gather_rows(decoded, {1}), {4, 3});
        return ops::add(chamfer(t0, r0), chamfer(t1, r1));
    };

    Tensor loss = loss_of();
    loss.backward();
    REQUIRE(v.has_grad());

    std::vector<double> analytic(v.grad().begin(), v.grad().end());
    const double eps = 1e-5;
    auto& vals = v.mutable_values();
    bool any_nonzero = false;
    for (size_t k = 0; k < vals.size(); ++k) {
        const double keep = vals[k];
        NoGradGuard guard;
        vals[k] = keep + eps;
        double up = loss_of().item();
        vals[k] = keep - eps;
        double dn = loss_of().item();
        vals[k] = keep;
        const double fd = (up - dn) / (2 * eps);
        CHECK(std::abs(fd - analytic[k]) / std::max(1.0, std::abs(analytic[k])) <= 1e-4);
        any_nonzero |= analytic[k] != 0.0;
    }
    CHECK(any_nonzero);
}

TEST_CASE("total loss composes margin and reconstruction") {
    LossConfig cfg;
    Tensor margin = Tensor::scalar(0.24);
    Tensor rec = Tensor::scalar(2.0);
    CHECK(total_loss(margin, rec, cfg).item() == doctest::Approx(0.24 + 1e-4 * 2.0).epsilon(1e-15));

    cfg.alpha = 0.0;
    CHECK(total_loss(margin, rec, cfg).item() == doctest::Approx(0.24).epsilon(1e-15));
}

TEST_CASE("loss configuration is validated") {
    LossConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("margins ordered") {
        cfg.m_plus = 0.1;
        cfg.m_minus = 0.9;
        CHECK_THROWS(cfg.validate());
    }
    SUBCASE("margins in (0,1)") {
        cfg.m_plus = 1.5;
        CHECK_THROWS(cfg.validate());
    }
    SUBCASE("lambda nonnegative") {
        cfg.lambda = -0.1;
        CHECK_THROWS(cfg.validate());
    }
    SUBCASE("alpha nonnegative") {
        cfg.alpha = -1e-6;
        CHECK_THROWS(cfg.validate());
    }
}

#include <algorithm>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "naturalfinger/metrics.hpp"

using namespace nf;

namespace {

// Matching rates are k / q for q queries. On each interval ((k-1)/q, k/q) both
// curves are constant, so the area is a finite sum over integer counts.
double integer_aruc(const std::vector<int>& pos, const std::vector<int>& neg, int q) {
    double area = 0;
    for (int k = 1; k <= q; ++k) {
        const double r = static_cast<double>(std::count_if(pos.begin(), pos.end(), [&](int m) { return m >= k; })) /
                         static_cast<double>(pos.size());
        const double u = static_cast<double>(std::count_if(neg.begin(), neg.end(), [&](int m) { return m <= k - 1; })) /
                         static_cast<double>(neg.size());
        area += std::min(r, u) / q;
    }
    return area;
}

std::vector<double> as_rates(const std::vector<int>& v, int q) {
    std::vector<double> out;
    for (int m : v) out.push_back(static_cast<double>(m) / q);
    return out;
}

}  // namespace

TEST_CASE("matching rate counts agreements with the positive labels") {
    const auto r = matching_rate(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 0}, "m");
    CHECK(r.matching_rate == doctest::Approx(2.0 / 3.0));
    CHECK(r.n_queries == 3);
    CHECK(r.per_sample_hits == std::vector<unsigned char>{1, 1, 0});
    CHECK(r.model_id == "m");
    CHECK_THROWS_AS(matching_rate(std::vector<int>{1}, std::vector<int>{1, 2}), std::invalid_argument);
    CHECK(matching_rate_margin(0.9, 0.2) == doctest::Approx(0.7));
    CHECK(matching_rate_margin(0.1, 0.4) == doctest::Approx(-0.3));
    CHECK_THROWS_AS(matching_rate_margin(1.2, 0.0), std::invalid_argument);
}

// Midpoint rule on a fine grid; independent of the breakpoint bookkeeping.
static double grid_aruc(const std::vector<double>& pos, const std::vector<double>& neg, double step) {
    const int n = static_cast<int>(std::lround(1.0 / step));
    double area = 0;
    for (int i = 0; i < n; ++i) {
        const double t = (i + 0.5) * step;
        area += std::min(robustness_at(pos, t), uniqueness_at(neg, t)) * step;
    }
    return area;
}

TEST_CASE("aruc hand cases") {
    CHECK(aruc(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}).aruc == doctest::Approx(0.7).epsilon(1e-9));
    const auto r = aruc(std::vector<double>{0.8}, std::vector<double>{0.1});
    CHECK(r.aruc == doctest::Approx(0.7));
    REQUIRE(r.max_perfect_interval.has_value());
    CHECK(r.max_perfect_interval->first == doctest::Approx(0.1));
    CHECK(r.max_perfect_interval->second == doctest::Approx(0.8));

    CHECK(aruc(std::vector<double>{1.0, 1.0}, std::vector<double>{0.0}).aruc == doctest::Approx(1.0));
    const auto overlap = aruc(std::vector<double>{0.5}, std::vector<double>{0.5});
    CHECK(overlap.aruc == 0.0);
    CHECK_FALSE(overlap.max_perfect_interval.has_value());
    // (0.1, 0.6]: both curves 1; (0.6, 0.8]: robustness 1/2.
    CHECK(aruc(std::vector<double>{0.8, 0.6}, std::vector<double>{0.1}).aruc == doctest::Approx(0.6));

    CHECK_THROWS_AS(aruc(std::vector<double>{}, std::vector<double>{0.1}), std::invalid_argument);
    CHECK_THROWS_AS(aruc(std::vector<double>{0.5}, std::vector<double>{0.1}, 0.0), std::invalid_argument);
}

TEST_CASE("aruc matches an integer-count oracle on random instances") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int q = std::uniform_int_distribution<int>(1, 60)(rng);
        const int np = std::uniform_int_distribution<int>(1, 12)(rng);
        const int nn = std::uniform_int_distribution<int>(1, 12)(rng);
        std::uniform_int_distribution<int> m(0, q);
        std::vector<int> pos(static_cast<std::size_t>(np)), neg(static_cast<std::size_t>(nn));
        for (int& v : pos) v = m(rng);
        for (int& v : neg) v = m(rng);
        const double expected = integer_aruc(pos, neg, q);
        const auto got = aruc(as_rates(pos, q), as_rates(neg, q), 0.01);
        REQUIRE_MESSAGE(got.aruc == doctest::Approx(expected).epsilon(1e-12), "trial " << trial);
    }
}

TEST_CASE("aruc agrees with fine grid integration on random real-valued instances") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> pos(1 + trial % 9), neg(1 + trial % 7);
        for (auto& v : pos) v = u(rng);
        for (auto& v : neg) v = u(rng);
        CHECK(std::abs(aruc(pos, neg).aruc - grid_aruc(pos, neg, 1e-4)) < 1e-3);
    }
}

TEST_CASE("aruc curves are monotone, bounded and order invariant") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> pos(7), neg(9);
        for (auto& v : pos) v = u(rng);
        for (auto& v : neg) v = u(rng);
        const auto r = aruc(pos, neg, 1e-2);
        CHECK((r.aruc >= 0.0 && r.aruc <= 1.0));
        CHECK(r.thresholds.size() == r.robustness.size());
        CHECK(r.thresholds.front() == 0.0);
        CHECK(r.thresholds.back() == doctest::Approx(1.0));
        for (std::size_t i = 1; i < r.thresholds.size(); ++i) {
            CHECK(r.robustness[i] <= r.robustness[i - 1]);
            CHECK(r.uniqueness[i] >= r.uniqueness[i - 1]);
        }
        std::shuffle(pos.begin(), pos.end(), rng);
        std::shuffle(neg.begin(), neg.end(), rng);
        CHECK(aruc(pos, neg).aruc == doctest::Approx(r.aruc).epsilon(1e-12));
        CHECK(robustness_at(pos, 0.0) == 1.0);
        CHECK(uniqueness_at(neg, 0.0) == 0.0);
    }
}

TEST_CASE("verification: threshold boundary and transport failures") {
    QuerySet q;
    q.shape = {1, 2, 2};
    for (int i = 0; i < 4; ++i) {
        QuerySample s;
        s.pixels = {0, 64, 128, 255};
        s.y_positive = i % 2;
        s.y_adversarial = 1 - i % 2;
        q.samples.push_back(s);
    }
    const Predictor half = [](const Tensor& x) {
        CHECK(x.n() == 4);
        CHECK(x[3] == 1.0);
        return std::vector<int>{0, 1, 1, 0};
    };
    CHECK(verify(half, q, 0.5).verdict == Verdict::positive);
    CHECK(verify(half, q, 0.5000001).verdict == Verdict::negative);
    CHECK(verify(half, q, 0.5).match.matching_rate == 0.5);
    CHECK(to_string(Verdict::positive) == "positive");

    const Predictor down = [](const Tensor&) -> std::vector<int> { throw std::runtime_error("connection refused"); };
    CHECK_THROWS_WITH_AS(verify(down, q, 0.5), doctest::Contains("connection refused"), TransportError);
    const Predictor short_answer = [](const Tensor&) { return std::vector<int>{0}; };
    CHECK_THROWS_AS(verify(short_answer, q, 0.5), TransportError);
}

TEST_CASE("median of even and odd lists") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("mirror pairs and zoo evaluation on the tiny zoo") {
    const auto& dir = test::tiny_zoo_dir();
    const ZooManifest m = load_manifest(dir);
    const auto pairs = mirror_pairs(m);
    CHECK(pairs.size() == 10);
    for (const auto& p : pairs) {
        CHECK(p.positive_id.substr(0, 4) == "pos-");
        CHECK(p.mirror_id == "mneg-" + p.positive_id.substr(4));
    }

    ZooManifest broken = m;
    std::erase_if(broken.records, [](const ModelRecord& r) { return r.model_id == "mneg-prune-0.5"; });
    CHECK_THROWS_AS(mirror_pairs(broken), std::invalid_argument);

    QuerySet q;
    q.shape = {1, 16, 16};
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> px(0, 255), cls(0, 9);
    for (int i = 0; i < 12; ++i) {
        QuerySample s;
        for (int k = 0; k < 256; ++k) s.pixels.push_back(static_cast<std::uint8_t>(px(rng)));
        s.y_positive = cls(rng);
        q.samples.push_back(s);
    }
    const EvalReport r = evaluate_zoo(m, dir, q);
    CHECK(r.models.size() == 22);
    CHECK(r.errors.empty());
    CHECK(r.margins.size() == 10);
    int held = 0;
    for (const auto& e : r.margins) {
        held += e.held_out;
        CHECK(e.margin == doctest::Approx(e.positive_mr - e.mirror_mr));
    }
    CHECK(held == 8);
    for (const auto* a : {&r.held_out, &r.all_models, &r.trained_only, &r.held_out_vs_all_negatives}) {
        CHECK((a->aruc >= 0.0 && a->aruc <= 1.0));
    }
    const auto j = r.to_json();
    CHECK(j.at("aruc").contains("held_out"));

    test::TempDir out("plots");
    const auto files = write_report_plots(r, out.path);
    CHECK(std::find(files.begin(), files.end(), out.path / "aruc.svg") != files.end());
    for (const auto& f : files) CHECK(std::filesystem::file_size(f) > 100);

    test::TempDir damaged("damaged");
    std::filesystem::copy(dir, damaged.path, std::filesystem::copy_options::recursive);
    std::filesystem::remove(damaged.path / "models" / "neg-distill-tiny_cnn" / "weights.bin");
    const EvalReport partial = evaluate_zoo(m, damaged.path, q);
    CHECK(partial.errors.size() == 1);
    CHECK(partial.models.size() == 22);
}

#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "naturalfinger/data.hpp"

using namespace nf;

namespace {

std::map<int, int> class_counts(const Dataset& d) {
    std::map<int, int> c;
    for (int y : d.labels) ++c[y];
    return c;
}

Dataset labeled(std::vector<int> labels) {
    Dataset d;
    d.name = "toy";
    d.num_classes = 3;
    d.images = Tensor(static_cast<int>(labels.size()), 1, 2, 2);
    for (int i = 0; i < d.images.n(); ++i) d.images.at(i, 0, 0, 0) = i;
    d.labels = std::move(labels);
    return d;
}

}  // namespace

TEST_CASE("procedural datasets have the requested shape and range") {
    ProceduralSpec spec;
    spec.train_per_class = 6;
    spec.test_per_class = 4;
    spec.transfer_count = 13;
    const auto d = make_dataset("glyphs", spec, 3);
    CHECK(d.train.size() == 60);
    CHECK(d.test.size() == 40);
    CHECK(d.train.num_classes == 10);
    CHECK(d.train.images.h() == 16);
    for (const auto& [cls, n] : class_counts(d.train)) CHECK(n == 6);
    const auto [lo, hi] = std::minmax_element(d.train.images.values().begin(), d.train.images.values().end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 1.0);

    const auto t = make_transfer_set("scribbles", spec, 3);
    CHECK(t.size() == 13);
    CHECK_FALSE(t.labeled());
    CHECK_THROWS_AS(make_dataset("nope", spec, 1), std::invalid_argument);

    const auto again = make_dataset("glyphs", spec, 3);
    CHECK(again.train.images.values() == d.train.images.values());
}

TEST_CASE("split halves are disjoint, class balanced and cover the data") {
    ProceduralSpec spec;
    spec.train_per_class = 10;
    spec.test_per_class = 6;
    const auto d = make_dataset("glyphs", spec, 5);
    const auto s = split_dataset(d, 7);
    CHECK(s.warnings.empty());
    std::set<int> pos(s.pos_rows.begin(), s.pos_rows.end()), neg(s.neg_rows.begin(), s.neg_rows.end());
    CHECK(pos.size() == s.pos_rows.size());
    for (int r : neg) CHECK(pos.count(r) == 0);
    CHECK(pos.size() + neg.size() == static_cast<std::size_t>(d.train.size()));
    for (const auto& [cls, n] : class_counts(s.pos_train)) CHECK(n == 5);
    for (const auto& [cls, n] : class_counts(s.neg_train)) CHECK(n == 5);
    for (const auto& [cls, n] : class_counts(s.finetune)) CHECK(n == 3);
    CHECK(s.finetune.size() + s.test.size() == d.test.size());

    const auto again = split_dataset(d, 7);
    CHECK(again.pos_rows == s.pos_rows);
    const auto other = split_dataset(d, 8);
    CHECK(other.pos_rows != s.pos_rows);
}

TEST_CASE("odd class counts put the extra sample first and warn") {
    DatasetPartitions d{labeled({0, 0, 0, 1, 1, 2, 2}), labeled({0, 0, 1, 1, 2, 2})};
    const auto s = split_dataset(d, 1);
    CHECK(s.pos_rows.size() == 4);
    CHECK(s.neg_rows.size() == 3);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].find("class 0") != std::string::npos);
}

TEST_CASE("a class with a single sample cannot be split") {
    DatasetPartitions d{labeled({0, 0, 1}), labeled({0, 0, 1, 1})};
    CHECK_THROWS_WITH_AS(split_dataset(d, 1), doctest::Contains("class 1"), std::invalid_argument);
}

TEST_CASE("quantize_pixel rounds half away from zero and clamps") {
    CHECK(quantize_pixel(0.0) == 0);
    CHECK(quantize_pixel(1.0) == 255);
    CHECK(quantize_pixel(-0.3) == 0);
    CHECK(quantize_pixel(1.7) == 255);
    CHECK(quantize_pixel(0.5 / 255.0) == 1);
    CHECK(quantize_pixel(1.5 / 255.0) == 2);
    CHECK(quantize_pixel(1.49 / 255.0) == 1);
}

TEST_CASE("png round trip preserves grayscale and rgb pixels") {
    test::TempDir dir("png");
    for (int channels : {1, 3}) {
        std::vector<std::uint8_t> px(static_cast<std::size_t>(5 * 4 * channels));
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 7);
        const auto path = dir.path / ("img" + std::to_string(channels) + ".png");
        write_png(path, px, 5, 4, channels);
        int w = 0, h = 0, c = 0;
        CHECK(read_png(path, w, h, c) == px);
        CHECK(w == 5);
        CHECK(h == 4);
        CHECK(c == channels);
    }
    CHECK_THROWS(write_png(dir.path / "bad.png", std::vector<std::uint8_t>(3), 5, 4, 1));
}

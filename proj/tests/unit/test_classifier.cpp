#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "naturalfinger/classifier.hpp"

using namespace nf;

TEST_CASE("every registered architecture builds and produces logits") {
    for (const auto& name : registered_architectures()) {
        Classifier m = build_classifier(name, {1, 16, 16}, 10, 1);
        const Tensor z = m.logits(test::random_tensor(2, 1, 16, 16, 2, 0, 1));
        CHECK_MESSAGE(z.n() == 2, name);
        CHECK_MESSAGE(z.sample_size() == 10, name);
        CHECK(m.head_layer < m.net.size());
    }
}

TEST_CASE("unknown architectures list the registered names") {
    CHECK_THROWS_WITH_AS(build_classifier("resnet9000", {1, 16, 16}, 10, 1),
                         doctest::Contains("vgg_s"), std::invalid_argument);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    const Tensor z = test::random_tensor(3, 4, 1, 1, 5, -2, 2);
    const std::vector<int> y{0, 3, 1};
    Tensor g;
    const double loss = cross_entropy(z, y, &g);
    CHECK(loss > 0);
    const Tensor num = test::numeric_gradient(z, [&](const Tensor& t) { return cross_entropy(t, y, nullptr); });
    CHECK(test::max_rel_error(g, num) < 1e-6);
    CHECK_THROWS_AS(cross_entropy(z, std::vector<int>{0, 9, 1}, nullptr), std::out_of_range);
}

TEST_CASE("uniform logits give log(k) cross entropy") {
    const Tensor z(2, 5, 1, 1, 0.3);
    CHECK(cross_entropy(z, std::vector<int>{1, 4}, nullptr) == doctest::Approx(std::log(5.0)));
}

TEST_CASE("soft cross entropy gradient matches finite differences") {
    const Tensor s = test::random_tensor(2, 3, 1, 1, 6, -2, 2);
    const Tensor t = test::random_tensor(2, 3, 1, 1, 7, -2, 2);
    for (double temp : {1.0, 3.0}) {
        Tensor g;
        soft_cross_entropy(s, t, temp, &g);
        const Tensor num = test::numeric_gradient(s, [&](const Tensor& x) { return soft_cross_entropy(x, t, temp, nullptr); });
        CHECK(test::max_rel_error(g, num) < 1e-6);
    }
    CHECK_THROWS_AS(soft_cross_entropy(s, t, 0.0, nullptr), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    test::TempDir dir("ckpt");
    Classifier m = build_classifier("plain_cnn", {1, 16, 16}, 10, 3);
    save_classifier(m, dir.path / "m");
    Classifier back = load_classifier(dir.path / "m");
    CHECK(back.architecture == "plain_cnn");
    CHECK(back.num_classes == 10);
    CHECK(back.net.flat_parameters() == m.net.flat_parameters());
    const Tensor x = test::random_tensor(3, 1, 16, 16, 4, 0, 1);
    CHECK(back.logits(x).values() == m.logits(x).values());
    CHECK_THROWS(load_classifier(dir.path / "missing"));
}

TEST_CASE("training on a separable toy problem reaches high accuracy") {
    ProceduralSpec spec;
    spec.train_per_class = 30;
    spec.test_per_class = 10;
    const auto d = make_dataset("glyphs", spec, 2);
    Classifier m = build_classifier("tiny_cnn", {1, 16, 16}, 10, 1);
    const double before = accuracy(m, d.test);
    TrainOptions opt;
    opt.epochs = 12;
    opt.lr = 0.05;
    opt.seed = 1;
    train_supervised(m, d.train.images, d.train.labels, opt);
    CHECK(accuracy(m, d.test) > std::max(0.8, before));
}

TEST_CASE("head-only training leaves the body untouched") {
    ProceduralSpec spec;
    spec.train_per_class = 4;
    spec.test_per_class = 2;
    const auto d = make_dataset("glyphs", spec, 2);
    Classifier m = build_classifier("tiny_cnn", {1, 16, 16}, 10, 1);
    std::vector<std::vector<double>> before;
    for (Param* p : m.net.params()) before.push_back(p->value.values());
    TrainOptions opt;
    opt.epochs = 2;
    opt.head_only = true;
    train_supervised(m, d.train.images, d.train.labels, opt);
    const auto head = m.head_params();
    const auto all = m.net.params();
    for (std::size_t i = 0; i < all.size(); ++i) {
        const bool is_head = std::find(head.begin(), head.end(), all[i]) != head.end();
        CHECK_MESSAGE((all[i]->value.values() == before[i]) != is_head, all[i]->name);
    }
}

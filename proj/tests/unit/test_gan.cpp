#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "naturalfinger/gan.hpp"
#include "naturalfinger/util.hpp"

using namespace nf;

TEST_CASE("generator output has the declared shape and range") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 3);
    const LatentBatch z = sample_latents(5, 4, 3, 1);
    CHECK(z.size() == 5);
    for (int y : z.class_labels) CHECK((y >= 0 && y < 3));
    const Tensor img = gan.generate(z.z, z.class_labels);
    CHECK(img.n() == 5);
    CHECK(img.c() == 1);
    CHECK(img.h() == 8);
    CHECK(img.w() == 8);
    for (double v : img.values()) CHECK((v >= -1.0 && v <= 1.0));
    const Tensor unit = to_unit_range(img, gan.meta());
    CHECK(unit[0] == doctest::Approx((img[0] + 1.0) / 2.0));
    CHECK_THROWS_AS(gan.generate(z.z, std::vector<int>{0, 1}), std::invalid_argument);
}

TEST_CASE("latent sampling is deterministic in the seed") {
    const auto a = sample_latents(4, 3, 10, 9);
    const auto b = sample_latents(4, 3, 10, 9);
    CHECK(a.z.values() == b.z.values());
    CHECK(a.class_labels == b.class_labels);
    CHECK(sample_latents(4, 3, 10, 10).z.values() != a.z.values());
}

TEST_CASE("latent gradient matches finite differences") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 4);
    const LatentBatch z = sample_latents(2, 4, 3, 2);
    const Tensor r = test::random_tensor(2, 1, 8, 8, 5);
    auto f = [&](const Tensor& zz) {
        const Tensor img = gan.generate(zz, z.class_labels);
        double s = 0;
        for (std::size_t i = 0; i < img.size(); ++i) s += img[i] * r[i];
        return s;
    };
    gan.generate_with_grad(z.z, z.class_labels);
    const Tensor dz = gan.backward_latent(r);
    CHECK(dz.sample_size() == 4);
    CHECK(test::max_rel_error(dz, test::numeric_gradient(z.z, f)) < 1e-5);
}

TEST_CASE("discriminator image gradient matches finite differences") {
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 6);
    const Tensor x = test::random_tensor(2, 1, 8, 8, 7);
    const std::vector<int> cls{2, 0};
    const Tensor r = test::random_tensor(2, 1, 1, 1, 8);
    auto f = [&](const Tensor& xx) {
        const Tensor s = gan.discriminate(xx, cls);
        return s[0] * r[0] + s[1] * r[1];
    };
    gan.discriminate_with_grad(x, cls);
    const Tensor dx = gan.backward_image(r);
    CHECK(test::max_rel_error(dx, test::numeric_gradient(x, f)) < 1e-5);
}

TEST_CASE("checkpoints round-trip and loading validates the backend") {
    test::TempDir dir("gan");
    GanHandle gan = build_reference_gan(test::tiny_gan_meta(), 2);
    gan.save(dir.path / "g");
    GanHandle back = load_backend(dir.path / "g");
    const LatentBatch z = sample_latents(3, 4, 3, 3);
    CHECK(back.generate(z.z, z.class_labels).values() == gan.generate(z.z, z.class_labels).values());
    const Tensor img = gan.generate(z.z, z.class_labels);
    CHECK(back.discriminate(img, z.class_labels).values() == gan.discriminate(img, z.class_labels).values());

    CHECK_THROWS_WITH_AS(load_backend(dir.path / "g", "stylegan"), doctest::Contains("reference"),
                         std::invalid_argument);
    CHECK_THROWS(load_backend(dir.path / "missing"));

    auto meta = read_json(dir.path / "g" / "meta.json");
    meta["real_score_sign"] = 0;
    std::ofstream(dir.path / "g" / "meta.json") << meta.dump();
    CHECK_THROWS_WITH(load_backend(dir.path / "g"), doctest::Contains("sign convention"));
}

TEST_CASE("short hinge training separates real from fake scores") {
    ProceduralSpec spec;
    spec.train_per_class = 20;
    spec.test_per_class = 2;
    const auto d = make_dataset("glyphs", spec, 4);
    GanTrainConfig cfg;
    cfg.steps = 60;
    cfg.generator_width = 8;
    cfg.latent_dim = 8;
    GanTrainStats stats;
    GanHandle gan = train_reference_gan(d.train, cfg, 5, &stats);
    CHECK(stats.d_loss.size() == 60);
    CHECK(stats.mean_real_score > stats.mean_fake_score);
    CHECK(gan.meta().real_score_sign == 1);
    CHECK(gan.num_classes() == 10);

    GanHandle again = train_reference_gan(d.train, cfg, 5);
    CHECK(again.generator().flat_parameters() == gan.generator().flat_parameters());
}

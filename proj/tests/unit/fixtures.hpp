#pragma once

#include "naturalfinger/classifier.hpp"
#include "naturalfinger/gan.hpp"

namespace nf::test {

inline GanMeta tiny_gan_meta() {
    GanMeta m;
    m.latent_dim = 4;
    m.num_classes = 3;
    m.image_shape = {1, 8, 8};
    m.generator_width = 4;
    m.discriminator_width = 4;
    return m;
}

/// Classifier that ignores its input and always predicts `cls`.
inline Classifier constant_classifier(int cls, int num_classes, ImageShape shape) {
    Classifier m;
    m.architecture = "constant";
    m.num_classes = num_classes;
    m.input = shape;
    const int in = shape.channels * shape.height * shape.width;
    m.net.add<Reshape>(in, 1, 1);
    auto& dense = m.net.add<Dense>(in, num_classes);
    dense.params()[0]->value = Tensor(1, 1, num_classes, in, 0.0);
    dense.params()[1]->value = Tensor(1, num_classes, 1, 1, 0.0);
    dense.params()[1]->value[static_cast<std::size_t>(cls)] = 1.0;
    m.head_layer = 1;
    return m;
}

}  // namespace nf::test

#include <filesystem>
#include <random>

#include "naturalfinger/zoo.hpp"

namespace nf::test {

/// Two-architecture zoo with one value per attack grid and a handful of images.
inline ZooConfig tiny_zoo_config() {
    ZooConfig c;
    c.architectures = {"tiny_mlp", "tiny_cnn"};
    c.source_architecture = "tiny_mlp";
    c.finetune_modes = {FinetuneMode::FTLL, FinetuneMode::RTLL};
    c.grid_p = {0.5};
    c.grid_v = {3};
    c.grid_r = {0.5};
    c.data.train_per_class = 6;
    c.data.test_per_class = 4;
    c.data.transfer_count = 30;
    c.scratch_epochs = 2;
    c.finetune_epochs = 1;
    c.extraction_epochs = 1;
    c.trained_positives = {"pos-source", "pos-distill-tiny_cnn"};
    c.trained_negatives = {"mneg-source", "neg-scratch-tiny_cnn"};
    return c;
}

/// Built once per test binary and shared read-only.
inline const std::filesystem::path& tiny_zoo_dir() {
    static const std::filesystem::path dir = [] {
        std::random_device rd;
        auto d = std::filesystem::temp_directory_path() / ("nf-test-zoo-" + std::to_string(rd()));
        build_zoo(tiny_zoo_config(), d);
        return d;
    }();
    return dir;
}

}  // namespace nf::test

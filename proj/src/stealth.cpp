#include "naturalfinger/stealth.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "naturalfinger/util.hpp"

namespace nf {

StealthConfig StealthConfig::desk() {
    StealthConfig c;
    c.n_per_class = 500;
    return c;
}

void StealthConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("stealth config: " + what); };
    if (n_per_class <= 0) fail("n_per_class must be > 0");
    if (!(noise_std > 0)) fail("noise_std must be > 0");
    if (!(epsilon > 0)) fail("epsilon must be > 0");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(lr > 0)) fail("lr must be > 0");
    if (batch_size <= 0) fail("batch_size must be > 0");
    if (seeds.empty()) fail("need at least one detector seed");
    if (noise_queries <= 0) fail("noise_queries must be > 0");
}

nlohmann::json StealthConfig::to_json() const {
    return {{"n_per_class", n_per_class}, {"noise_std", noise_std}, {"noise_on_natural", noise_on_natural},
            {"epsilon", epsilon},         {"epochs", epochs},       {"lr", lr},
            {"batch_size", batch_size},   {"seeds", seeds},         {"noise_queries", noise_queries}};
}

StealthConfig StealthConfig::from_json(const nlohmann::json& j) {
    StealthConfig c;
    c.n_per_class = j.value("n_per_class", c.n_per_class);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.noise_on_natural = j.value("noise_on_natural", c.noise_on_natural);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seeds = j.value("seeds", c.seeds);
    c.noise_queries = j.value("noise_queries", c.noise_queries);
    return c;
}

Dataset DetectorDataset::combined() const {
    Dataset d;
    d.name = "detector";
    d.num_classes = 2;
    const Tensor parts[] = {natural, noise, adversarial};
    d.images = Tensor::concat(parts);
    d.labels.assign(static_cast<std::size_t>(natural.n()), 0);
    d.labels.insert(d.labels.end(), static_cast<std::size_t>(noise.n() + adversarial.n()), 1);
    return d;
}

Tensor gaussian_noise_images(int n, int channels, int height, int width, double std_dev, std::uint64_t seed,
                             const Tensor* base) {
    Tensor t(n, channels, height, width, 0.5);
    if (base) {
        if (base->n() != n || base->sample_size() != t.sample_size()) {
            throw std::invalid_argument("gaussian_noise_images: base shape mismatch");
        }
        t = *base;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, std_dev);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(t[i] + noise(rng), 0.0, 1.0);
    return t;
}

DetectorDataset build_detector_dataset(const Dataset& finetune, Classifier& source, int n_per_class,
                                       std::uint64_t seed, const StealthConfig& config) {
    if (n_per_class <= 0) throw std::invalid_argument("build_detector_dataset: n_per_class must be > 0");
    if (finetune.size() < n_per_class) {
        throw std::invalid_argument("build_detector_dataset: need " + std::to_string(n_per_class) +
                                    " fine-tuning images, have " + std::to_string(finetune.size()));
    }
    std::vector<int> order(static_cast<std::size_t>(finetune.size()));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, "detector-data"));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(n_per_class));

    DetectorDataset d;
    d.natural = finetune.images.gather(order);
    const auto& x = d.natural;
    d.noise = gaussian_noise_images(n_per_class, x.c(), x.h(), x.w(), config.noise_std,
                                    derive_seed(seed, "detector-noise"),
                                    config.noise_on_natural ? &d.natural : nullptr);
    d.adversarial = fgsm(source, d.natural, source.predict(d.natural), config.epsilon);
    return d;
}

Classifier train_detector(const DetectorDataset& dataset, std::uint64_t seed, const StealthConfig& config) {
    const Dataset data = dataset.combined();
    const auto& x = data.images;
    Classifier detector = build_classifier("detector9", {x.c(), x.h(), x.w()}, 2, seed);
    TrainOptions opt;
    opt.optimizer = OptimizerKind::adam;
    opt.lr = config.lr;
    opt.epochs = config.epochs;
    opt.batch_size = config.batch_size;
    opt.weight_decay = 0.0;
    opt.seed = derive_seed(seed, "detector-train");
    train_supervised(detector, data.images, data.labels, opt);
    return detector;
}

double detection_rate(Classifier& detector, const Tensor& images) {
    if (images.n() == 0) throw std::invalid_argument("detection_rate: no images");
    const auto pred = detector.predict(images);
    const auto flagged = std::count(pred.begin(), pred.end(), 1);
    return static_cast<double>(flagged) / static_cast<double>(pred.size());
}

nlohmann::json StealthReport::to_json() const {
    auto row = [](const StealthSeedResult& r) {
        return nlohmann::json{{"query_rate", r.query_rate},
                              {"noise_rate", r.noise_rate},
                              {"natural_rate", r.natural_rate},
                              {"adversarial_rate", r.adversarial_rate}};
    };
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& r : per_seed) {
        auto j = row(r);
        j["seed"] = r.seed;
        seeds.push_back(j);
    }
    return {{"config", config.to_json()}, {"per_seed", seeds}, {"mean", row(mean)}};
}

StealthReport run_stealth(const Dataset& finetune, const Dataset& test, Classifier& source,
                          const Tensor& query_images, const StealthConfig& config) {
    config.validate();
    StealthReport report;
    report.config = config;
    const auto& q = query_images;
    const Tensor adversarial_test = fgsm(source, test.images, source.predict(test.images), config.epsilon);
    for (std::uint64_t seed : config.seeds) {
        const DetectorDataset data = build_detector_dataset(finetune, source, config.n_per_class, seed, config);
        Classifier detector = train_detector(data, seed, config);
        const Tensor noise = gaussian_noise_images(config.noise_queries, q.c(), q.h(), q.w(), config.noise_std,
                                                   derive_seed(seed, "noise-queries"));
        StealthSeedResult r;
        r.seed = seed;
        r.query_rate = detection_rate(detector, query_images);
        r.noise_rate = detection_rate(detector, noise);
        r.natural_rate = detection_rate(detector, test.images);
        r.adversarial_rate = detection_rate(detector, adversarial_test);
        report.per_seed.push_back(r);
    }
    const double k = static_cast<double>(report.per_seed.size());
    for (const auto& r : report.per_seed) {
        report.mean.query_rate += r.query_rate / k;
        report.mean.noise_rate += r.noise_rate / k;
        report.mean.natural_rate += r.natural_rate / k;
        report.mean.adversarial_rate += r.adversarial_rate / k;
    }
    return report;
}

}  // namespace nf

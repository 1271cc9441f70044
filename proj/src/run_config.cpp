#include "naturalfinger/run_config.hpp"

#include "naturalfinger/util.hpp"

namespace nf {

nlohmann::json gan_config_to_json(const GanTrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"lr_generator", c.lr_generator},
            {"lr_discriminator", c.lr_discriminator},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"latent_dim", c.latent_dim},
            {"generator_width", c.generator_width},
            {"discriminator_width", c.discriminator_width}};
}

GanTrainConfig gan_config_from_json(const nlohmann::json& j, GanTrainConfig c) {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_generator = j.value("lr_generator", c.lr_generator);
    c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.generator_width = j.value("generator_width", c.generator_width);
    c.discriminator_width = j.value("discriminator_width", c.discriminator_width);
    return c;
}

RunConfig RunConfig::for_profile(const std::string& profile) {
    RunConfig c;
    c.profile = profile;
    c.zoo = ZooConfig::for_profile(profile);
    if (profile == "desk") {
        c.gan.steps = 1200;
        c.gan.generator_width = 16;
        c.fingerprint.lr = 0.05;
        c.fingerprint.iterations = 300;
        c.fingerprint.flip_probability = 0.0;
        c.fingerprint.crop_padding = 1;
        c.fingerprint.optimize_batch = 200;
        c.fingerprint.n_candidates = 4000;
        c.stealth = StealthConfig::desk();
    }
    c.apply_seed(c.seed);
    return c;
}

void RunConfig::apply_seed(std::uint64_t s) {
    seed = s;
    zoo.seed = s;
    fingerprint.seed = s;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::string& profile) {
    RunConfig c = for_profile(j.value("profile", profile));
    if (j.contains("seed")) c.apply_seed(j.at("seed").get<std::uint64_t>());
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        c.paths.zoo = p.value("zoo", c.paths.zoo);
        c.paths.gan = p.value("gan", c.paths.gan);
        c.paths.queries = p.value("queries", c.paths.queries);
        c.paths.out = p.value("out", c.paths.out);
    }
    if (j.contains("zoo")) {
        nlohmann::json z = c.zoo.to_json();
        z.merge_patch(j.at("zoo"));
        c.zoo = ZooConfig::from_json(z);
    }
    if (j.contains("gan")) c.gan = gan_config_from_json(j.at("gan"), c.gan);
    if (j.contains("fingerprint")) {
        nlohmann::json f = c.fingerprint.to_json();
        f.merge_patch(j.at("fingerprint"));
        c.fingerprint = FingerprintConfig::from_json(f);
    }
    if (j.contains("stealth")) {
        nlohmann::json s = c.stealth.to_json();
        s.merge_patch(j.at("stealth"));
        c.stealth = StealthConfig::from_json(s);
    }
    c.grid_step = j.value("grid_step", c.grid_step);
    c.threshold = j.value("threshold", c.threshold);
    return c;
}

nlohmann::json RunConfig::to_json() const {
    return {{"profile", profile},
            {"seed", seed},
            {"paths", {{"zoo", paths.zoo}, {"gan", paths.gan}, {"queries", paths.queries}, {"out", paths.out}}},
            {"zoo", zoo.to_json()},
            {"gan", gan_config_to_json(gan)},
            {"fingerprint", fingerprint.to_json()},
            {"stealth", stealth.to_json()},
            {"grid_step", grid_step},
            {"threshold", threshold}};
}

std::string RunConfig::hash() const { return json_hash(to_json()); }

void RunConfig::validate() const {
    if (profile != "desk" && profile != "full") {
        throw std::invalid_argument("unknown profile '" + profile + "' (expected desk or full)");
    }
    zoo.validate();
    fingerprint.validate();
    stealth.validate();
    if (gan.steps < 0 || gan.batch_size <= 0 || gan.latent_dim <= 0 || gan.generator_width <= 0) {
        throw std::invalid_argument("gan config: steps >= 0, positive batch size, latent_dim and width required");
    }
    if (!(grid_step > 0 && grid_step <= 1e-3)) throw std::invalid_argument("grid_step must be in (0, 1e-3]");
    if (!(threshold >= 0 && threshold <= 1)) throw std::invalid_argument("threshold must be in [0, 1]");
}

}  // namespace nf

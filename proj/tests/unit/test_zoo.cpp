#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "helpers.hpp"
#include "naturalfinger/util.hpp"
#include "naturalfinger/zoo.hpp"

using namespace nf;

namespace {

Classifier weight_vector(const std::vector<double>& w) {
    Classifier m;
    m.architecture = "linear";
    m.num_classes = 1;
    m.input = {1, 1, static_cast<int>(w.size())};
    m.net.add<Reshape>(static_cast<int>(w.size()), 1, 1);
    auto& d = m.net.add<Dense>(static_cast<int>(w.size()), 1);
    d.params()[0]->value.values() = w;
    d.params()[1]->value[0] = 0.01;
    m.head_layer = 1;
    return m;
}

Dataset small_glyphs(int per_class) {
    ProceduralSpec spec;
    spec.train_per_class = per_class;
    spec.test_per_class = 2;
    return make_dataset("glyphs", spec, 3).train;
}

std::vector<std::vector<double>> snapshot(Classifier& m) {
    std::vector<std::vector<double>> out;
    for (Param* p : m.net.params()) out.push_back(p->value.values());
    return out;
}

}  // namespace

TEST_CASE("attack specs validate exactly the fields of their kind") {
    AttackSpec a;
    a.kind = AttackKind::prune;
    a.p = 0.3;
    CHECK_NOTHROW(a.validate());
    CHECK(a.parameter_label() == "0.3");
    a.p = 0.35;
    CHECK_THROWS_AS(a.validate(), std::invalid_argument);
    a.p = 0.3;
    a.v = 2;
    CHECK_THROWS_AS(a.validate(), std::invalid_argument);

    AttackSpec n;
    n.kind = AttackKind::noise;
    n.v = 10;
    CHECK_THROWS_AS(n.validate(), std::invalid_argument);

    AttackSpec d;
    d.kind = AttackKind::distill;
    d.T = 1.0;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d.transfer_dataset = "glyphs";
    CHECK_NOTHROW(d.validate());
    CHECK(AttackSpec::from_json(d.to_json()) == d);

    CHECK(parse_finetune_mode("RTAL") == FinetuneMode::RTAL);
    CHECK_THROWS_AS(parse_attack_kind("bogus"), std::invalid_argument);
}

TEST_CASE("planned counts follow the grid arithmetic") {
    const auto desk = planned_counts(ZooConfig::desk());
    CHECK(desk.at("positive") == 19);
    CHECK(desk.at("mirror_negative") == 19);
    CHECK(desk.at("negative") == 4);

    const ZooConfig full = ZooConfig::full();
    const auto f = planned_counts(full);
    CHECK(f.at("positive") == 63);
    CHECK(f.at("mirror_negative") == 63);
    CHECK(f.at("negative") == 28);
    CHECK(plan_zoo(full).size() == 154);
    CHECK_NOTHROW(full.validate());
}

TEST_CASE("the plan is mirror symmetric and ids are unique") {
    const auto plan = plan_zoo(ZooConfig::desk());
    std::set<std::string> ids;
    std::multiset<std::string> pos, mirror;
    for (const auto& pm : plan) {
        CHECK(ids.insert(pm.record.model_id).second);
        const auto& r = pm.record;
        const std::string key = r.architecture + (r.lineage ? r.lineage->to_json().dump() : "");
        if (r.role == Role::positive) {
            pos.insert(key);
            CHECK(r.train_half == "pos");
        }
        if (r.role == Role::mirror_negative) {
            mirror.insert(key);
            CHECK(r.train_half == "neg");
        }
        CHECK((pm.phase == 0) == !r.parent_id.has_value());
    }
    CHECK(pos == mirror);
}

TEST_CASE("config validation rejects inconsistent settings") {
    ZooConfig c = ZooConfig::desk();
    c.transfer_dataset = c.dataset;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = ZooConfig::desk();
    c.trained_negatives = {"pos-source"};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = ZooConfig::desk();
    c.grid_p = {0.25};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = ZooConfig::desk();
    c.architectures.push_back("lenet9");
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("registered"), std::invalid_argument);

    const ZooConfig d = ZooConfig::desk();
    CHECK(ZooConfig::from_json(d.to_json()).hash() == d.hash());
    nlohmann::json patch = d.to_json();
    patch["seeds"]["global"] = 99;
    CHECK(ZooConfig::from_json(patch).hash() != d.hash());
}

TEST_CASE("pruning zeroes exactly floor(p N) smallest magnitudes") {
    Classifier m = weight_vector({0.1, -0.05, 0.3, 0.2});
    CHECK(prune_weights(m, 0.5) == 2);
    CHECK(m.net.params()[0]->value.values() == std::vector<double>{0.0, 0.0, 0.3, 0.2});
    CHECK(m.net.params()[1]->value[0] == 0.01);
    CHECK(m.net.params()[0]->mask == std::vector<unsigned char>{0, 0, 1, 1});

    std::vector<double> w(1001);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(static_cast<double>(i) + 0.5);
    Classifier big = weight_vector(w);
    CHECK(prune_weights(big, 0.5) == 500);
    const auto& v = big.net.params()[0]->value.values();
    CHECK(std::count(v.begin(), v.end(), 0.0) == 500);

    Classifier ties = weight_vector({0.2, 0.2, 0.2, 0.2});
    CHECK(prune_weights(ties, 0.5) == 2);
    CHECK(ties.net.params()[0]->value.values() == std::vector<double>{0.0, 0.0, 0.2, 0.2});
    CHECK_THROWS_AS(prune_weights(ties, 1.0), std::invalid_argument);
}

TEST_CASE("pruned weights stay zero through fine-tuning") {
    const Dataset d = small_glyphs(3);
    Classifier m = build_classifier("tiny_cnn", {1, 16, 16}, 10, 1);
    prune_weights(m, 0.6);
    finetune(m, d, FinetuneMode::FTAL, finetune_options(2, 0.05, 1));
    for (Param* p : m.net.params()) {
        for (std::size_t i = 0; i < p->mask.size(); ++i) {
            if (!p->mask[i]) CHECK(p->value[i] == 0.0);
        }
    }
}

TEST_CASE("pruning is monotone in p") {
    Classifier base = build_classifier("vgg_s", {1, 16, 16}, 10, 2);
    std::size_t last = 0;
    for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        Classifier m = base;
        const std::size_t n = prune_weights(m, p);
        CHECK(n >= last);
        last = n;
    }
}

TEST_CASE("noise shrinks with v and is deterministic") {
    Classifier base = build_classifier("tiny_cnn", {1, 16, 16}, 10, 2);
    const auto orig = base.net.flat_parameters();
    auto delta = [&](int v) {
        Classifier m = base;
        noise_weights(m, v, 5);
        const auto now = m.net.flat_parameters();
        double s = 0;
        for (std::size_t i = 0; i < now.size(); ++i) s += (now[i] - orig[i]) * (now[i] - orig[i]);
        return std::sqrt(s);
    };
    CHECK(delta(1) > delta(5));
    CHECK(delta(5) > delta(9));
    CHECK(delta(3) == delta(3));
    CHECK_THROWS_AS(noise_weights(base, 0, 1), std::invalid_argument);
}

TEST_CASE("fine-tuning modes touch the expected parameters") {
    const Dataset d = small_glyphs(3);
    Classifier base = build_classifier("tiny_cnn", {1, 16, 16}, 10, 4);
    const auto before = snapshot(base);
    const auto head = base.head_params();
    const auto all = base.net.params();
    std::vector<bool> is_head;
    for (Param* p : all) is_head.push_back(std::find(head.begin(), head.end(), p) != head.end());

    SUBCASE("zero learning rate leaves every mode but a head reset unchanged") {
        for (auto mode : {FinetuneMode::FTLL, FinetuneMode::FTAL}) {
            Classifier m = base;
            finetune(m, d, mode, finetune_options(2, 0.0, 1));
            CHECK(snapshot(m) == before);
        }
        Classifier m = base;
        finetune(m, d, FinetuneMode::RTLL, finetune_options(2, 0.0, 1));
        const auto after = snapshot(m);
        const auto params = m.net.params();
        for (std::size_t i = 0; i < after.size(); ++i) {
            if (!is_head[i]) CHECK(after[i] == before[i]);
            if (is_head[i] && params[i]->prunable) CHECK(after[i] != before[i]);
        }
    }
    SUBCASE("last-layer modes leave the body untouched") {
        for (auto mode : {FinetuneMode::FTLL, FinetuneMode::RTLL}) {
            Classifier m = base;
            finetune(m, d, mode, finetune_options(1, 0.01, 1));
            const auto after = snapshot(m);
            for (std::size_t i = 0; i < after.size(); ++i) {
                if (!is_head[i]) CHECK(after[i] == before[i]);
            }
        }
    }
}

TEST_CASE("adversarial fine-tuning and extraction argument checks") {
    const Dataset d = small_glyphs(2);
    Classifier m = build_classifier("tiny_mlp", {1, 16, 16}, 10, 4);
    CHECK_THROWS_AS(adversarial_finetune(m, d, 0.0, finetune_options(1, 0.01, 1)), std::invalid_argument);
    CHECK_THROWS_AS(adversarial_finetune(m, d, 1.5, finetune_options(1, 0.01, 1)), std::invalid_argument);
    CHECK_NOTHROW(adversarial_finetune(m, d, 0.5, finetune_options(1, 0.01, 1), true));

    CHECK_THROWS_AS(distill(m, "tiny_mlp", d.images, 0.0, finetune_options(1)), std::invalid_argument);
    Classifier s = distill(m, "tiny_cnn", d.images, 2.0, finetune_options(0, 0.01, 1));
    CHECK(s.architecture == "tiny_cnn");
    CHECK(s.num_classes == 10);
    CHECK_THROWS_WITH_AS(knockoff(m, "glyphs", "tiny_cnn", d, finetune_options(1)), doctest::Contains("distillation"),
                         std::invalid_argument);
}

TEST_CASE("distillation with enough epochs tracks the teacher") {
    ProceduralSpec spec;
    spec.train_per_class = 20;
    spec.test_per_class = 10;
    const auto data = make_dataset("glyphs", spec, 6);
    Classifier teacher = train_model("tiny_cnn", data.train, 10, 0.05, 1);
    Classifier student = distill(teacher, "tiny_mlp", data.train.images, 1.0, finetune_options(15, 0.05, 2));
    CHECK(agreement(teacher, student, data.test.images) > 0.6);
}

TEST_CASE("a tiny zoo builds completely and satisfies the manifest invariants") {
    const auto& dir = test::tiny_zoo_dir();
    const ZooManifest m = load_manifest(dir);
    CHECK(m.complete());
    CHECK(m.problems().empty());
    CHECK(m.records.size() == 22);
    CHECK(m.counts_by_role.at("positive") == 10);
    CHECK(m.config_hash == test::tiny_zoo_config().hash());
    int trained = 0;
    for (const auto& r : m.records) {
        trained += r.trained;
        CHECK(std::filesystem::exists(dir / r.weights_uri / "weights.bin"));
        CHECK((r.test_accuracy >= 0.0 && r.test_accuracy <= 1.0));
    }
    CHECK(trained == 4);

    const std::string text = pretty(m.to_json());
    CHECK(pretty(ZooManifest::from_json(nlohmann::json::parse(text)).to_json()) == text);
    CHECK(read_file(dir / "manifest.json") == text);

    LoadedModels loaded = load_trained_models(dir, m);
    CHECK(loaded.positive_ids == std::vector<std::string>{"pos-source", "pos-distill-tiny_cnn"});
    CHECK(loaded.view().negatives.size() == 2);
}

TEST_CASE("zoo manifests catch broken invariants") {
    ZooManifest m = load_manifest(test::tiny_zoo_dir());
    ZooManifest dup = m;
    dup.records.push_back(dup.records.front());
    dup.recount();
    CHECK_FALSE(dup.problems().empty());

    ZooManifest orphan = m;
    orphan.records.erase(orphan.records.begin());
    orphan.recount();
    bool parent_missing = false;
    for (const auto& p : orphan.problems()) parent_missing |= p.find("parent pos-source missing") != std::string::npos;
    CHECK(parent_missing);
}

TEST_CASE("resuming skips finished models, rebuilds missing ones and refuses a different config") {
    test::TempDir dir("resume");
    const ZooConfig c = test::tiny_zoo_config();
    std::filesystem::copy(test::tiny_zoo_dir(), dir.path, std::filesystem::copy_options::recursive);
    std::filesystem::remove(dir.path / "models" / "pos-noise-3" / "weights.bin");
    const BuildResult r = build_zoo(c, dir.path);
    CHECK(r.built == 1);
    CHECK(r.skipped == 21);
    CHECK(r.failures.empty());
    CHECK(read_file(dir.path / "manifest.json") == read_file(test::tiny_zoo_dir() / "manifest.json"));

    ZooConfig other = c;
    other.seed = 2;
    CHECK_THROWS_AS(build_zoo(other, dir.path), ZooConfigMismatch);
}

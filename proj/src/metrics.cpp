#include "naturalfinger/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "naturalfinger/plot.hpp"

namespace nf {

nlohmann::json MatchResult::to_json() const {
    std::vector<int> hits(per_sample_hits.begin(), per_sample_hits.end());
    return {{"model_id", model_id},
            {"matching_rate", matching_rate},
            {"n_queries", n_queries},
            {"per_sample_hits", hits}};
}

MatchResult matching_rate(std::span<const int> predictions, std::span<const int> y_positive,
                          const std::string& model_id) {
    if (predictions.size() != y_positive.size()) {
        throw std::invalid_argument("matching_rate: " + std::to_string(predictions.size()) +
                                    " predictions for " + std::to_string(y_positive.size()) + " queries");
    }
    MatchResult m;
    m.model_id = model_id;
    m.n_queries = static_cast<int>(predictions.size());
    int hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool hit = predictions[i] == y_positive[i];
        m.per_sample_hits.push_back(hit ? 1 : 0);
        hits += hit;
    }
    m.matching_rate = m.n_queries ? static_cast<double>(hits) / m.n_queries : 0.0;
    return m;
}

MatchResult matching_rate(std::span<const int> predictions, const QuerySet& query_set,
                          const std::string& model_id) {
    return matching_rate(predictions, query_set.positive_labels(), model_id);
}

double matching_rate_margin(double mr_positive, double mr_mirror_negative) {
    if (!(mr_positive >= 0 && mr_positive <= 1 && mr_mirror_negative >= 0 && mr_mirror_negative <= 1)) {
        throw std::invalid_argument("matching_rate_margin: rates must lie in [0, 1]");
    }
    return mr_positive - mr_mirror_negative;
}

// ---- ARUC -------------------------------------------------------------------------------

double robustness_at(std::span<const double> positive_mrs, double t) {
    const auto n = std::count_if(positive_mrs.begin(), positive_mrs.end(), [t](double m) { return m >= t; });
    return static_cast<double>(n) / static_cast<double>(positive_mrs.size());
}

double uniqueness_at(std::span<const double> negative_mrs, double t) {
    const auto n = std::count_if(negative_mrs.begin(), negative_mrs.end(), [t](double m) { return m < t; });
    return static_cast<double>(n) / static_cast<double>(negative_mrs.size());
}

nlohmann::json ArucResult::to_json(bool with_curves) const {
    nlohmann::json j{{"aruc", aruc}};
    if (max_perfect_interval) {
        j["max_perfect_interval"] = {max_perfect_interval->first, max_perfect_interval->second};
        j["max_perfect_interval_width"] = max_perfect_interval->second - max_perfect_interval->first;
    } else {
        j["max_perfect_interval"] = nullptr;
        j["max_perfect_interval_width"] = 0.0;
    }
    if (with_curves) {
        j["thresholds"] = thresholds;
        j["robustness"] = robustness;
        j["uniqueness"] = uniqueness;
    }
    return j;
}

ArucResult aruc(std::span<const double> positive_mrs, std::span<const double> negative_mrs, double grid_step) {
    if (positive_mrs.empty() || negative_mrs.empty()) {
        throw std::invalid_argument("aruc: positive and negative matching rates must be non-empty");
    }
    if (!(grid_step > 0 && grid_step <= 1)) throw std::invalid_argument("aruc: grid_step must be in (0, 1]");
    ArucResult out;

    // Both curves are constant between consecutive observed rates.
    std::vector<double> cuts{0.0, 1.0};
    for (double m : positive_mrs) cuts.push_back(std::clamp(m, 0.0, 1.0));
    for (double m : negative_mrs) cuts.push_back(std::clamp(m, 0.0, 1.0));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
        area += (cuts[i + 1] - cuts[i]) *
                std::min(robustness_at(positive_mrs, mid), uniqueness_at(negative_mrs, mid));
    }
    out.aruc = std::clamp(area, 0.0, 1.0);

    const double lo = *std::max_element(negative_mrs.begin(), negative_mrs.end());
    const double hi = *std::min_element(positive_mrs.begin(), positive_mrs.end());
    if (lo < hi) out.max_perfect_interval = std::make_pair(lo, hi);

    const int steps = static_cast<int>(std::llround(1.0 / grid_step));
    for (int k = 0; k <= steps; ++k) {
        const double t = std::min(1.0, k * grid_step);
        out.thresholds.push_back(t);
        out.robustness.push_back(robustness_at(positive_mrs, t));
        out.uniqueness.push_back(uniqueness_at(negative_mrs, t));
    }
    return out;
}

// ---- verification ------------------------------------------------------------------------

std::string to_string(Verdict v) { return v == Verdict::positive ? "positive" : "negative"; }

VerifyResult verify(const Predictor& suspect, const QuerySet& query_set, double threshold,
                    const std::string& model_id) {
    if (!(threshold >= 0 && threshold <= 1)) throw std::invalid_argument("verify: threshold must be in [0, 1]");
    if (query_set.size() == 0) throw std::invalid_argument("verify: empty query set");
    std::vector<int> predictions;
    try {
        predictions = suspect(query_set.images());
    } catch (const TransportError&) {
        throw;
    } catch (const std::exception& e) {
        throw TransportError(std::string("suspect model unreachable: ") + e.what());
    }
    if (predictions.size() != static_cast<std::size_t>(query_set.size())) {
        throw TransportError("suspect returned " + std::to_string(predictions.size()) + " labels for " +
                             std::to_string(query_set.size()) + " queries");
    }
    VerifyResult r;
    r.match = matching_rate(predictions, query_set, model_id);
    r.verdict = r.match.matching_rate >= threshold ? Verdict::positive : Verdict::negative;
    return r;
}

// ---- zoo evaluation -----------------------------------------------------------------------

std::vector<MirrorPair> mirror_pairs(const ZooManifest& manifest) {
    std::vector<MirrorPair> out;
    std::set<std::string> used;
    for (const auto& p : manifest.records) {
        if (p.role != Role::positive) continue;
        const ModelRecord* match = nullptr;
        for (const auto& n : manifest.records) {
            if (n.role == Role::mirror_negative && !used.count(n.model_id) && n.architecture == p.architecture &&
                n.lineage == p.lineage) {
                match = &n;
                break;
            }
        }
        if (!match) throw std::invalid_argument("no mirror negative for " + p.model_id);
        used.insert(match->model_id);
        MirrorPair pair{p.model_id, match->model_id, "source", p.architecture};
        if (p.lineage) {
            pair.group = to_string(p.lineage->kind);
            const bool extraction = p.lineage->kind == AttackKind::distill || p.lineage->kind == AttackKind::knockoff;
            pair.parameter = extraction ? p.architecture : p.lineage->parameter_label();
        }
        out.push_back(pair);
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json models_json = nlohmann::json::array();
    for (const auto& m : models) {
        nlohmann::json j{{"model_id", m.record.model_id},
                         {"role", to_string(m.record.role)},
                         {"architecture", m.record.architecture},
                         {"trained", m.record.trained},
                         {"test_accuracy", m.record.test_accuracy}};
        if (m.match) {
            j["matching_rate"] = m.match->matching_rate;
            j["n_queries"] = m.match->n_queries;
        }
        if (!m.error.empty()) j["error"] = m.error;
        models_json.push_back(j);
    }
    nlohmann::json margin_json = nlohmann::json::array();
    std::map<std::string, nlohmann::json> groups;
    for (const auto& e : margins) {
        nlohmann::json j{{"positive_id", e.pair.positive_id},
                         {"mirror_id", e.pair.mirror_id},
                         {"group", e.pair.group},
                         {"parameter", e.pair.parameter},
                         {"positive_mr", e.positive_mr},
                         {"mirror_mr", e.mirror_mr},
                         {"margin", e.margin},
                         {"held_out", e.held_out}};
        margin_json.push_back(j);
        groups[e.pair.group].push_back({{"parameter", e.pair.parameter}, {"margin", e.margin}});
    }
    return {
        {"models", models_json},
        {"aruc", {{"held_out", held_out.to_json()},
                  {"held_out_vs_all_negatives", held_out_vs_all_negatives.to_json(false)},
                  {"all_models", all_models.to_json(false)},
                  {"trained_only", trained_only.to_json(false)}}},
        {"margins", margin_json},
        {"margin_groups", groups},
        {"median_margin_held_out", median_margin_held_out},
        {"median_margin_all", median_margin_all},
        {"errors", errors},
        {"query_config_hash", query_config_hash},
        {"query_content_hash", query_content_hash},
    };
}

EvalReport evaluate_zoo(const ZooManifest& manifest, const std::filesystem::path& zoo_dir,
                        const QuerySet& query_set, double grid_step) {
    EvalReport report;
    report.query_config_hash = query_set.config_hash;
    if (query_set.provenance.is_object()) {
        report.query_content_hash = query_set.provenance.value("content_hash", std::string());
    }
    const Tensor images = query_set.images();
    std::map<std::string, double> mr;
    for (const auto& rec : manifest.records) {
        ModelEvaluation ev;
        ev.record = rec;
        try {
            Classifier model = load_zoo_model(zoo_dir, rec);
            ev.match = matching_rate(model.predict(images), query_set, rec.model_id);
            mr[rec.model_id] = ev.match->matching_rate;
        } catch (const std::exception& e) {
            ev.error = e.what();
            report.errors.push_back(rec.model_id + ": " + e.what());
        }
        report.models.push_back(std::move(ev));
    }

    std::vector<double> pos_held, neg_held, pos_all, neg_all, pos_trained, neg_trained;
    for (const auto& ev : report.models) {
        if (!ev.match) continue;
        const double m = ev.match->matching_rate;
        const bool positive = ev.record.role == Role::positive;
        (positive ? pos_all : neg_all).push_back(m);
        if (ev.record.trained) {
            (positive ? pos_trained : neg_trained).push_back(m);
        } else {
            (positive ? pos_held : neg_held).push_back(m);
        }
    }
    auto safe_aruc = [&](const std::vector<double>& p, const std::vector<double>& n, const char* what) {
        if (p.empty() || n.empty()) {
            report.errors.push_back(std::string("aruc (") + what + "): no models on one side");
            return ArucResult{};
        }
        return aruc(p, n, grid_step);
    };
    report.held_out = safe_aruc(pos_held, neg_held, "held_out");
    report.held_out_vs_all_negatives = safe_aruc(pos_held, neg_all, "held_out_vs_all_negatives");
    report.all_models = safe_aruc(pos_all, neg_all, "all_models");
    report.trained_only = safe_aruc(pos_trained, neg_trained, "trained_only");

    try {
        std::vector<double> held, all;
        for (const auto& pair : mirror_pairs(manifest)) {
            if (!mr.count(pair.positive_id) || !mr.count(pair.mirror_id)) continue;
            MarginEntry e;
            e.pair = pair;
            e.positive_mr = mr.at(pair.positive_id);
            e.mirror_mr = mr.at(pair.mirror_id);
            e.margin = matching_rate_margin(e.positive_mr, e.mirror_mr);
            e.held_out = !manifest.find(pair.positive_id)->trained && !manifest.find(pair.mirror_id)->trained;
            all.push_back(e.margin);
            if (e.held_out) held.push_back(e.margin);
            report.margins.push_back(e);
        }
        report.median_margin_held_out = median(held);
        report.median_margin_all = median(all);
    } catch (const std::exception& e) {
        report.errors.push_back(std::string("margins: ") + e.what());
    }
    return report;
}

std::vector<std::filesystem::path> write_report_plots(const EvalReport& report, const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> written;
    if (!report.held_out.thresholds.empty()) {
        const auto path = dir / "aruc.svg";
        char title[96];
        std::snprintf(title, sizeof title, "Robustness and uniqueness (held-out), ARUC = %.4f", report.held_out.aruc);
        plot::write_svg(path, plot::line_chart(title, "threshold", report.held_out.thresholds,
                                               {{"robustness", report.held_out.robustness},
                                                {"uniqueness", report.held_out.uniqueness}}));
        written.push_back(path);
    }
    std::map<std::string, std::pair<std::vector<std::string>, std::vector<double>>> groups;
    for (const auto& e : report.margins) {
        groups[e.pair.group].first.push_back(e.pair.parameter);
        groups[e.pair.group].second.push_back(e.margin);
    }
    for (const auto& [group, data] : groups) {
        const auto path = dir / ("margins_" + group + ".svg");
        plot::write_svg(path, plot::bar_chart("Matching-rate margin: " + group, data.first, data.second));
        written.push_back(path);
    }
    return written;
}

}  // namespace nf

#pragma once

// Matching rate, mirror margins, robustness/uniqueness curves with their exact
// intersection area, black-box verification and whole-zoo evaluation.

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "naturalfinger/fingerprint.hpp"
#include "naturalfinger/zoo.hpp"

namespace nf {

struct MatchResult {
    std::string model_id;
    double matching_rate = 0.0;
    int n_queries = 0;
    std::vector<unsigned char> per_sample_hits;

    nlohmann::json to_json() const;
};

/// Fraction of predictions equal to the positive labels.
MatchResult matching_rate(std::span<const int> predictions, std::span<const int> y_positive,
                          const std::string& model_id = {});
MatchResult matching_rate(std::span<const int> predictions, const QuerySet& query_set,
                          const std::string& model_id = {});

/// mr_positive - mr_mirror_negative; both must lie in [0, 1].
double matching_rate_margin(double mr_positive, double mr_mirror_negative);

struct ArucResult {
    std::vector<double> thresholds;
    std::vector<double> robustness;
    std::vector<double> uniqueness;
    double aruc = 0.0;
    /// (lo, hi]: thresholds where both curves equal 1.
    std::optional<std::pair<double, double>> max_perfect_interval;

    nlohmann::json to_json(bool with_curves = true) const;
};

/// Share of positives with mr >= t.
double robustness_at(std::span<const double> positive_mrs, double t);
/// Share of negatives with mr < t.
double uniqueness_at(std::span<const double> negative_mrs, double t);

/// Area under min(robustness, uniqueness) over t in [0, 1], summed exactly over
/// the breakpoints. The grid only samples the curves for plotting.
ArucResult aruc(std::span<const double> positive_mrs, std::span<const double> negative_mrs,
                double grid_step = 1e-3);

// ---- verification ----------------------------------------------------------------------

enum class Verdict { positive, negative };
std::string to_string(Verdict v);

/// The suspect could not be queried or answered malformed output.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Black-box label oracle: images in [0, 1] to predicted classes.
using Predictor = std::function<std::vector<int>(const Tensor&)>;

struct VerifyResult {
    Verdict verdict = Verdict::negative;
    MatchResult match;
};

/// Positive iff the matching rate on the stored 8-bit images is >= threshold.
VerifyResult verify(const Predictor& suspect, const QuerySet& query_set, double threshold,
                    const std::string& model_id = {});

// ---- zoo evaluation ----------------------------------------------------------------------

struct MirrorPair {
    std::string positive_id;
    std::string mirror_id;
    std::string group;      ///< attack kind, or "source"
    std::string parameter;  ///< grid value, fine-tune mode or student architecture
};

/// Pairs every positive with the mirror negative of identical architecture and
/// lineage. Throws std::invalid_argument on an unmatched positive.
std::vector<MirrorPair> mirror_pairs(const ZooManifest& manifest);

struct ModelEvaluation {
    ModelRecord record;
    std::optional<MatchResult> match;
    std::string error;
};

struct MarginEntry {
    MirrorPair pair;
    double positive_mr = 0.0;
    double mirror_mr = 0.0;
    double margin = 0.0;
    /// Neither side was used to generate the fingerprint.
    bool held_out = true;
};

struct EvalReport {
    std::vector<ModelEvaluation> models;
    /// Held-out positives vs held-out negatives: the headline number.
    ArucResult held_out;
    /// Held-out positives vs every negative.
    ArucResult held_out_vs_all_negatives;
    /// Every positive vs every negative.
    ArucResult all_models;
    /// Trained positives vs trained negatives.
    ArucResult trained_only;
    std::vector<MarginEntry> margins;
    double median_margin_held_out = 0.0;
    double median_margin_all = 0.0;
    std::vector<std::string> errors;
    std::string query_config_hash;
    std::string query_content_hash;

    nlohmann::json to_json() const;
};

double median(std::vector<double> values);

/// Evaluates every manifest model on the query set. Load failures become
/// per-model error entries.
EvalReport evaluate_zoo(const ZooManifest& manifest, const std::filesystem::path& zoo_dir,
                        const QuerySet& query_set, double grid_step = 1e-3);

/// aruc.svg plus one margins_<group>.svg per attack family present.
std::vector<std::filesystem::path> write_report_plots(const EvalReport& report,
                                                      const std::filesystem::path& dir);

}  // namespace nf

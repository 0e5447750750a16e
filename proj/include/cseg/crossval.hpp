#pragma once

// k-fold cross-validation over a phantom corpus: per fold, train the
// cascade (and optionally the regression-forest localizer) on the training
// cases, then evaluate every test case. Rows and summaries are
// deterministic for a fixed seed.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cseg/datagen.hpp"
#include "cseg/pipeline.hpp"
#include "cseg/regforest.hpp"

namespace cseg {

struct CrossvalConfig {
    int folds = 4;
    std::uint64_t seed = 7;
    PipelineConfig pipeline;
    LocalizerConfig baseline;
    bool run_baseline = true;
    bool pooling_ablation = true;  // pool:<mode> rows for every pooling mode

    void validate() const;
};

// Variants: "localization" (stage-1 box), "meanmax", "hnn-rf", "oracle"
// (optimal superpixel assignment), "baseline" (regression-forest box) and
// "pool:<mode>". Cells that are undefined for a variant or a case are empty.
struct CaseRow {
    std::string case_id;
    std::string variant;
    std::optional<double> dsc;
    std::optional<double> jaccard;
    std::optional<double> hausdorff_mm;
    std::optional<double> avgdist_mm;
    std::optional<double> recall;
    std::optional<double> volume_reduction;
};

struct CaseError {
    std::string case_id;
    std::string stage;
    std::string code;
    std::string message;
};

struct FoldInfo {
    std::vector<std::string> train;
    std::vector<std::string> test;
    double rf_threshold = 0.0;
    std::map<std::string, double> pooled_threshold;
    std::vector<std::string> warnings;
};

struct CrossvalReport {
    std::vector<CaseRow> rows;  // sorted by (case_id, variant)
    std::vector<CaseError> errors;
    std::vector<FoldInfo> folds;

    std::vector<const CaseRow*> variant_rows(const std::string& variant) const;
};

// Throws InvalidArgument when the corpus has fewer cases than folds or
// duplicate ids; failures inside a fold become error records.
CrossvalReport crossval_run(const std::vector<Case>& corpus, const CrossvalConfig& cfg, const Logger& log = {});

inline const std::vector<std::string> kCsvColumns{"case_id", "variant",    "dsc",
                                                  "jaccard", "hausdorff_mm", "avgdist_mm",
                                                  "recall",  "volume_reduction"};

// Header plus one row per (case, variant); numbers as %.6f.
std::string report_csv(const CrossvalReport& report);

// Per-variant summaries of every column, Wilcoxon p-values for meanmax
// against hnn-rf, recall histograms, worst-case Hausdorff and errors.
nlohmann::json report_summary(const CrossvalReport& report);

// Recall bins [0,0.6), [0.6,0.8), [0.8,0.9), [0.9,0.95), [0.95,1), {1}.
std::array<int, 6> recall_histogram(const std::vector<double>& recalls);

}  // namespace cseg
